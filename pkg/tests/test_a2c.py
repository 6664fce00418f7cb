import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoi_lab import nn
from aoi_lab.a2c import (
    Adam, Episode, LagrangeState, TrainerConfig, actor_step, clip_gradients,
    compute_returns_and_advantages, cosine_lr, critic_gradients, critic_step, lagrange_step,
)
from aoi_lab.errors import ParameterError


# -- returns and advantages -----------------------------------------------------------

def test_advantage_examples():
    ret, adv = compute_returns_and_advantages([1.0, 1.0], 0.99, values=[0.5, 0.0])
    assert adv[0] == pytest.approx(1.49)
    ret, adv = compute_returns_and_advantages([3.0, -1.0, 2.0], 0.0, values=[1.0, 1.0, 1.0])
    assert adv.tolist() == [2.0, -2.0, 1.0]
    _, adv = compute_returns_and_advantages([0.0] * 4, 0.9)
    assert not adv.any()


def test_reward_to_go_is_position_independent():
    r = [0.5, -1.0, 2.0, 0.25]
    ret, _ = compute_returns_and_advantages(r, 0.9)
    for t in range(4):
        assert ret[t] == pytest.approx(sum(0.9 ** (k - t) * r[k] for k in range(t, 4)))
    ret_b, _ = compute_returns_and_advantages(r, 0.9, bootstrap=3.0)
    assert ret_b[-1] == pytest.approx(0.25 + 0.9 * 3.0)


# -- a toy two-action bandit -------------------------------------------------------------

def _bandit(advantages, actions, entropy=True, logits=(0.3, -0.2)):
    store = nn.ParamStore()
    store.add("z", np.array(logits))
    store.add("value.w", np.array([0.0]))
    ep = Episode()
    for a, adv in zip(actions, advantages):
        tape = nn.Tape(store)
        lp = nn.masked_log_softmax(tape.param("z"), [True, True])
        ent = -nn.sum_(nn.exp(lp) * lp) if entropy else None
        v = nn.reshape(tape.param("value.w"), ())
        ep.add(nn.reshape(nn.take(lp, [a]), ()), ent, v, 0.0)
    return store, ep


def test_zero_advantage_leaves_parameters_bit_identical():
    store, ep = _bandit([0.0, 0.0], [0, 1])
    before = store["z"].copy()
    opt = Adam(store, ["z"])
    ep_adv = Episode(ep.steps)
    # rewards 0 and values 0 give zero advantages
    actor_step(ep_adv, opt, 1e-2, entropy_coef=0.0, gamma=0.99)
    assert store["z"].tobytes() == before.tobytes()


def test_single_action_gives_zero_gradient():
    store = nn.ParamStore()
    store.add("z", np.array([0.7, 0.1]))
    tape = nn.Tape(store)
    lp = nn.masked_log_softmax(tape.param("z"), [True, False])
    nn.backward(nn.reshape(nn.take(lp, [0]), ()) * 5.0, tape)
    assert not store.grads["z"].any()


@pytest.mark.parametrize("action", [0, 1])
def test_positive_advantage_raises_probability(action):
    store, ep = _bandit([1.0], [action], entropy=False)
    ep.steps[0].reward = 1.0
    p_before = np.exp(store["z"] - np.logaddexp(*store["z"]))[action]
    actor_step(ep, Adam(store, ["z"]), 1e-3, entropy_coef=0.0, gamma=0.99)
    p_after = np.exp(store["z"] - np.logaddexp(*store["z"]))[action]
    assert p_after >= p_before


def test_clip_bounds_norm():
    store = nn.ParamStore()
    store.add("a", np.zeros(3))
    store.add("b", np.zeros(2))
    store.grads["a"][:] = [3.0, 4.0, 0.0]
    store.grads["b"][:] = [12.0, 0.0]
    norm, finite = clip_gradients(store, ["a", "b"], 0.5)
    assert finite and norm == pytest.approx(13.0)
    assert store.grad_norm(["a", "b"]) <= 0.5 + 1e-12
    store.grads["a"][0] = np.nan
    assert clip_gradients(store, ["a", "b"], 0.5)[1] is False


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_skips_step():
    store, ep = _bandit([1.0], [0], entropy=False)
    ep.steps[0].reward = math.inf
    before = store["z"].copy()
    stats = actor_step(ep, Adam(store, ["z"]), 1e-2, 0.0, 0.99)
    assert stats.skipped and np.array_equal(store["z"], before)


# -- critic ---------------------------------------------------------------------------

def _linear_critic(phi, w0):
    store = nn.ParamStore()
    store.add("value.w", np.array(w0, dtype=float))
    tape = nn.Tape(store)
    v = nn.reshape(nn.dense(nn.reshape(tape.param("value.w"), (1, -1)), tape.const(phi)), ())
    return store, v


def test_critic_gradient_closed_form():
    phi = np.array([0.5, -1.0, 2.0])
    store, v = _linear_critic(phi, [0.1, 0.2, 0.3])
    ep = Episode()
    ep.add(None, None, v, 0.0)
    R = 4.0
    critic_gradients(ep, [R])
    V = float(v.value)
    assert np.allclose(store.grads["value.w"], 2.0 * (V - R) * phi)
    # a plain gradient step of size lr moves V by 2 lr (R - V) ||phi||^2
    lr = 1e-3
    w1 = store["value.w"] - lr * store.grads["value.w"]
    assert w1 @ phi - V == pytest.approx(2 * lr * (R - V) * (phi @ phi))


def test_critic_zero_gradient_at_target():
    store, v = _linear_critic(np.array([1.0, 1.0]), [1.0, 2.0])
    ep = Episode()
    ep.add(None, None, v, 3.0)
    critic_gradients(ep, [3.0])
    assert not store.grads["value.w"].any()


def test_critic_converges_on_fixed_episode():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((5, 3))
    rewards = [1.0, -0.5, 2.0, 0.0, 1.5]
    store = nn.ParamStore()
    store.add("value.w", np.zeros(3))
    opt = Adam(store, ["value.w"])
    errors = []
    for _ in range(300):
        ep = Episode()
        for f, r in zip(feats, rewards):
            tape = nn.Tape(store)
            v = nn.reshape(nn.dense(nn.reshape(tape.param("value.w"), (1, -1)), tape.const(f)), ())
            ep.add(None, None, v, r)
        stats = critic_step(ep, opt, 1e-2, gamma=0.9)
        errors.append(stats.loss)
    assert errors[-1] < errors[0]
    assert np.all(np.diff(errors[:50]) < 0)


# -- schedule --------------------------------------------------------------------------

def test_cosine_examples():
    assert cosine_lr(0, 2, 10, 0.0, 1.0) == 1.0
    assert cosine_lr(1, 2, 10, 0.1, 1.0) == pytest.approx(0.1 + 0.45)
    # second period covers steps 2..21 and restarts at the base rate
    assert cosine_lr(2, 2, 10, 0.0, 1.0) == 1.0
    assert cosine_lr(12, 2, 10, 0.0, 1.0) == pytest.approx(0.5)
    assert cosine_lr(22, 2, 10, 0.0, 1.0) == 1.0
    with pytest.raises(ParameterError):
        cosine_lr(0, 0, 10, 0.0, 1.0)


@given(st.integers(0, 10_000), st.integers(1, 20), st.integers(1, 10),
       st.floats(0, 1e-3), st.floats(1e-3, 1.0))
def test_cosine_within_bounds(step, T0, mult, lo, hi):
    assert lo <= cosine_lr(step, T0, mult, lo, hi) <= hi


# -- multiplier -------------------------------------------------------------------------

def test_lagrange_examples():
    assert lagrange_step(LagrangeState(0.05), 6.0, 4.0, 1e-5).lam == pytest.approx(0.05002)
    assert lagrange_step(LagrangeState(0.0), 0.0, 5.0, 1.0).lam == 0.0
    assert lagrange_step(LagrangeState(0.3), 4.0, 4.0, 1.0).lam == 0.3
    assert lagrange_step(LagrangeState(0.3), 9.0, 4.0, 1.0, mode="literal").lam == 5.0
    with pytest.raises(ParameterError):
        LagrangeState(-1.0)


@given(st.lists(st.floats(0, 50), min_size=1, max_size=40), st.floats(0, 1))
def test_lagrange_nonnegative(energies, lr):
    ls = LagrangeState(0.05)
    for e in energies:
        ls = lagrange_step(ls, e, 10.0, lr)
        assert ls.lam >= 0


def test_trainer_config_validation():
    TrainerConfig()
    with pytest.raises(ParameterError):
        TrainerConfig(gamma_sched=1.5)
    with pytest.raises(ParameterError):
        TrainerConfig(grad_clip=0.0)
