import math

import numpy as np
import pytest

from aoi_lab import nn
from aoi_lab.errors import ShapeError, UsageError
from aoi_lab.graph import NetworkGraph, assign_roles, generate_er
from aoi_lab.nets import (
    NetConfig, SchedulerNet, TreeGenNet, scheduler_forward, state_encoding, treegen_forward,
    zero_params,
)
from aoi_lab.sched_mdp import SchedState, build_state
from aoi_lab.sim import init_state
from aoi_lab.tree_mdp import TreeEpisodeContext, attach, init_partial

SMALL = NetConfig(hidden=4, heads=2, layers=2)


def _state(g, aoi=(10.0, 5.0)):
    s = init_state(g)
    s.aoi[g.destinations] = aoi[:len(g.destinations)] if len(aoi) >= len(g.destinations) \
        else np.arange(1, len(g.destinations) + 1)
    return build_state(s)


def _lrelu(z, slope=0.2):
    return np.where(z >= 0, z, slope * z)


def _reference_scheduler(store, cfg, g, feats):
    """Straight-line numpy evaluation of the scheduler for cross-checking."""
    x = feats.copy()
    x[:, 4:6] /= cfg.aoi_scale
    n = g.node_count
    H = np.array([store["in.W"] @ x[i] for i in range(n)])
    nb = [[i] + g.neighbors(i) for i in range(n)]

    def e(i, j):
        return np.zeros(1) if i == j else np.array([g.cost(i, j)])
    for l in range(cfg.layers):
        heads = []
        for k in range(cfg.heads):
            W1, W2 = store[f"gat{l}.W1"][k], store[f"gat{l}.W2"][k]
            W3, a = store[f"gat{l}.W3"][k], store[f"gat{l}.a"][k]
            phi = {(i, j): a @ _lrelu(W1 @ (H[i] + H[j]) + W2 @ e(i, j))
                   for i in range(n) for j in nb[i]}
            D = [sum(math.exp(phi[i, j]) for j in nb[i]) for i in range(n)]
            sn = max(np.linalg.svd(W1, compute_uv=False)[0], 1e-12)
            out = np.zeros_like(H)
            for i in range(n):
                for j in nb[i]:
                    out[i] += math.exp(phi[i, j]) / max(D[i], D[j]) * (W1 @ H[j] + W3 @ x[j])
            heads.append(out / sn)
        H = np.mean(heads, axis=0)
    pooled = H.mean(axis=0)
    mus, sigmas = [], []
    for u in g.destinations:
        z = np.concatenate([H[u], pooled])
        mus.append((store["mu.W1"] @ _lrelu(store["mu.W2"] @ z))[0])
        raw = (store["sigma.W3"] @ _lrelu(store["sigma.W4"] @ z))[0]
        sigmas.append(math.exp(min(max(raw, -5.0), 2.0)))
    value = (store["value.W5"] @ _lrelu(store["value.W6"] @ pooled))[0]
    return np.array(mus), np.array(sigmas), value


# -- scheduler ---------------------------------------------------------------------

def test_zero_parameters_scheduler(g4):
    net = SchedulerNet(SMALL, np.random.default_rng(0))
    zero_params(net.store)
    params, v, _ = scheduler_forward(net, _state(g4))
    assert params == [(0.0, 1.0), (0.0, 1.0)] and v == 0.0


def test_scheduler_matches_reference(g4):
    net = SchedulerNet(SMALL, np.random.default_rng(2024))
    s = _state(g4)
    params, v, _ = scheduler_forward(net, s)
    mu, sig, val = _reference_scheduler(net.store, SMALL, g4, s.features)
    assert np.allclose([p[0] for p in params], mu, atol=1e-12)
    assert np.allclose([p[1] for p in params], sig, atol=1e-12)
    assert v == pytest.approx(val, abs=1e-12)


def test_scheduler_reference_random_graphs():
    for seed in range(3):
        g = assign_roles(generate_er(8, 0.4, seed=seed), 0.3, seed=seed)
        net = SchedulerNet(SMALL, np.random.default_rng(seed))
        s = _state(g)
        params, v, _ = scheduler_forward(net, s)
        mu, sig, val = _reference_scheduler(net.store, SMALL, g, s.features)
        assert np.allclose([p[0] for p in params], mu, atol=1e-12)
        assert np.allclose([p[1] for p in params], sig, atol=1e-12)


def _permute(g, perm):
    """Relabel node i as perm[i]."""
    n = g.node_count
    roles = [None] * n
    w = np.zeros(n)
    for i in range(n):
        roles[perm[i]] = g.roles[i]
        w[perm[i]] = g.weights[i]
    edges = {(min(perm[u], perm[v]), max(perm[u], perm[v])): c for (u, v), c in g.edges.items()}
    return NetworkGraph(roles, w, edges)


def test_scheduler_permutation_equivariance():
    g = assign_roles(generate_er(9, 0.4, seed=1), 0.3, seed=2)
    perm = np.random.default_rng(3).permutation(9)
    net = SchedulerNet(SMALL, np.random.default_rng(4))
    s = init_state(g)
    s.aoi[g.destinations] = [3.0, 7.0]
    out = net.forward(build_state(s))
    gp = _permute(g, perm)
    sp = init_state(gp)
    for u, a in zip(g.destinations, [3.0, 7.0]):
        sp.aoi[perm[u]] = a
    outp = net.forward(build_state(sp))
    order = {d: i for i, d in enumerate(outp.dests)}
    idx = [order[perm[u]] for u in out.dests]
    assert np.allclose(out.mu.value, outp.mu.value[idx], atol=1e-12)
    assert np.allclose(out.sigma.value, outp.sigma.value[idx], atol=1e-12)
    assert float(out.value.value) == pytest.approx(float(outp.value.value), abs=1e-12)


def test_scheduler_deterministic(g4):
    net = SchedulerNet(SMALL, np.random.default_rng(0))
    a = scheduler_forward(net, _state(g4))
    b = scheduler_forward(net, _state(g4))
    assert a[0] == b[0] and a[1] == b[1]


def test_sigma_within_clamp(g4):
    net = SchedulerNet(SMALL, np.random.default_rng(0))
    for scale in (1e-3, 1.0, 50.0, -50.0):
        for name in ("sigma.W3",):
            net.store[name][...] = scale
        sig = net.forward(_state(g4)).sigma.value
        assert np.all(sig >= math.exp(-5)) and np.all(sig <= math.exp(2))


def test_scheduler_rejects_bad_width(g4):
    s = _state(g4)
    bad = SchedState(s.graph, s.adjacency, np.zeros((4, 5)), s.candidates)
    with pytest.raises(ShapeError):
        SchedulerNet(SMALL).forward(bad)


def test_critic_is_isolated_from_trunk(g4):
    net = SchedulerNet(SMALL, np.random.default_rng(0))
    out = net.forward(_state(g4))
    nn.backward(out.value, out.tape)
    for name in net.actor_names:
        assert not net.store.grads[name].any()
    assert any(net.store.grads[n].any() for n in net.critic_names)


def test_scheduler_gradcheck(g4):
    g = assign_roles(generate_er(7, 0.5, seed=5), 0.3, seed=5)
    net = SchedulerNet(SMALL, np.random.default_rng(1))
    s = _state(g)
    score = np.array([0.3, -0.4])

    def policy(tape):
        out = net.forward(s, tape)
        return nn.sum_(nn.gaussian_log_density(tape.const(score), out.mu, out.sigma))
    rep = nn.finite_diff_check(policy, net.store, tolerance=1e-4)
    assert rep.passed and rep.checked > 100, rep.summary()
    # the value head sees a detached embedding, so only its own weights are checked
    rep = nn.finite_diff_check(lambda t: net.forward(s, t).value, net.store,
                               names=net.critic_names, tolerance=1e-4)
    assert rep.passed, rep.summary()


# -- tree generator ----------------------------------------------------------------------

def _ctx(g, sel=(2, 3)):
    return TreeEpisodeContext.for_graph(g, sel, [0, 0, 10.0, 5.0], 0.1, 3.0)


def test_state_encoding_examples(g4):
    ctx = _ctx(g4, sel=(2,))
    x, E, idx = state_encoding(init_partial(g4), ctx)
    assert x[:, 0].tolist() == [1, 0, 0, 0]
    assert x[:, 6].tolist() == [0, 0, 1, 0]
    p = attach(init_partial(g4), 1)
    x, E, idx = state_encoding(p, ctx)
    assert x[:, 0].tolist() == [1, 1, 0, 0]
    pairs = list(zip(idx.I.tolist(), idx.J.tolist()))
    flagged = {pr for pr, f in zip(pairs, E[:, 1]) if f == 1.0}
    assert flagged == {(0, 1), (1, 0)}
    assert x[2].tolist() == [0, 0, 0, 1, 0.6, 10.0, 1]


def test_treegen_single_action_and_zero_params(g4):
    net = TreeGenNet(SMALL, np.random.default_rng(0))
    p = attach(attach(attach(init_partial(g4), 1), 2), 3)
    with pytest.raises(UsageError):
        net.forward(p, _ctx(g4))
    cut = NetworkGraph(g4.roles, g4.weights, {(0, 1): 1.0, (1, 3): 1.0})
    logp, _, _ = treegen_forward(net, init_partial(cut), _ctx(cut, sel=(3,)))
    assert logp.tolist() == [0.0]
    zero_params(net.store)
    logp, v, _ = treegen_forward(net, attach(init_partial(g4), 1), _ctx(g4))
    assert np.allclose(logp, math.log(0.5)) and v == 0.0


def test_treegen_probabilities_normalised():
    for seed in range(10):
        g = assign_roles(generate_er(10, 0.4, seed=seed), 0.3, seed=seed)
        net = TreeGenNet(SMALL, np.random.default_rng(seed))
        p = init_partial(g)
        if not g.neighbors(g.source):
            continue
        ctx = TreeEpisodeContext.for_graph(g, [], np.arange(10.0), 0.1, 3.0)
        out = net.forward(p, ctx)
        assert abs(out.probs().sum() - 1.0) < 1e-12
        off = np.setdiff1d(np.arange(10), out.actions)
        assert np.all(out.log_probs.value[off] == -np.inf)


def test_treegen_gradcheck(g4):
    net = TreeGenNet(SMALL, np.random.default_rng(3))
    p = attach(init_partial(g4), 1)
    ctx = _ctx(g4)

    def policy(tape):
        return nn.reshape(nn.take(net.forward(p, ctx, tape).log_probs, [3], axis=0), ())
    rep = nn.finite_diff_check(policy, net.store, tolerance=1e-4)
    assert rep.passed and rep.checked > 100, rep.summary()
    rep = nn.finite_diff_check(lambda t: net.forward(p, ctx, t).value, net.store,
                               names=net.critic_names, tolerance=1e-4)
    assert rep.passed, rep.summary()


def test_mlp_variant_has_no_mixing():
    cfg = NetConfig(hidden=4, heads=2, layers=2, attend=False)
    g = assign_roles(generate_er(8, 0.5, seed=0), 0.3, seed=0)
    net = SchedulerNet(cfg, np.random.default_rng(0))
    assert not any("W2" in n and n.startswith("gat") for n in net.store.names())
    s = init_state(g)
    s.aoi[g.destinations] = [2.0, 9.0]
    base = net.forward(build_state(s))
    # removing every edge leaves per-node embeddings and hence outputs unchanged
    s2 = init_state(g.with_edges({}))
    s2.aoi[g.destinations] = [2.0, 9.0]
    alone = net.forward(build_state(s2))
    assert np.allclose(base.mu.value, alone.mu.value, atol=1e-12)
    zero_params(net.store)
    tnet = TreeGenNet(cfg, np.random.default_rng(0))
    zero_params(tnet.store)
    ctx = TreeEpisodeContext.for_graph(g, [], np.zeros(8), 0.1, 3.0)
    out = tnet.forward(init_partial(g), ctx)
    assert np.allclose(out.probs(), 1.0 / len(out.actions))
