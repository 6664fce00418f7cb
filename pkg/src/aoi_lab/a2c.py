"""Advantage actor-critic updates, the adaptive optimiser, the warm-restart
cosine schedule and the projected dual update of the energy multiplier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .errors import ParameterError


@dataclass
class TrainerConfig:
    gamma_sched: float = 0.99
    gamma_tree: float = 0.99
    sched_actor_lr: float = 2e-6
    sched_critic_lr: float = 8e-7
    tree_actor_lr: float = 1e-6
    tree_critic_lr: float = 4e-7
    entropy_coef: float = 0.01
    grad_clip: float = 0.5
    T0: int = 2
    T_mult: int = 10
    eta_min: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    centered: bool = True
    weight_decay: float = 0.0
    lambda_init: float = 0.05
    lambda_lr: float = 1e-5
    lambda_interval: int = 100
    lagrange_mode: str = "dual"      # "dual" or "literal"
    sched_interval: int = 20
    tree_interval: int = 1

    def __post_init__(self):
        for name in ("sched_actor_lr", "sched_critic_lr", "tree_actor_lr", "tree_critic_lr",
                     "lambda_lr", "grad_clip", "eta_min"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("T0", "T_mult", "lambda_interval", "sched_interval", "tree_interval"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        for name in ("gamma_sched", "gamma_tree"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1]")
        if self.lagrange_mode not in ("dual", "literal"):
            raise ParameterError(f"unknown lagrange_mode {self.lagrange_mode!r}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# --------------------------------------------------------------------------
# episodes and returns

@dataclass
class StepRecord:
    log_prob: nn.Tensor | None
    entropy: nn.Tensor | None
    value: nn.Tensor | None
    reward: float


@dataclass
class Episode:
    steps: list[StepRecord] = field(default_factory=list)
    bootstrap: float = 0.0       # value of the state after the last step

    def add(self, log_prob, entropy, value, reward):
        self.steps.append(StepRecord(log_prob, entropy, value, float(reward)))

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def values(self) -> np.ndarray:
        return np.array([float(s.value.value) for s in self.steps])

    def __len__(self):
        return len(self.steps)


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def compute_returns_and_advantages(ep, gamma: float, values=None, bootstrap=None):
    """Reward-to-go ``sum_k gamma^(k-t) r_k`` and advantage ``G_t - V(s_t)``.

    ``ep`` is an :class:`Episode` or a plain reward sequence (then ``values``
    must be given).
    """
    if isinstance(ep, Episode):
        rewards = ep.rewards
        values = ep.values if values is None else np.asarray(values, dtype=np.float64)
        bootstrap = ep.bootstrap if bootstrap is None else bootstrap
    else:
        rewards = list(ep)
        values = np.zeros(len(rewards)) if values is None else np.asarray(values, dtype=np.float64)
    returns = discounted_returns(rewards, gamma, 0.0 if bootstrap is None else bootstrap)
    return returns, returns - values


# --------------------------------------------------------------------------
# optimiser and schedule

class Adam:
    """Adam with decoupled weight decay. With ``centered`` the denominator
    uses the running variance ``E[g^2] - E[g]^2`` (both averages at rate
    beta2) instead of the raw second moment."""

    def __init__(self, store: nn.ParamStore, names, beta1=0.9, beta2=0.999, eps=1e-8,
                 centered=True, weight_decay=0.0):
        self.store = store
        self.names = list(names)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.centered, self.weight_decay = centered, weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(store[n]) for n in self.names}
        self.v = {n: np.zeros_like(store[n]) for n in self.names}
        self.g = {n: np.zeros_like(store[n]) for n in self.names}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for n in self.names:
            grad = self.store.grads[n]
            p = self.store.params[n]
            self.m[n] = b1 * self.m[n] + (1 - b1) * grad
            self.v[n] = b2 * self.v[n] + (1 - b2) * grad * grad
            second = self.v[n]
            if self.centered:
                self.g[n] = b2 * self.g[n] + (1 - b2) * grad
                second = np.maximum(second - self.g[n] ** 2, 0.0)
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (self.m[n] / c1) / (np.sqrt(second / c2) + self.eps)
        self.store.version += 1

    def state_arrays(self, prefix: str) -> dict:
        out = {}
        for n in self.names:
            out[f"{prefix}.m/{n}"] = self.m[n]
            out[f"{prefix}.v/{n}"] = self.v[n]
            out[f"{prefix}.g/{n}"] = self.g[n]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict, t: int):
        self.t = t
        for n in self.names:
            self.m[n] = arrays[f"{prefix}.m/{n}"].copy()
            self.v[n] = arrays[f"{prefix}.v/{n}"].copy()
            self.g[n] = arrays[f"{prefix}.g/{n}"].copy()


def cosine_lr(step: int, T0: int, T_mult: int, eta_min: float, base: float) -> float:
    """Cosine annealing with warm restarts; periods are T0, T0*T_mult, ..."""
    if T0 < 1 or T_mult < 1 or step < 0:
        raise ParameterError("schedule parameters must be positive")
    period, start = T0, 0
    while step >= start + period:
        start += period
        period *= T_mult
    progress = (step - start) / period
    rate = eta_min + (base - eta_min) * (1 + math.cos(math.pi * progress)) / 2
    return min(max(rate, min(eta_min, base)), max(eta_min, base))


def clip_gradients(store: nn.ParamStore, names, max_norm: float) -> tuple[float, bool]:
    """Scale gradients to total norm ``max_norm``; returns (pre-clip norm, finite)."""
    norm = store.grad_norm(names)
    if not math.isfinite(norm):
        return norm, False
    if norm > max_norm:
        scale = max_norm / norm
        for n in names:
            store.grads[n] *= scale
    return norm, True


# --------------------------------------------------------------------------
# actor / critic steps

@dataclass
class StepStats:
    loss: float
    grad_norm: float
    lr: float
    entropy: float = 0.0
    skipped: bool = False


def _backward_sum(terms):
    """Backpropagate ``sum coef * tensor``, one reverse pass per tape."""
    by_tape: dict[int, nn.Tensor] = {}
    for tensor, coef in terms:
        if coef == 0.0:
            continue
        scaled = nn.mul(tensor, coef)
        key = id(tensor.tape)
        by_tape[key] = scaled if key not in by_tape else nn.add(by_tape[key], scaled)
    for total in by_tape.values():
        nn.backward(total)


def actor_gradients(ep: Episode, advantages, entropy_coef: float):
    """Accumulate the gradient of ``-(sum_t logpi_t A_t + c H_t)``."""
    loss, ent = 0.0, 0.0
    terms = []
    for rec, adv in zip(ep.steps, advantages):
        terms.append((rec.log_prob, -float(adv)))
        loss -= float(rec.log_prob.value) * float(adv)
        if rec.entropy is not None:
            terms.append((rec.entropy, -entropy_coef))
            loss -= entropy_coef * float(rec.entropy.value)
            ent += float(rec.entropy.value)
    _backward_sum(terms)
    return loss, ent / max(len(ep), 1)


def critic_gradients(ep: Episode, returns):
    """Accumulate the gradient of ``sum_t (G_t - V(s_t))^2``."""
    loss = 0.0
    terms = []
    for rec, ret in zip(ep.steps, returns):
        diff = float(rec.value.value) - float(ret)
        loss += diff * diff
        terms.append((rec.value, 2.0 * diff))
    _backward_sum(terms)
    return loss


def apply_step(opt: Adam, lr: float, clip: float) -> tuple[float, bool]:
    norm, finite = clip_gradients(opt.store, opt.names, clip)
    if finite:
        opt.step(lr)
    opt.store.zero_grad(opt.names)
    return norm, finite


def actor_step(ep: Episode, opt: Adam, lr: float, entropy_coef: float, gamma: float,
               clip: float = 0.5) -> StepStats:
    _, adv = compute_returns_and_advantages(ep, gamma)
    opt.store.zero_grad(opt.names)
    loss, ent = actor_gradients(ep, adv, entropy_coef)
    norm, finite = apply_step(opt, lr, clip)
    return StepStats(loss, norm, lr, ent, not finite)


def critic_step(ep: Episode, opt: Adam, lr: float, gamma: float, clip: float = 0.5) -> StepStats:
    ret, _ = compute_returns_and_advantages(ep, gamma)
    opt.store.zero_grad(opt.names)
    loss = critic_gradients(ep, ret)
    norm, finite = apply_step(opt, lr, clip)
    return StepStats(loss, norm, lr, 0.0, not finite)


# --------------------------------------------------------------------------
# energy multiplier

@dataclass
class LagrangeState:
    lam: float = 0.05
    energy_acc: float = 0.0
    slots: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lambda must be nonnegative")

    def record(self, energy: float):
        self.energy_acc += energy
        self.slots += 1

    @property
    def avg_energy(self) -> float:
        return self.energy_acc / self.slots if self.slots else 0.0


def lagrange_step(ls: LagrangeState, avg_energy: float, c_bar: float, lr: float,
                  mode: str = "dual") -> LagrangeState:
    """Projected dual ascent on the time-averaged energy violation. The
    ``literal`` mode overwrites the multiplier with the (projected)
    violation itself."""
    violation = avg_energy - c_bar
    if mode == "dual":
        lam = max(0.0, ls.lam + lr * violation)
    elif mode == "literal":
        lam = max(0.0, violation)
    else:
        raise ParameterError(f"unknown lagrange mode {mode!r}")
    return LagrangeState(lam, 0.0, 0)
