"""Scheduling decision process: per-slot state features, Gaussian subset
sampling and the aggregate scheduling reward."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError, ShapeError
from .graph import DESTINATION, ROUTER, SOURCE, NetworkGraph
from .nn import gaussian_log_density
from .sim import SimState

FEATURE_WIDTH = 6
ROLE_ORDER = (SOURCE, ROUTER, DESTINATION)


@dataclass
class SchedState:
    graph: NetworkGraph
    adjacency: np.ndarray
    features: np.ndarray      # (n, 6): role one-hot, weight, AoI, in-flight count
    candidates: list[int]

    @property
    def node_count(self) -> int:
        return self.features.shape[0]


def role_one_hot(g: NetworkGraph) -> np.ndarray:
    out = np.zeros((g.node_count, 3))
    for i, r in enumerate(g.roles):
        out[i, ROLE_ORDER.index(r)] = 1.0
    return out


def build_state(sim: SimState, candidates=None) -> SchedState:
    g = sim.graph
    x = np.zeros((g.node_count, FEATURE_WIDTH))
    x[:, :3] = role_one_hot(g)
    dests = g.destinations
    x[dests, 3] = g.weights[dests]
    x[dests, 4] = sim.aoi[dests]
    x[:, 5] = sim.in_flight_counts()
    cands = list(dests) if candidates is None else sorted(candidates)
    return SchedState(g, g.adjacency_matrix(), x, cands)


def check_node_bound(g: NetworkGraph, v_hat: int):
    """Reject graphs larger than the configured maximum node count."""
    if g.node_count > v_hat:
        raise CapacityError(f"graph has {g.node_count} nodes, bound is {v_hat}")


@dataclass
class SelectionOutcome:
    dests: list[int]
    selected: list[int]
    scores: np.ndarray
    log_prob: float
    entropy: float

    @property
    def empty(self) -> bool:
        return not self.selected


def gaussian_entropy(sigma) -> np.ndarray:
    return 0.5 * np.log(2.0 * math.pi * math.e) + np.log(sigma)


def sample_selection(mu, sigma, rng: np.random.Generator | None, mode: str = "stochastic",
                     dests=None) -> SelectionOutcome:
    """Draw one score per destination; a destination is selected iff its
    score is positive. Greedy mode uses the mean as the score."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if mu.shape != sigma.shape:
        raise ShapeError("mu and sigma differ in shape")
    if np.any(~(sigma > 0)):
        raise ParameterError("every sigma must be positive")
    dests = list(range(len(mu))) if dests is None else list(dests)
    if mode == "stochastic":
        scores = mu + sigma * rng.standard_normal(len(mu))
    elif mode == "greedy":
        scores = mu.copy()
    else:
        raise ParameterError(f"unknown selection mode {mode!r}")
    selected = [u for u, s in zip(dests, scores) if s > 0]
    logp = float(np.sum(gaussian_log_density(scores, mu, sigma))) if len(mu) else 0.0
    ent = float(np.sum(gaussian_entropy(sigma)))
    return SelectionOutcome(dests, selected, scores, logp, ent)


def reward_r1(tree_rewards) -> float:
    total = 0.0
    for r in tree_rewards:
        total += r
    return total
