"""Scheduler and tree-generator networks.

Both share the same trunk: a learned input projection, ``layers`` attention
layers (each re-injecting the raw features), and mean pooling. The
scheduler's heads produce a Gaussian (mu, sigma) per destination from the
concatenation of the node embedding and the pooled embedding, plus a scalar
value. The tree generator scores every node, masks to the valid frontier
and takes a log-softmax; its value head reads the pooled embedding.

Value heads read a detached copy of the pooled embedding, so the critic
loss only moves value-head weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ShapeError, UsageError
from .gat import EdgeIndex, edge_features, layer
from .graph import NetworkGraph
from .sched_mdp import FEATURE_WIDTH, SchedState, role_one_hot
from .tree_mdp import PartialSolution, TreeEpisodeContext, valid_actions

SIGMA_CLAMP = (-5.0, 2.0)
TREE_FEATURE_WIDTH = 7


@dataclass
class NetConfig:
    hidden: int = 64
    heads: int = 5
    layers: int = 3
    mode: str = "sym"
    attend: bool = True          # False gives the per-node (MLP) variant
    leaky_slope: float = 0.2
    aoi_scale: float = 10.0      # AoI and in-flight inputs are divided by this
    dropout: float = 0.0


class _Trunk:
    def __init__(self, store: nn.ParamStore, cfg: NetConfig, d_x: int, d_e: int,
                 rng: np.random.Generator, prefix: str = ""):
        self.store, self.cfg, self.prefix = store, cfg, prefix
        d, k = cfg.hidden, cfg.heads
        store.init_glorot(prefix + "in.W", (d, d_x), rng)
        for l in range(cfg.layers):
            p = f"{prefix}gat{l}."
            store.init_glorot(p + "W1", (k, d, d), rng)
            store.init_glorot(p + "W3", (k, d, d_x), rng)
            if cfg.attend:
                store.init_glorot(p + "W2", (k, d, d_e), rng)
                store.init_glorot(p + "a", (k, d), rng)

    def trunk_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith(self.prefix + "in.")
                or n.startswith(self.prefix + "gat")]

    def embed(self, tape: nn.Tape, x: np.ndarray, E: np.ndarray, index: EdgeIndex,
              rng=None) -> nn.Tensor:
        cfg = self.cfg
        X = tape.const(x)
        Et = tape.const(E)
        H = nn.dense(tape.param(self.prefix + "in.W"), X)
        index = index if cfg.attend else EdgeIndex.self_loops(index.n)
        for l in range(cfg.layers):
            p = f"{self.prefix}gat{l}."
            W1 = tape.param(p + "W1")
            W2 = tape.param(p + "W2") if cfg.attend else None
            a = tape.param(p + "a") if cfg.attend else None
            H = layer(W1, W2, tape.param(p + "W3"), a, H, X, Et, index, cfg.mode,
                      cfg.leaky_slope, cfg.dropout, rng, cfg.attend)
        return H


def _two_layer(tape, outer: str, inner: str, z: nn.Tensor, slope: float) -> nn.Tensor:
    return nn.dense(tape.param(outer), nn.leaky_relu(nn.dense(tape.param(inner), z), slope))


# --------------------------------------------------------------------------
# scheduler

@dataclass
class SchedulerOutput:
    dests: list[int]
    mu: nn.Tensor          # (c,)
    sigma: nn.Tensor       # (c,)
    value: nn.Tensor       # scalar
    tape: nn.Tape

    def params(self) -> list[tuple[float, float]]:
        return list(zip(self.mu.value.tolist(), self.sigma.value.tolist()))


class SchedulerNet:
    def __init__(self, cfg: NetConfig | None = None, rng: np.random.Generator | None = None,
                 store: nn.ParamStore | None = None):
        self.cfg = cfg or NetConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        self.store = nn.ParamStore() if store is None else store
        self.trunk = _Trunk(self.store, self.cfg, FEATURE_WIDTH, 1, rng)
        d = self.cfg.hidden
        for name, shape in (("mu.W2", (d, 2 * d)), ("mu.W1", (1, d)),
                            ("sigma.W4", (d, 2 * d)), ("sigma.W3", (1, d)),
                            ("value.W6", (d, d)), ("value.W5", (1, d))):
            self.store.init_glorot(name, shape, rng)

    @property
    def actor_names(self) -> list[str]:
        return [n for n in self.store.names() if not n.startswith("value.")]

    @property
    def critic_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith("value.")]

    def inputs(self, s: SchedState):
        if s.features.shape[1] != FEATURE_WIDTH:
            raise ShapeError(f"scheduler expects {FEATURE_WIDTH} features per node")
        x = s.features.copy()
        x[:, 4:6] /= self.cfg.aoi_scale
        index = EdgeIndex.from_graph(s.graph)
        return x, edge_features(s.graph, index), index

    def forward(self, s: SchedState, tape: nn.Tape | None = None, rng=None) -> SchedulerOutput:
        tape = nn.Tape(self.store) if tape is None else tape
        x, E, index = self.inputs(s)
        H = self.trunk.embed(tape, x, E, index, rng)
        pooled = nn.mean_pool(H)
        dests = list(s.candidates)
        slope = self.cfg.leaky_slope
        if dests:
            Hc = nn.take(H, dests, axis=0)
            tiled = nn.take(nn.reshape(pooled, (1, -1)), np.zeros(len(dests), dtype=np.intp), axis=0)
            z = nn.concat([Hc, tiled], axis=1)
            mu = nn.reshape(_two_layer(tape, "mu.W1", "mu.W2", z, slope), (len(dests),))
            raw = nn.reshape(_two_layer(tape, "sigma.W3", "sigma.W4", z, slope), (len(dests),))
            sigma = nn.exp(nn.clamp(raw, *SIGMA_CLAMP))
        else:
            mu = sigma = tape.const(np.zeros(0))
        frozen = tape.const(pooled.value)
        value = nn.reshape(_two_layer(tape, "value.W5", "value.W6", frozen, slope), ())
        return SchedulerOutput(dests, mu, sigma, value, tape)


def scheduler_forward(net: SchedulerNet, s: SchedState):
    out = net.forward(s)
    return out.params(), float(out.value.value), out.tape


# --------------------------------------------------------------------------
# tree generator

def state_encoding(p: PartialSolution, ctx: TreeEpisodeContext | None = None):
    """Node features ``[in partial, role one-hot (3), weight, AoI, selected]``
    and per-pair edge features ``[cost, edge in partial]``."""
    g = p.graph
    x = np.zeros((g.node_count, TREE_FEATURE_WIDTH))
    x[sorted(p.nodes), 0] = 1.0
    x[:, 1:4] = role_one_hot(g)
    dests = g.destinations
    x[dests, 4] = g.weights[dests]
    if ctx is not None:
        x[dests, 5] = np.asarray(ctx.aoi)[dests]
        sel = sorted(ctx.selected)
        x[sel, 6] = 1.0
    index = EdgeIndex.from_graph(g)
    E = edge_features(g, index, lambda u, v: (1.0 if (min(u, v), max(u, v)) in p.edges else 0.0,))
    return x, E, index


@dataclass
class TreeGenOutput:
    actions: list[int]
    log_probs: nn.Tensor      # (n,), -inf off the valid set
    value: nn.Tensor
    tape: nn.Tape

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.value[self.actions])


class TreeGenNet:
    def __init__(self, cfg: NetConfig | None = None, rng: np.random.Generator | None = None,
                 store: nn.ParamStore | None = None):
        self.cfg = cfg or NetConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        self.store = nn.ParamStore() if store is None else store
        self.trunk = _Trunk(self.store, self.cfg, TREE_FEATURE_WIDTH, 2, rng)
        d = self.cfg.hidden
        for name, shape in (("pi.W2", (d, d)), ("pi.W1", (1, d)),
                            ("value.W4", (d, d)), ("value.W3", (1, d))):
            self.store.init_glorot(name, shape, rng)

    @property
    def actor_names(self) -> list[str]:
        return [n for n in self.store.names() if not n.startswith("value.")]

    @property
    def critic_names(self) -> list[str]:
        return [n for n in self.store.names() if n.startswith("value.")]

    def forward(self, p: PartialSolution, ctx: TreeEpisodeContext | None = None,
                tape: nn.Tape | None = None, rng=None, actions=None) -> TreeGenOutput:
        actions = valid_actions(p) if actions is None else actions
        if not actions:
            raise UsageError("no valid actions: the episode is already terminal")
        tape = nn.Tape(self.store) if tape is None else tape
        x, E, index = state_encoding(p, ctx)
        x[:, 5] /= self.cfg.aoi_scale
        H = self.trunk.embed(tape, x, E, index, rng)
        slope = self.cfg.leaky_slope
        logits = nn.reshape(_two_layer(tape, "pi.W1", "pi.W2", H, slope), (p.graph.node_count,))
        mask = np.zeros(p.graph.node_count, dtype=bool)
        mask[actions] = True
        logp = nn.masked_log_softmax(logits, mask)
        frozen = tape.const(nn.mean_pool(H).value)
        value = nn.reshape(_two_layer(tape, "value.W3", "value.W4", frozen, slope), ())
        return TreeGenOutput(list(actions), logp, value, tape)


def treegen_forward(net: TreeGenNet, p: PartialSolution, ctx=None):
    out = net.forward(p, ctx)
    return out.log_probs.value[out.actions], float(out.value.value), out.tape


def zero_params(store: nn.ParamStore):
    for v in store.params.values():
        v.fill(0.0)
