"""Tree-generating decision process.

A partial solution starts at the source and grows one node per step; each
new node is wired in through its cheapest link to the partial solution.
Step rewards are increments of the quality function, so the undiscounted
return of an episode telescopes to ``quality(terminal) - quality(initial)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, DomainError, ParameterError
from .graph import MulticastTree, NetworkGraph, component_of, edge_key, is_multicast_tree

ORACLE_MAX_NODES = 12


class PartialSolution:
    """Growing tree rooted at the source of ``graph``."""

    __slots__ = ("graph", "root", "nodes", "order", "edges", "parent", "hops", "cost")

    def __init__(self, graph: NetworkGraph):
        self.graph = graph
        self.root = graph.source
        self.nodes = {self.root}
        self.order = [self.root]
        self.edges: dict[tuple[int, int], float] = {}
        self.parent: dict[int, int | None] = {self.root: None}
        self.hops = {self.root: 0}
        self.cost = 0.0

    def copy(self) -> "PartialSolution":
        p = PartialSolution.__new__(PartialSolution)
        p.graph, p.root = self.graph, self.root
        p.nodes = set(self.nodes)
        p.order = list(self.order)
        p.edges = dict(self.edges)
        p.parent = dict(self.parent)
        p.hops = dict(self.hops)
        p.cost = self.cost
        return p

    def to_tree(self, covered=()) -> MulticastTree:
        return MulticastTree(dict(self.edges), self.root, frozenset(covered))

    def __repr__(self):
        return f"PartialSolution(nodes={sorted(self.nodes)}, edges={sorted(self.edges)})"


@dataclass
class TreeEpisodeContext:
    selected: frozenset
    aoi: np.ndarray
    weights: np.ndarray
    lam: float
    c_bar: float
    h_hat: float
    quality_w: float | None = None   # overrides c_bar in the quality function

    def __post_init__(self):
        self.selected = frozenset(int(u) for u in self.selected)
        if self.lam < 0:
            raise ParameterError("lambda must be nonnegative")
        if self.h_hat < 1:
            raise ParameterError("graph length must be >= 1")

    @property
    def budget_term(self) -> float:
        return self.c_bar if self.quality_w is None else self.quality_w

    @classmethod
    def for_graph(cls, g: NetworkGraph, selected, aoi, lam, c_bar, h_hat=None, **kw):
        from .graph import graph_length
        if h_hat is None:
            h_hat = max(1, graph_length(g))
        return cls(frozenset(selected), np.asarray(aoi, dtype=np.float64), g.weights,
                   lam, c_bar, h_hat, **kw)


def init_partial(g: NetworkGraph) -> PartialSolution:
    return PartialSolution(g)


def valid_actions(p: PartialSolution) -> list[int]:
    g = p.graph
    out = set()
    for u in p.nodes:
        for v in g.neighbors(u):
            if v not in p.nodes:
                out.add(v)
    return sorted(out)


def _cheapest_link(p: PartialSolution, v: int) -> int | None:
    best, best_c = None, math.inf
    for u in p.graph.neighbors(v):   # ascending id, so ties keep the smaller id
        if u in p.nodes:
            c = p.graph.cost(u, v)
            if c < best_c:
                best, best_c = u, c
    return best


def attach(p: PartialSolution, v: int) -> PartialSolution:
    """New partial solution with ``v`` wired in by its cheapest link."""
    if v in p.nodes:
        raise DomainError(f"node {v} already in partial solution")
    u = _cheapest_link(p, v)
    if u is None:
        raise DomainError(f"node {v} is not adjacent to the partial solution")
    q = p.copy()
    k = edge_key(u, v)
    c = p.graph.edges[k]
    q.nodes.add(v)
    q.order.append(v)
    q.edges[k] = c
    q.parent[v] = u
    q.hops[v] = q.hops[u] + 1
    q.cost += c
    return q


def quality(p: PartialSolution, ctx: TreeEpisodeContext) -> float:
    gain = 0.0
    for u in sorted(ctx.selected & p.nodes):
        gain += ctx.weights[u] * (1.0 - p.hops[u] / ctx.h_hat) * ctx.aoi[u]
    return gain - ctx.lam * (p.cost - ctx.budget_term)


def step_reward(p_before: PartialSolution, p_after: PartialSolution, ctx) -> float:
    return quality(p_after, ctx) - quality(p_before, ctx)


def unreachable_selected(p: PartialSolution, ctx: TreeEpisodeContext) -> list[int]:
    reach = set(component_of(p.graph, p.root))
    return sorted(u for u in ctx.selected if u not in reach)


def is_terminal(p: PartialSolution, ctx: TreeEpisodeContext) -> bool:
    if ctx.selected <= p.nodes:
        return True
    return bool(unreachable_selected(p, ctx))


def failure_penalty(p: PartialSolution, ctx: TreeEpisodeContext) -> float:
    return -sum(ctx.weights[u] * ctx.aoi[u] for u in sorted(ctx.selected - p.nodes))


@dataclass
class Step:
    state: PartialSolution
    action: int
    reward: float
    info: dict = field(default_factory=dict)


@dataclass
class RolloutResult:
    tree: MulticastTree | None
    steps: list[Step]
    terminal: PartialSolution
    failed: bool = False
    penalty: float = 0.0

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def total_reward(self) -> float:
        total = 0.0
        for r in self.rewards:
            total += r
        return total + self.penalty


# policy(partial, actions, ctx, rng) -> (chosen node, info dict)
Policy = Callable[[PartialSolution, list, TreeEpisodeContext, np.random.Generator], tuple]


def rollout(g: NetworkGraph, ctx: TreeEpisodeContext, policy: Policy,
            rng: np.random.Generator | None = None) -> RolloutResult:
    """Run one episode of the tree process to a terminal state.

    On a failure terminal (a selected destination outside the source's
    component) no tree is returned and the uncovered destinations' weighted
    AoI is charged as ``penalty``.
    """
    rng = np.random.default_rng() if rng is None else rng
    p = init_partial(g)
    if unreachable_selected(p, ctx):
        return RolloutResult(None, [], p, failed=True, penalty=failure_penalty(p, ctx))
    steps = []
    q_prev = quality(p, ctx)
    while not ctx.selected <= p.nodes:
        actions = valid_actions(p)
        v, info = policy(p, actions, ctx, rng)
        if v not in actions:
            raise DomainError(f"policy chose invalid action {v}")
        nxt = attach(p, v)
        q_next = quality(nxt, ctx)
        steps.append(Step(p, v, q_next - q_prev, info or {}))
        p, q_prev = nxt, q_next
    return RolloutResult(p.to_tree(ctx.selected), steps, p)


# --------------------------------------------------------------------------
# simple policies

def uniform_policy(p, actions, ctx, rng):
    return actions[int(rng.integers(len(actions)))], {}


def greedy_reward_policy(p, actions, ctx, rng):
    """One-step lookahead on the quality increment; ties by smallest id."""
    base = quality(p, ctx)
    best, best_r = None, -math.inf
    for v in actions:
        r = quality(attach(p, v), ctx) - base
        if r > best_r + 1e-12:
            best, best_r = v, r
    return best, {}


def scripted_policy(sequence: Sequence[int]) -> Policy:
    it = iter(sequence)

    def policy(p, actions, ctx, rng):
        return next(it), {}
    return policy


# --------------------------------------------------------------------------
# exhaustive oracles

def tree_objective(t: MulticastTree, ctx: TreeEpisodeContext) -> float:
    """Objective of the AoI-weighted budgeted tree problem for a finished tree."""
    gain = 0.0
    for u in sorted(ctx.selected):
        gain += ctx.weights[u] * (1.0 - t.hops(u) / ctx.h_hat) * ctx.aoi[u]
    return gain - ctx.lam * (t.energy - ctx.budget_term)


def _spanning_trees(nodes: list[int], edges: list[tuple[int, int]]):
    """Yield every spanning tree (as an edge tuple) of the graph (nodes, edges)."""
    need = len(nodes) - 1
    if need == 0:
        yield ()
        return
    index = {u: i for i, u in enumerate(nodes)}

    def rec(start, chosen, parent):
        if len(chosen) == need:
            yield tuple(chosen)
            return
        if len(edges) - start < need - len(chosen):
            return
        for k in range(start, len(edges)):
            u, v = edges[k]
            ru, rv = _find(parent, index[u]), _find(parent, index[v])
            if ru == rv:
                continue
            saved = list(parent)
            parent[ru] = rv
            chosen.append(edges[k])
            yield from rec(k + 1, chosen, parent)
            chosen.pop()
            parent[:] = saved

    yield from rec(0, [], list(range(len(nodes))))


def _find(parent, i):
    while parent[i] != i:
        i = parent[i]
    return i


def enumerate_multicast_trees(g: NetworkGraph, terminals):
    """Every tree of ``g`` containing the source and ``terminals``."""
    if g.node_count > ORACLE_MAX_NODES:
        raise CapacityError(f"exhaustive enumeration limited to {ORACLE_MAX_NODES} nodes")
    src = g.source
    required = {src} | set(terminals)
    reach = set(component_of(g, src))
    if not required <= reach:
        return
    optional = sorted(reach - required)
    for r in range(len(optional) + 1):
        for extra in itertools.combinations(optional, r):
            sset = sorted(required | set(extra))
            members = set(sset)
            induced = [e for e in sorted(g.edges) if e[0] in members and e[1] in members]
            for tree_edges in _spanning_trees(sset, induced):
                yield tree_edges


def brute_force_best_tree(g: NetworkGraph, ctx: TreeEpisodeContext):
    """Maximise the tree objective over all multicast trees covering the
    selection. Returns ``(tree, objective)`` or ``(None, -inf)`` when some
    selected destination is unreachable."""
    if g.node_count > ORACLE_MAX_NODES:
        raise CapacityError(f"exhaustive enumeration limited to {ORACLE_MAX_NODES} nodes")
    best, best_val = None, -math.inf
    for tree_edges in enumerate_multicast_trees(g, ctx.selected):
        assert is_multicast_tree(tree_edges, g, ctx.selected)
        t = MulticastTree.from_edges(g, tree_edges, ctx.selected)
        val = tree_objective(t, ctx)
        if val > best_val + 1e-12:
            best, best_val = t, val
    return best, best_val


def enumerate_rollouts(g: NetworkGraph, ctx: TreeEpisodeContext, max_episodes=None):
    """Depth-first enumeration of every action sequence of the tree process.

    Yields :class:`RolloutResult` for each terminal reached.
    """
    count = 0
    p0 = init_partial(g)
    if unreachable_selected(p0, ctx):
        yield RolloutResult(None, [], p0, failed=True, penalty=failure_penalty(p0, ctx))
        return

    def rec(p, steps):
        nonlocal count
        if ctx.selected <= p.nodes:
            count += 1
            yield RolloutResult(p.to_tree(ctx.selected), list(steps), p)
            return
        q = quality(p, ctx)
        for v in valid_actions(p):
            if max_episodes is not None and count >= max_episodes:
                return
            nxt = attach(p, v)
            steps.append(Step(p, v, quality(nxt, ctx) - q))
            yield from rec(nxt, steps)
            steps.pop()

    yield from rec(p0, [])
