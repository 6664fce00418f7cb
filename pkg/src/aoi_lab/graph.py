"""Network graphs with source/router/destination roles, random generators,
the dynamic-topology process and multicast-tree helpers.

Node ids are ``0..n-1``. Edges are undirected and keyed ``(u, v)`` with
``u < v``; the value is the per-transmission energy cost of the link.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, ParameterError, ParseError

SOURCE = "S"
ROUTER = "R"
DESTINATION = "D"
ROLES = (SOURCE, ROUTER, DESTINATION)

DEFAULT_COST_RANGE = (0.5, 2.0)

Edge = tuple[int, int]


def edge_key(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


class NetworkGraph:
    """Undirected costed graph with node roles and destination weights."""

    def __init__(self, roles: Iterable[str], weights: Iterable[float],
                 edges: Mapping[Edge, float]):
        self.roles = tuple(roles)
        self.weights = np.asarray(list(weights), dtype=np.float64)
        n = len(self.roles)
        if self.weights.shape != (n,):
            raise ParameterError(f"expected {n} weights, got {self.weights.shape}")
        for r in self.roles:
            if r not in ROLES:
                raise ParameterError(f"unknown role {r!r}")
        if self.roles.count(SOURCE) != 1:
            raise ParameterError("graph must have exactly one source")
        for i, r in enumerate(self.roles):
            w = self.weights[i]
            if r == DESTINATION and not 0.0 < w <= 1.0:
                raise ParameterError(f"destination {i} weight {w} outside (0, 1]")
            if r != DESTINATION and w != 0.0:
                raise ParameterError(f"non-destination {i} carries weight {w}")
        self.edges: dict[Edge, float] = {}
        for (u, v), c in edges.items():
            if u == v:
                raise ParameterError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ParameterError(f"edge ({u}, {v}) references unknown node")
            if c < 0 or not math.isfinite(c):
                raise ParameterError(f"edge ({u}, {v}) has invalid cost {c}")
            k = edge_key(u, v)
            if k in self.edges:
                raise ParameterError(f"duplicate edge {k}")
            self.edges[k] = float(c)
        self._adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in self.edges:
            self._adj[u].append(v)
            self._adj[v].append(u)
        for nbrs in self._adj:
            nbrs.sort()

    @property
    def node_count(self) -> int:
        return len(self.roles)

    @property
    def source(self) -> int:
        return self.roles.index(SOURCE)

    @property
    def destinations(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == DESTINATION]

    def neighbors(self, u: int) -> list[int]:
        return self._adj[u]

    def has_edge(self, u: int, v: int) -> bool:
        return edge_key(u, v) in self.edges

    def cost(self, u: int, v: int) -> float:
        return self.edges[edge_key(u, v)]

    def with_edges(self, edges: Mapping[Edge, float]) -> "NetworkGraph":
        """Same nodes, roles and weights; new edge set."""
        return NetworkGraph(self.roles, self.weights, edges)

    def with_roles(self, roles: Iterable[str], weights: Iterable[float]) -> "NetworkGraph":
        return NetworkGraph(roles, weights, self.edges)

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def __eq__(self, other):
        if not isinstance(other, NetworkGraph):
            return NotImplemented
        return (self.roles == other.roles
                and np.array_equal(self.weights, other.weights)
                and self.edges == other.edges)

    def __repr__(self):
        return (f"NetworkGraph(n={self.node_count}, edges={len(self.edges)}, "
                f"source={self.source}, destinations={self.destinations})")


def _default_roles(n: int) -> tuple[list[str], list[float]]:
    return [SOURCE] + [ROUTER] * (n - 1), [0.0] * n


def _er_edges(n, p, rng, cost_range) -> dict[Edge, float]:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = rng.random(len(pairs)) < p
    costs = rng.uniform(cost_range[0], cost_range[1], size=len(pairs))
    return {pairs[k]: float(costs[k]) for k in np.flatnonzero(keep)}


def _ba_edges(n, m, rng, cost_range) -> dict[Edge, float]:
    # m-clique seed, then each arrival attaches m distinct degree-weighted edges
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    degree = np.zeros(n)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    for new in range(m, n):
        w = degree[:new]
        probs = w / w.sum() if w.sum() > 0 else np.full(new, 1.0 / new)
        targets = rng.choice(new, size=m, replace=False, p=probs)
        for t in sorted(int(x) for x in targets):
            edges.append((t, new))
            degree[t] += 1
            degree[new] += 1
    costs = rng.uniform(cost_range[0], cost_range[1], size=len(edges))
    return {e: float(c) for e, c in zip(edges, costs)}


def generate_er(n: int, p: float, seed=None, cost_range=DEFAULT_COST_RANGE) -> NetworkGraph:
    """Erdos-Renyi G(n, p) with uniform edge costs. Node 0 is the source
    until :func:`assign_roles` is applied."""
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return NetworkGraph(*_default_roles(n), _er_edges(n, p, rng, cost_range))


def generate_ba(n: int, m: int, seed=None, cost_range=DEFAULT_COST_RANGE) -> NetworkGraph:
    """Barabasi-Albert preferential attachment grown from an m-clique."""
    if not 1 <= m < n:
        raise ParameterError(f"need 1 <= m < n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return NetworkGraph(*_default_roles(n), _ba_edges(n, m, rng, cost_range))


def assign_roles(g: NetworkGraph, dest_fraction: float, seed=None) -> NetworkGraph:
    """Pick one random source and floor(dest_fraction * n) destinations.

    Destination weights are uniform draws normalised to sum to one.
    """
    n = g.node_count
    if not 0.0 < dest_fraction < 1.0:
        raise ParameterError(f"dest_fraction must be in (0, 1), got {dest_fraction}")
    if n < 2:
        raise ParameterError("need at least two nodes")
    rng = np.random.default_rng(seed)
    k = min(max(1, int(math.floor(dest_fraction * n))), n - 1)
    perm = rng.permutation(n)
    roles = [ROUTER] * n
    roles[perm[0]] = SOURCE
    dests = sorted(int(x) for x in perm[1:k + 1])
    raw = rng.uniform(0.0, 1.0, size=k)
    while np.any(raw <= 0.0):  # open interval
        raw = rng.uniform(0.0, 1.0, size=k)
    weights = np.zeros(n)
    for d, w in zip(dests, raw / raw.sum()):
        roles[d] = DESTINATION
        weights[d] = w
    return g.with_roles(roles, weights)


# --------------------------------------------------------------------------
# file format

def parse_edge_list(text: str) -> NetworkGraph:
    """Parse the line-oriented graph format::

        graph <node_count>
        node <id> <S|R|D> <weight>
        edge <u> <v> <cost>

    ``#`` starts a comment. Undeclared nodes default to routers.
    """
    n = None
    roles: list[str] = []
    weights: list[float] = []
    edges: dict[Edge, float] = {}
    declared: set[int] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "graph":
                if n is not None:
                    raise ParseError(lineno, raw, "duplicate graph header")
                if len(parts) != 2:
                    raise ParseError(lineno, raw, "expected 'graph <node_count>'")
                n = int(parts[1])
                if n < 1:
                    raise ParseError(lineno, raw, "node count must be positive")
                roles = [ROUTER] * n
                weights = [0.0] * n
                continue
            if n is None:
                raise ParseError(lineno, raw, "missing graph header")
            if kind == "node":
                if len(parts) != 4:
                    raise ParseError(lineno, raw, "expected 'node <id> <role> <weight>'")
                i, role, w = int(parts[1]), parts[2], float(parts[3])
                if not 0 <= i < n:
                    raise ParseError(lineno, raw, f"unknown node id {i}")
                if role not in ROLES:
                    raise ParseError(lineno, raw, f"unknown role {role!r}")
                if i in declared:
                    raise ParseError(lineno, raw, f"node {i} declared twice")
                declared.add(i)
                roles[i] = role
                weights[i] = w
            elif kind == "edge":
                if len(parts) != 4:
                    raise ParseError(lineno, raw, "expected 'edge <u> <v> <cost>'")
                u, v, c = int(parts[1]), int(parts[2]), float(parts[3])
                if not (0 <= u < n and 0 <= v < n):
                    raise ParseError(lineno, raw, "unknown node id")
                if u == v:
                    raise ParseError(lineno, raw, "self-loop")
                if not (math.isfinite(c) and c >= 0):
                    raise ParseError(lineno, raw, "cost must be finite and nonnegative")
                k = edge_key(u, v)
                if k in edges:
                    raise ParseError(lineno, raw, "duplicate edge")
                edges[k] = c
            else:
                raise ParseError(lineno, raw, f"unknown record {kind!r}")
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(lineno, raw, f"malformed number ({exc})") from None
    if n is None:
        raise ParseError(0, "", "missing graph header")
    try:
        return NetworkGraph(roles, weights, edges)
    except ParameterError as exc:
        raise ParseError(0, "", str(exc)) from None


ingest_edge_list = parse_edge_list


def format_edge_list(g: NetworkGraph) -> str:
    lines = [f"graph {g.node_count}"]
    for i, r in enumerate(g.roles):
        lines.append(f"node {i} {r} {float(g.weights[i])!r}")
    for (u, v), c in sorted(g.edges.items()):
        lines.append(f"edge {u} {v} {c!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# dynamic topology

@dataclass
class TopologyProcess:
    """Piecewise-constant topology: edges are redrawn every ``resample_period``
    slots while node ids, roles and weights stay fixed.

    ``generator_kind`` is ``"er"`` (params ``p``), ``"ba"`` (params ``m``) or
    ``"ingested"`` (static).
    """
    base_graph: NetworkGraph
    resample_period: int = 20
    generator_kind: str = "er"
    generator_params: dict = field(default_factory=dict)
    seed: int = 0
    cost_range: tuple[float, float] = DEFAULT_COST_RANGE

    def __post_init__(self):
        if self.resample_period < 1:
            raise ParameterError("resample_period must be >= 1")
        if self.generator_kind not in ("er", "ba", "ingested"):
            raise ParameterError(f"unknown generator {self.generator_kind!r}")


def resample_topology(proc: TopologyProcess, t: int) -> NetworkGraph:
    """Graph in force at slot ``t``; a pure function of (seed, t, params)."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    epoch = t // proc.resample_period
    if epoch == 0 or proc.generator_kind == "ingested":
        return proc.base_graph
    n = proc.base_graph.node_count
    rng = np.random.default_rng([proc.seed, epoch])
    if proc.generator_kind == "er":
        edges = _er_edges(n, proc.generator_params["p"], rng, proc.cost_range)
    else:
        edges = _ba_edges(n, proc.generator_params["m"], rng, proc.cost_range)
    return proc.base_graph.with_edges(edges)


# --------------------------------------------------------------------------
# hop computations

def shortest_hops(g: NetworkGraph, src: int) -> np.ndarray:
    """BFS hop distance from ``src``; unreachable nodes are ``inf``."""
    if not 0 <= src < g.node_count:
        raise ParameterError(f"invalid node {src}")
    dist = np.full(g.node_count, np.inf)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if dist[v] == np.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def component_of(g: NetworkGraph, u: int) -> list[int]:
    return [int(i) for i in np.flatnonzero(np.isfinite(shortest_hops(g, u)))]


def graph_length(g: NetworkGraph) -> int:
    """Hop diameter of the connected component that contains the source."""
    if g.node_count == 0:
        raise ParameterError("empty graph")
    comp = component_of(g, g.source)
    best = 0
    for u in comp:
        d = shortest_hops(g, u)
        best = max(best, int(d[comp].max()))
    return best


# --------------------------------------------------------------------------
# multicast trees

@dataclass
class MulticastTree:
    """Tree rooted at the source. ``edges`` maps ``(u, v)``, ``u < v``, to cost."""
    edges: dict[Edge, float]
    root: int
    covered: frozenset = frozenset()

    def __post_init__(self):
        self.covered = frozenset(self.covered)
        self._parent: dict[int, int | None] = {self.root: None}
        self._hops: dict[int, int] = {self.root: 0}
        adj: dict[int, list[int]] = {self.root: []}
        for u, v in self.edges:
            adj.setdefault(u, []).append(v)
            adj.setdefault(v, []).append(u)
        queue = deque([self.root])
        while queue:
            u = queue.popleft()
            for v in sorted(adj[u]):
                if v not in self._hops:
                    self._hops[v] = self._hops[u] + 1
                    self._parent[v] = u
                    queue.append(v)
        if len(self._hops) != len(adj) or len(self.edges) != len(adj) - 1:
            raise DomainError("edge set is not a tree spanning its nodes from the root")
        missing = self.covered - self._hops.keys()
        if missing:
            raise DomainError(f"covered nodes {sorted(missing)} not in tree")

    @classmethod
    def from_edges(cls, g: NetworkGraph, edges: Iterable[Edge], covered=()) -> "MulticastTree":
        es = {}
        for u, v in edges:
            k = edge_key(u, v)
            if k not in g.edges:
                raise DomainError(f"edge {k} not in host graph")
            es[k] = g.edges[k]
        return cls(es, g.source, frozenset(covered))

    @property
    def nodes(self) -> set[int]:
        return set(self._hops)

    def __contains__(self, u) -> bool:
        return u in self._hops

    def hops(self, u: int) -> int:
        if u not in self._hops:
            raise DomainError(f"node {u} not in tree")
        return self._hops[u]

    def path(self, u: int) -> list[int]:
        """Unique root -> u node sequence."""
        if u not in self._hops:
            raise DomainError(f"node {u} not in tree")
        out = [u]
        while self._parent[out[-1]] is not None:
            out.append(self._parent[out[-1]])
        return out[::-1]

    @property
    def energy(self) -> float:
        return float(sum(self.edges.values()))


def tree_hops(t: MulticastTree, u: int) -> int:
    return t.hops(u)


def tree_energy(t: MulticastTree) -> float:
    return t.energy


def is_multicast_tree(sub: Iterable[Edge], g: NetworkGraph, dests: Iterable[int]) -> bool:
    """True iff ``sub`` is a connected acyclic edge set of ``g`` containing the
    source and every node of ``dests``."""
    keys = [edge_key(u, v) for u, v in sub]
    if len(set(keys)) != len(keys) or any(k not in g.edges for k in keys):
        return False
    nodes = {g.source}
    for u, v in keys:
        nodes.update((u, v))
    if not set(dests) <= nodes:
        return False
    if len(keys) != len(nodes) - 1:
        return False
    adj: dict[int, list[int]] = {u: [] for u in nodes}
    for u, v in keys:
        adj[u].append(v)
        adj[v].append(u)
    seen = {g.source}
    stack = [g.source]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def fixture_g4() -> NetworkGraph:
    """Four-node reference graph with a cost/hop trade-off between two trees."""
    return NetworkGraph(
        [SOURCE, ROUTER, DESTINATION, DESTINATION],
        [0.0, 0.0, 0.6, 0.4],
        {(0, 1): 1.0, (1, 2): 2.0, (1, 3): 1.0, (0, 2): 5.0},
    )
