"""Comparison policies: Random, Greedy, Kruskal MST multicast.

The TGMS-MLP variant lives with the learned agents in :mod:`aoi_lab.agents`.
"""

from __future__ import annotations

import math

import numpy as np

from .graph import MulticastTree, NetworkGraph, component_of, edge_key
from .tree_mdp import attach, init_partial, valid_actions


def random_policy(g: NetworkGraph, candidates, rng: np.random.Generator, fraction=None):
    """Each candidate destination is kept with probability ``fraction``
    (drawn uniformly from [0, 1] when not given); the tree then grows by
    attaching uniformly chosen frontier nodes through their cheapest link."""
    candidates = sorted(candidates)
    if fraction is None:
        fraction = rng.uniform(0.0, 1.0)
    draws = rng.uniform(0.0, 1.0, size=len(candidates))
    selected = [u for u, d in zip(candidates, draws) if d < fraction]
    if not selected:
        return [], None
    reach = set(component_of(g, g.source))
    selected = [u for u in selected if u in reach]
    if not selected:
        return [], None
    p = init_partial(g)
    target = set(selected)
    while not target <= p.nodes:
        acts = valid_actions(p)
        p = attach(p, acts[int(rng.integers(len(acts)))])
    return selected, p.to_tree(selected)


def greedy_selection(candidates, aoi, weights, fraction: float) -> list[int]:
    candidates = sorted(candidates)
    k = int(math.ceil(fraction * len(candidates) - 1e-12))
    ranked = sorted(candidates, key=lambda u: (-weights[u] * aoi[u], u))
    return sorted(ranked[:k])


def greedy_tree(g: NetworkGraph, selected) -> MulticastTree | None:
    """Grow from the source by always adding the globally cheapest frontier link."""
    target = set(selected)
    if not target:
        return None
    p = init_partial(g)
    while not target <= p.nodes:
        best = None
        for u in sorted(p.nodes):
            for v in g.neighbors(u):
                if v in p.nodes:
                    continue
                key = (g.cost(u, v), edge_key(u, v))
                if best is None or key < best[0]:
                    best = (key, v)
        if best is None:
            return None
        p = attach(p, best[1])
    return p.to_tree(selected)


def greedy_policy(g: NetworkGraph, candidates, aoi, weights, fraction: float):
    reach = set(component_of(g, g.source))
    candidates = [u for u in candidates if u in reach]
    selected = greedy_selection(candidates, aoi, weights, fraction)
    if not selected:
        return [], None
    return selected, greedy_tree(g, selected)


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}
        self.rank = {i: 0 for i in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def kruskal_mst(g: NetworkGraph) -> MulticastTree:
    """Minimum spanning tree of the source's component (ties by cost, then
    lower endpoint id)."""
    comp = component_of(g, g.source)
    members = set(comp)
    uf = _UnionFind(comp)
    chosen = {}
    for (u, v), c in sorted(g.edges.items(), key=lambda kv: (kv[1], kv[0])):
        if u in members and uf.union(u, v):
            chosen[(u, v)] = c
            if len(chosen) == len(comp) - 1:
                break
    covered = [u for u in g.destinations if u in members]
    return MulticastTree(chosen, g.source, frozenset(covered))


def mst_policy(g: NetworkGraph, candidates):
    t = kruskal_mst(g)
    selected = sorted(u for u in candidates if u in t.covered)
    if not selected:
        return [], None
    return selected, t
