import copy

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoi_lab.baselines import kruskal_mst
from aoi_lab.errors import DomainError, ParameterError
from aoi_lab.graph import (
    MulticastTree, NetworkGraph, TopologyProcess, assign_roles, generate_er, resample_topology,
    shortest_hops,
)
from aoi_lab.sim import (
    MetricsTrace, advance_slot, avg_energy, avg_weighted_aoi, init_state, inject_tree,
    predicted_arrival, weighted_peak_age,
)

T4 = [(0, 1), (1, 2), (1, 3)]
T4B = [(0, 2), (0, 1), (1, 3)]


def _tree(g, edges, covered):
    return MulticastTree.from_edges(g, edges, covered)


def test_init_state(g4):
    assert init_state(g4).aoi[[2, 3]].tolist() == [0, 0]
    s = init_state(g4, 5)
    assert s.aoi[[2, 3]].tolist() == [5, 5] and s.clock == 0 and s.energy_total == 0
    with pytest.raises(ParameterError):
        init_state(g4, -1)


def test_inject_charges_full_tree(g4):
    t4b = _tree(g4, T4B, {2, 3})
    s = inject_tree(init_state(g4), t4b, {2, 3})
    assert len(s.in_flight) == 2 and s.energy_total == 7
    s = inject_tree(init_state(g4), t4b, {3})
    assert len(s.in_flight) == 1 and s.energy_total == 7
    s = inject_tree(init_state(g4), None, set())
    assert not s.in_flight and s.energy_total == 0
    with pytest.raises(DomainError):
        inject_tree(init_state(g4), _tree(g4, [(0, 1), (1, 3)], {3}), {2})


def test_packet_advances_one_hop(g4):
    s = inject_tree(init_state(g4), _tree(g4, T4, {2, 3}), {2})
    advance_slot(s)
    assert s.in_flight[0].position == 1 and s.clock == 1


def test_smallest_age_wins(g4):
    g = NetworkGraph(["S", "R", "D"], [0, 0, 1.0], {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.0})
    s = init_state(g, 10)
    long = _tree(g, [(0, 1), (1, 2)], {2})
    short = _tree(g, [(0, 2)], {2})
    # packet generated at 0 on a 2-hop route and at 1 on a 1-hop route both land at slot 2
    inject_tree(s, long, {2})
    advance_slot(s)
    inject_tree(s, short, {2})
    advance_slot(s)
    assert s.aoi[2] == 1
    assert [a.aoi_after for a in s.trace.records[-1].arrivals] == [1.0]

    # ages 3 and 5 arriving together: the age-3 packet defines the new AoI
    path = NetworkGraph(["S"] + ["R"] * 4 + ["D"], [0] * 5 + [1.0],
                        {(i, i + 1): 1.0 for i in range(5)} | {(0, 3): 1.0})
    s = init_state(path, 20)
    inject_tree(s, _tree(path, [(i, i + 1) for i in range(5)], {5}), {5})
    advance_slot(s)
    advance_slot(s)
    inject_tree(s, _tree(path, [(0, 3), (3, 4), (4, 5)], {5}), {5})
    for _ in range(3):
        advance_slot(s)
    assert s.clock == 5 and s.aoi[5] == 3


def test_drop_on_removed_edge(g4):
    s = inject_tree(init_state(g4, 4), _tree(g4, T4, {2, 3}), {3})
    advance_slot(s)
    s.graph = g4.with_edges({(0, 1): 1.0, (1, 2): 2.0, (0, 2): 5.0})
    advance_slot(s)
    assert s.drops == 1 and not s.in_flight and s.aoi[3] == 6


def test_stale_packet_does_not_raise_aoi(g4):
    s = init_state(g4, 0)
    inject_tree(s, _tree(g4, T4, {2, 3}), {2})
    advance_slot(s)
    advance_slot(s)
    # age 2 packet arrives while A_2 would be 2: it does not qualify
    assert s.aoi[2] == 2 and not s.trace.records[-1].arrivals


def test_predicted_arrival_examples(g4):
    t4b = _tree(g4, T4B, {2, 3})
    assert predicted_arrival(t4b, 2, 5) == 6
    s = init_state(g4, 9)
    for _ in range(5):
        advance_slot(s)
    inject_tree(s, t4b, {2})
    advance_slot(s)
    assert s.clock == 6 and s.aoi[2] == 1
    t4 = _tree(g4, T4, {2, 3})
    assert predicted_arrival(t4, 3, 0) == 2
    s = inject_tree(init_state(g4, 9), t4, {3})
    advance_slot(s)
    advance_slot(s)
    assert s.aoi[3] == 2
    with pytest.raises(DomainError):
        predicted_arrival(_tree(g4, [(0, 1)], ()), 3, 0)


@given(st.integers(3, 12), st.integers(0, 5000), st.integers(0, 6))
def test_static_topology_matches_prediction(n, seed, start):
    g = assign_roles(generate_er(n, 0.5, seed=seed), 0.4, seed=seed)
    reach = set(np.flatnonzero(np.isfinite(shortest_hops(g, g.source))).tolist())
    dests = [u for u in g.destinations if u in reach]
    if not dests:
        return
    mst = kruskal_mst(g)
    t = MulticastTree(mst.edges, mst.root, frozenset(dests))
    s = init_state(g, 50)
    for _ in range(start):
        advance_slot(s)
    inject_tree(s, t, dests)
    horizon = max(t.hops(u) for u in dests)
    for _ in range(horizon):
        advance_slot(s)
    for u in dests:
        at = predicted_arrival(t, u, start)
        rec = s.trace.records[at - 1]
        assert rec.t == at and rec.aoi[u] == t.hops(u)


@pytest.mark.parametrize("edges", [T4, T4B])
def test_aoi_reduction_sums_to_previous_age(g4, edges):
    t = _tree(g4, edges, {2, 3})
    for a0 in (3.0, 7.0):
        actual = init_state(g4, a0)
        counter = copy.deepcopy(actual)
        inject_tree(actual, t, {2, 3})
        for u in (2, 3):
            h = t.hops(u)
            a = [actual.aoi[u]]
            c = [counter.aoi[u]]
            sa, sc = copy.deepcopy(actual), copy.deepcopy(counter)
            for _ in range(h):
                advance_slot(sa)
                advance_slot(sc)
                a.append(sa.aoi[u])
                c.append(sc.aoi[u])
            assert sum(np.array(c) - np.array(a)) == a0


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10))
def test_monotone_staleness_and_energy(pattern, a0):
    from aoi_lab.graph import fixture_g4
    g = fixture_g4()
    t = _tree(g, T4, {2, 3})
    s = init_state(g, a0)
    total = 0.0
    for send in pattern:
        before = s.aoi.copy()
        if send:
            inject_tree(s, t, {2, 3})
            total += 4.0
        advance_slot(s)
        arrived = {a.dest for a in s.trace.records[-1].arrivals}
        for u in (2, 3):
            if u not in arrived:
                assert s.aoi[u] == before[u] + 1
        assert s.energy_total == total
    assert avg_energy(s.trace) == pytest.approx(total / len(pattern))


def test_determinism_under_resampling():
    base = assign_roles(generate_er(10, 0.4, seed=2), 0.3, seed=3)
    proc = TopologyProcess(base, 3, "er", {"p": 0.4}, seed=11)

    def run():
        s = init_state(base, 1)
        for t in range(12):
            s.graph = resample_topology(proc, t)
            if t % 2 == 0 and np.isfinite(shortest_hops(s.graph, s.graph.source)[base.destinations[0]]):
                mst = kruskal_mst(s.graph)
                inject_tree(s, MulticastTree(mst.edges, mst.root, frozenset([base.destinations[0]])),
                            [base.destinations[0]])
            advance_slot(s)
        return [(r.t, r.aoi.tolist(), r.energy) for r in s.trace.records], s.drops

    assert run() == run()


# -- metrics --------------------------------------------------------------------------

def test_avg_weighted_aoi_examples():
    assert avg_weighted_aoi(MetricsTrace.from_aoi([[1], [2], [3]]), [1.0]) == 2
    assert avg_weighted_aoi(MetricsTrace.from_aoi([[10, 5]] * 4), [0.6, 0.4]) == pytest.approx(8)
    assert avg_weighted_aoi(MetricsTrace.from_aoi(np.zeros((3, 2))), [0.5, 0.5]) == 0
    with pytest.raises(DomainError):
        avg_weighted_aoi(MetricsTrace(), [1.0])


def test_peak_age_examples():
    g = NetworkGraph(["S", "R", "D"], [0, 0, 1.0], {(0, 1): 1.0, (1, 2): 1.0})
    s = init_state(g, 0)
    advance_slot(s)
    inject_tree(s, _tree(g, [(0, 1), (1, 2)], {2}), {2})
    advance_slot(s)
    advance_slot(s)
    ev = s.trace.records[-1].arrivals
    assert s.clock == 3 and ev[0].peak_aoi == 3 and s.aoi[2] == 2
    assert weighted_peak_age(s.trace, g.weights) == 3
    with pytest.raises(DomainError):
        weighted_peak_age(MetricsTrace.from_aoi([[1.0]]), [1.0])


def test_peak_age_mean_of_two():
    from aoi_lab.sim import Arrival, SlotRecord
    tr = MetricsTrace([SlotRecord(1, np.array([2.0]), 0, [Arrival(0, 0, 3.0, 1.0)]),
                       SlotRecord(2, np.array([1.0]), 0, [Arrival(0, 0, 5.0, 1.0)])])
    assert weighted_peak_age(tr, [1.0]) == 4


def test_avg_energy_examples(g4):
    t4, t4b = _tree(g4, T4, {2, 3}), _tree(g4, T4B, {2, 3})
    for tree, every, expected in ((t4, 1, 4.0), (None, 1, 0.0), (t4b, 2, 3.5)):
        s = init_state(g4)
        for k in range(10):
            if tree is not None and k % every == 0:
                inject_tree(s, tree, {2, 3})
            advance_slot(s)
        assert avg_energy(s.trace) == pytest.approx(expected)
    with pytest.raises(DomainError):
        avg_energy(MetricsTrace())
