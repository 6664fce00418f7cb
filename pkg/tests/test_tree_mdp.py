import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoi_lab.errors import CapacityError, DomainError
from aoi_lab.graph import (
    MulticastTree, NetworkGraph, assign_roles, generate_er, is_multicast_tree, shortest_hops,
)
from aoi_lab.tree_mdp import (
    TreeEpisodeContext, attach, brute_force_best_tree, enumerate_rollouts, failure_penalty,
    greedy_reward_policy, init_partial, is_terminal, quality, rollout, scripted_policy,
    step_reward, tree_objective, uniform_policy, valid_actions,
)


def _ctx(g, selected=(2, 3), lam=0.1, c_bar=3.0, h_hat=2):
    aoi = np.array([0.0, 0.0, 10.0, 5.0])
    return TreeEpisodeContext.for_graph(g, selected, aoi, lam, c_bar, h_hat)


def _random_case(seed, n_max=8):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max + 1))
    g = assign_roles(generate_er(n, float(rng.uniform(0.3, 0.9)), seed=seed), 0.4, seed=seed + 1)
    reach = np.isfinite(shortest_hops(g, g.source))
    dests = [u for u in g.destinations if reach[u]][:3]
    aoi = np.zeros(n)
    aoi[g.destinations] = rng.integers(1, 15, len(g.destinations))
    ctx = TreeEpisodeContext.for_graph(g, dests, aoi, float(rng.uniform(0, 0.5)), 3.0)
    return g, ctx


# -- partial solutions --------------------------------------------------------------

def test_init_partial(g4):
    p = init_partial(g4)
    assert p.nodes == {0} and not p.edges and p.hops == {0: 0} and p.cost == 0


def test_valid_actions(g4):
    p = init_partial(g4)
    assert valid_actions(p) == [1, 2]
    assert valid_actions(attach(p, 1)) == [2, 3]
    full = attach(attach(attach(p, 1), 2), 3)
    assert valid_actions(full) == []


def test_attach_uses_cheapest_link(g4):
    p01 = attach(init_partial(g4), 1)
    assert (1, 2) in attach(p01, 2).edges
    assert attach(init_partial(g4), 2).edges == {(0, 2): 5.0}
    with pytest.raises(DomainError):
        attach(p01, 1)
    with pytest.raises(DomainError):
        attach(init_partial(g4), 3)


def test_attach_ties_pick_smaller_neighbour():
    g = NetworkGraph(["S", "R", "R", "D"], [0, 0, 0, 1.0],
                     {(0, 1): 1.0, (0, 2): 1.0, (1, 3): 2.0, (2, 3): 2.0})
    p = attach(attach(init_partial(g), 2), 1)
    assert attach(p, 3).parent[3] == 1


# -- quality and rewards --------------------------------------------------------------

def test_quality_examples(g4):
    ctx = _ctx(g4)
    p01 = attach(init_partial(g4), 1)
    assert quality(p01, ctx) == pytest.approx(0.2)
    t4b = attach(attach(attach(init_partial(g4), 2), 1), 3)
    assert quality(t4b, ctx) == pytest.approx(2.6)
    t4 = attach(attach(p01, 2), 3)
    assert quality(t4, ctx) == pytest.approx(-0.1)


def test_step_reward_examples(g4):
    ctx = _ctx(g4)
    p01 = attach(init_partial(g4), 1)
    assert step_reward(p01, attach(p01, 3), ctx) == pytest.approx(-0.1)
    # a router costs -lambda * c
    assert step_reward(init_partial(g4), p01, ctx) == pytest.approx(-0.1 * 1.0)


def test_quality_zero_without_cover_or_lambda(g4):
    ctx = _ctx(g4, lam=0.0)
    assert quality(attach(init_partial(g4), 1), ctx) == 0.0


def test_terminal_rules(g4):
    ctx = _ctx(g4)
    full = attach(attach(attach(init_partial(g4), 1), 2), 3)
    assert is_terminal(full, ctx)
    assert not is_terminal(init_partial(g4), _ctx(g4, selected=(2,)))
    cut = NetworkGraph(g4.roles, g4.weights, {(0, 1): 1.0, (1, 3): 1.0})
    ctx = _ctx(cut)
    assert is_terminal(init_partial(cut), ctx)
    res = rollout(cut, ctx, uniform_policy, np.random.default_rng(0))
    assert res.failed and res.tree is None
    assert res.penalty == pytest.approx(failure_penalty(init_partial(cut), ctx))
    assert res.penalty == pytest.approx(-(0.6 * 10 + 0.4 * 5))


# -- rollouts -------------------------------------------------------------------------------

def test_greedy_rollout_on_g4(g4):
    ctx = _ctx(g4)
    res = rollout(g4, ctx, greedy_reward_policy, np.random.default_rng(0))
    assert set(res.tree.edges) == {(0, 2), (0, 1), (1, 3)}
    # the return telescopes from q(initial) = lambda * C_bar = 0.3
    assert res.total_reward == pytest.approx(2.6 - 0.3)
    assert tree_objective(res.tree, ctx) == pytest.approx(2.6)
    best = max(enumerate_rollouts(g4, ctx), key=lambda r: r.total_reward)
    assert [s.action for s in best.steps] == [s.action for s in res.steps]


def test_forced_t4_rollout(g4):
    ctx = _ctx(g4)
    res = rollout(g4, ctx, scripted_policy([1, 2, 3]))
    assert set(res.tree.edges) == {(0, 1), (1, 2), (1, 3)}
    assert tree_objective(res.tree, ctx) == pytest.approx(-0.1)
    assert res.total_reward == pytest.approx(-0.1 - 0.3)


def test_rollout_is_reproducible():
    g, ctx = _random_case(4)
    a = rollout(g, ctx, uniform_policy, np.random.default_rng(9))
    b = rollout(g, ctx, uniform_policy, np.random.default_rng(9))
    assert [s.action for s in a.steps] == [s.action for s in b.steps]
    assert a.rewards == b.rewards


@given(st.integers(0, 100_000))
def test_rollout_invariants(seed):
    g, ctx = _random_case(seed, n_max=10)
    if not ctx.selected:
        return
    res = rollout(g, ctx, uniform_policy, np.random.default_rng(seed))
    p = init_partial(g)
    for s in res.steps:
        before = dict(p.hops)
        p = attach(p, s.action)
        assert is_multicast_tree(p.edges, g, ())
        assert all(p.hops[u] == h for u, h in before.items())
        bfs = MulticastTree(p.edges, p.root)
        assert all(bfs.hops(u) == p.hops[u] for u in p.nodes)
    assert is_multicast_tree(res.tree.edges, g, ctx.selected)
    total = 0.0
    for r in res.rewards:
        total += r
    q0 = quality(init_partial(g), ctx)
    assert math.isclose(total, quality(res.terminal, ctx) - q0, rel_tol=1e-12, abs_tol=1e-12)


# -- oracle -----------------------------------------------------------------------------

def test_brute_force_on_g4(g4):
    t, val = brute_force_best_tree(g4, _ctx(g4))
    assert set(t.edges) == {(0, 2), (0, 1), (1, 3)} and val == pytest.approx(2.6)


def test_brute_force_single_adjacent(g4):
    t, _ = brute_force_best_tree(g4, _ctx(g4, selected=(2,), lam=1.0))
    assert list(t.edges) == [(0, 2)]   # 0.6*0.5*10 - (5-3) = 1 beats 0 - (3-3) = 0
    g = NetworkGraph(["S", "D", "R"], [0, 1.0, 0], {(0, 1): 1.0, (1, 2): 1.0})
    ctx = TreeEpisodeContext.for_graph(g, [1], [0, 4.0, 0], 0.1, 1.0)
    t, _ = brute_force_best_tree(g, ctx)
    assert list(t.edges) == [(0, 1)]


def _min_cost_multicast(g, dests):
    best = math.inf
    edges = sorted(g.edges)
    for k in range(len(edges) + 1):
        for sub in itertools.combinations(edges, k):
            if is_multicast_tree(sub, g, dests):
                best = min(best, sum(g.edges[e] for e in sub))
    return best


@pytest.mark.parametrize("seed", range(8))
def test_large_lambda_gives_min_cost_tree(seed):
    g, ctx = _random_case(seed, n_max=6)
    if not ctx.selected:
        return
    big = TreeEpisodeContext(ctx.selected, ctx.aoi, ctx.weights, 1e6, ctx.c_bar, ctx.h_hat)
    t, _ = brute_force_best_tree(g, big)
    assert t.energy == pytest.approx(_min_cost_multicast(g, ctx.selected))


def test_oracle_capacity_limit():
    g = assign_roles(generate_er(13, 0.3, seed=0), 0.3, seed=0)
    ctx = TreeEpisodeContext.for_graph(g, g.destinations[:1], np.ones(13), 0.1, 3.0, h_hat=3)
    with pytest.raises(CapacityError):
        brute_force_best_tree(g, ctx)


@pytest.mark.parametrize("seed", range(25))
def test_no_rollout_beats_oracle(seed):
    g, ctx = _random_case(seed)
    if not ctx.selected:
        return
    _, best = brute_force_best_tree(g, ctx)
    for res in enumerate_rollouts(g, ctx, max_episodes=3000):
        assert tree_objective(res.tree, ctx) <= best + 1e-9


def test_rollouts_can_miss_the_optimum():
    # cheapest-link attachment always wires a-b once both are present
    g = NetworkGraph(["S", "D", "D"], [0, 0.5, 0.5], {(0, 1): 5.0, (0, 2): 5.0, (1, 2): 1.0})
    ctx = TreeEpisodeContext.for_graph(g, [1, 2], [0, 10.0, 10.0], 0.01, 3.0, h_hat=2)
    _, best = brute_force_best_tree(g, ctx)
    reachable = max(tree_objective(r.tree, ctx) for r in enumerate_rollouts(g, ctx))
    assert reachable < best
