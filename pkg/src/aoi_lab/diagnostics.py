"""Finite-difference checks of the two full networks on small fixture graphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .graph import assign_roles, fixture_g4, generate_er
from .nets import NetConfig, SchedulerNet, TreeGenNet
from .sched_mdp import build_state
from .sim import init_state
from .tree_mdp import TreeEpisodeContext, attach, init_partial, valid_actions

CHECK_NET = NetConfig(hidden=8, heads=2, layers=2)


def fixture_graphs():
    er = assign_roles(generate_er(8, 0.4, seed=11), 0.3, seed=12)
    return [fixture_g4(), er]


@dataclass
class NetworkCheck:
    """Worst relative error per parameter over every point and loss."""
    network: str
    per_param: dict = field(default_factory=dict)
    checked: int = 0
    kink_skipped: int = 0
    tolerance: float = 1e-4

    def absorb(self, rep: nn.GradCheckReport):
        for k, v in rep.per_param.items():
            self.per_param[k] = max(self.per_param.get(k, 0.0), float(v))
        self.checked += rep.checked
        self.kink_skipped += rep.kink_skipped

    @property
    def worst(self) -> tuple[str, float]:
        if not self.per_param:
            return "-", 0.0
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.worst[1] < self.tolerance


def _sched_losses(net: SchedulerNet, g, rng):
    sim = init_state(g)
    sim.aoi[g.destinations] = rng.integers(1, 12, len(g.destinations))
    s = build_state(sim)
    score = rng.standard_normal(len(s.candidates))

    def policy(tape):
        out = net.forward(s, tape)
        return nn.sum_(nn.gaussian_log_density(tape.const(score), out.mu, out.sigma))

    def value(tape):
        return net.forward(s, tape).value
    return policy, value


def _tree_losses(net: TreeGenNet, g, rng):
    aoi = np.zeros(g.node_count)
    aoi[g.destinations] = rng.integers(1, 12, len(g.destinations))
    ctx = TreeEpisodeContext.for_graph(g, g.destinations[:2], aoi, 0.1, 4.0)
    p = init_partial(g)
    acts = valid_actions(p)
    if len(acts) > 1 and rng.random() < 0.5:
        p = attach(p, acts[0])
        acts = valid_actions(p)
    target = acts[int(rng.integers(len(acts)))]

    def policy(tape):
        out = net.forward(p, ctx, tape)
        return nn.reshape(nn.take(out.log_probs, [target]), ())

    def value(tape):
        return net.forward(p, ctx, tape).value
    return policy, value


def gradcheck_networks(seed: int = 0, points: int = 20, tolerance: float = 1e-4,
                       corrupt: float = 0.0, cfg: NetConfig = CHECK_NET,
                       entries_per_param: int | None = 6) -> list[NetworkCheck]:
    """Check both networks at ``points`` random parameter draws.

    The policy output is checked against every parameter. The value output
    is checked against the value-head weights only, because the value head
    reads a detached embedding by design.
    """
    graphs = fixture_graphs()
    results = [NetworkCheck("scheduler", tolerance=tolerance),
               NetworkCheck("tree", tolerance=tolerance)]
    for k in range(points):
        rng = np.random.default_rng([seed, k])
        g = graphs[k % len(graphs)]
        for res, cls, make in ((results[0], SchedulerNet, _sched_losses),
                               (results[1], TreeGenNet, _tree_losses)):
            net = cls(cfg, rng)
            policy, value = make(net, g, rng)
            kw = dict(tolerance=tolerance, corrupt=corrupt,
                      entries_per_param=entries_per_param, rng=rng)
            res.absorb(nn.finite_diff_check(policy, net.store, **kw))
            res.absorb(nn.finite_diff_check(value, net.store, names=net.critic_names, **kw))
    return results


def format_report(results: list[NetworkCheck]) -> str:
    lines = []
    for r in results:
        name, worst = r.worst
        lines.append(f"{r.network}: {'PASS' if r.passed else 'FAIL'} worst={worst:.3e} ({name}) "
                     f"checked={r.checked} kink_skipped={r.kink_skipped}")
        for p in sorted(r.per_param):
            lines.append(f"  {p:<14} {r.per_param[p]:.3e}")
    return "\n".join(lines)
