"""Datasets, learned agents, the training loop and evaluation cells."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .a2c import (Adam, Episode, LagrangeState, actor_gradients, apply_step,
                  compute_returns_and_advantages, cosine_lr, critic_gradients, lagrange_step)
from .baselines import greedy_policy, mst_policy, random_policy
from .config import ALGOS, ExperimentConfig, serialize
from .errors import DomainError, ParameterError, UsageError
from .graph import (NetworkGraph, TopologyProcess, assign_roles, component_of, format_edge_list,
                    generate_ba, generate_er, parse_edge_list, resample_topology)
from .nets import NetConfig, SchedulerNet, TreeGenNet
from .sched_mdp import build_state, check_node_bound, sample_selection
from .sim import (MetricsTrace, advance_slot, avg_energy, avg_weighted_aoi, init_state,
                  inject_tree, weighted_peak_age)
from .tree_mdp import TreeEpisodeContext, quality, rollout

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ["step", "agent", "loss_actor", "loss_critic", "entropy", "grad_norm",
                    "lr", "lambda", "avg_energy", "avg_r1"]
METRICS_HEADER = ["dataset", "seed", "c_bar", "algo", "slots", "avg_weighted_aoi",
                  "weighted_peak_age", "avg_energy", "drops"]
STATIC_PERIOD = 1 << 30


# --------------------------------------------------------------------------
# datasets

@dataclass
class GraphRecord:
    id: str
    graph: NetworkGraph
    kind: str
    params: dict
    seed: int

    def process(self, period: int, seed: int | None = None, cost_range=(0.5, 2.0)) -> TopologyProcess:
        return TopologyProcess(self.graph, period, self.kind, dict(self.params),
                               self.seed if seed is None else seed, cost_range)


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def make_dataset(cfg: ExperimentConfig, split: str) -> list[GraphRecord]:
    if cfg.dataset == "ingested":
        raise UsageError("ingested datasets are loaded from disk, not generated")
    count = cfg.train_graphs if split == "train" else cfg.test_graphs
    code = 0 if split == "train" else 1
    cost = (cfg.cost_low, cfg.cost_high)
    out = []
    for i in range(count):
        seed = _seed_int(cfg.graph_seed, code, i)
        if cfg.dataset == "er":
            base = generate_er(cfg.nodes, cfg.er_p, seed=seed, cost_range=cost)
            params = {"p": cfg.er_p}
        else:
            base = generate_ba(cfg.nodes, cfg.ba_m, seed=seed, cost_range=cost)
            params = {"m": cfg.ba_m}
        g = assign_roles(base, cfg.dest_fraction, seed=seed + 1)
        out.append(GraphRecord(f"{cfg.dataset}-{split}-{i:03d}", g, cfg.dataset, params, seed))
    return out


def write_dataset(records: list[GraphRecord], directory: str):
    os.makedirs(directory, exist_ok=True)
    lines = ["id\tkind\tparams\tseed\tfile"]
    for r in records:
        name = f"{r.id}.graph"
        with open(os.path.join(directory, name), "w", newline="\n") as fh:
            fh.write(format_edge_list(r.graph))
        lines.append(f"{r.id}\t{r.kind}\t{json.dumps(r.params, sort_keys=True)}\t{r.seed}\t{name}")
    with open(os.path.join(directory, "manifest.tsv"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(directory: str, split: str | None = None) -> list[GraphRecord]:
    path = os.path.join(directory, "manifest.tsv")
    if not os.path.exists(path):
        raise UsageError(f"no dataset manifest in {directory}")
    out = []
    with open(path) as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    for gid, kind, params, seed, name in rows[1:]:
        if split is not None and f"-{split}-" not in gid:
            continue
        with open(os.path.join(directory, name)) as gf:
            g = parse_edge_list(gf.read())
        out.append(GraphRecord(gid, g, kind, json.loads(params), int(seed)))
    return out


def ingest_graphs(paths, cfg: ExperimentConfig) -> list[GraphRecord]:
    """User-supplied snapshots in the edge-list format (static topology)."""
    out = []
    for i, p in enumerate(sorted(paths)):
        with open(p) as fh:
            g = parse_edge_list(fh.read())
        if not g.destinations:
            g = assign_roles(g, cfg.dest_fraction, seed=_seed_int(cfg.graph_seed, 2, i))
        out.append(GraphRecord(os.path.splitext(os.path.basename(p))[0], g, "ingested", {}, i))
    return out


def reachable_candidates(g: NetworkGraph) -> list[int]:
    reach = set(component_of(g, g.source))
    return [u for u in g.destinations if u in reach]


# --------------------------------------------------------------------------
# learned agent

class TGMSAgent:
    """Scheduler network choosing the destination subset and tree-generator
    network growing the tree node by node."""

    def __init__(self, net_cfg: NetConfig, seed: int = 0):
        root = np.random.default_rng([seed, 99])
        self.sched = SchedulerNet(net_cfg, root)
        self.tree = TreeGenNet(net_cfg, root)

    @property
    def algo(self) -> str:
        return "tgms" if self.sched.cfg.attend else "tgms-mlp"

    def select(self, sim, candidates, rng, mode="stochastic", dropout_rng=None):
        state = build_state(sim, candidates)
        out = self.sched.forward(state, rng=dropout_rng)
        if not candidates:
            return out, None, None, None
        outcome = sample_selection(out.mu.value, out.sigma.value, rng, mode, candidates)
        tape = out.tape
        logp = nn.sum_(nn.gaussian_log_density(tape.const(outcome.scores), out.mu, out.sigma))
        ent = nn.sum_(nn.log(out.sigma)) + 0.5 * len(candidates) * math.log(2 * math.pi * math.e)
        return out, outcome, logp, ent

    def tree_policy(self, sample: bool = True, dropout_rng=None):
        net = self.tree

        def policy(p, actions, ctx, rng):
            out = net.forward(p, ctx, rng=dropout_rng, actions=actions)
            lp = nn.take(out.log_probs, actions)
            probs = np.exp(lp.value)
            probs /= probs.sum()
            k = int(rng.choice(len(actions), p=probs)) if sample else int(np.argmax(probs))
            ent = -nn.sum_(nn.exp(lp) * lp)
            return actions[k], {"log_prob": nn.reshape(nn.take(lp, [k]), ()), "entropy": ent,
                                "value": out.value}
        return policy

    def act(self, sim, candidates, rng, lam, c_bar, sample=True):
        _, outcome, _, _ = self.select(sim, candidates, rng, "stochastic" if sample else "greedy")
        if outcome is None or not outcome.selected:
            return [], None
        ctx = TreeEpisodeContext.for_graph(sim.graph, outcome.selected, sim.aoi, lam, c_bar)
        res = rollout(sim.graph, ctx, self.tree_policy(sample), rng)
        return outcome.selected, res.tree

    # checkpoint payload
    def arrays(self) -> dict:
        out = {}
        for prefix, store in (("sched", self.sched.store), ("tree", self.tree.store)):
            for n, v in store.params.items():
                out[f"{prefix}/{n}"] = v
        return out

    def load_arrays(self, arrays: dict):
        for prefix, store in (("sched", self.sched.store), ("tree", self.tree.store)):
            for n in store.names():
                key = f"{prefix}/{n}"
                if key not in arrays:
                    raise UsageError(f"checkpoint lacks parameter {key}")
                if arrays[key].shape != store.params[n].shape:
                    raise UsageError(f"checkpoint shape mismatch for {key}")
                store.params[n][...] = arrays[key]


def net_config_for(cfg: ExperimentConfig, algo: str) -> NetConfig:
    from dataclasses import replace
    return replace(cfg.net, attend=(algo != "tgms-mlp"))


def load_agent(path: str, cfg: ExperimentConfig, algo: str) -> tuple[TGMSAgent, dict]:
    if not os.path.exists(path):
        raise UsageError(f"checkpoint {path} does not exist")
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("algo") != algo:
        raise UsageError(f"checkpoint was trained for {meta.get('algo')!r}, not {algo!r}")
    net_cfg = NetConfig(**meta["net"]) if "net" in meta else net_config_for(cfg, algo)
    agent = TGMSAgent(net_cfg)
    agent.load_arrays(arrays)
    return agent, meta


# --------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    rows: list
    slot_r1: list
    lam: float
    slots: int
    incidents: int = 0


class Trainer:
    """Alternates scheduler and tree-generator episodes over the training
    graphs, one graph per ``cfg.slots``-slot episode."""

    def __init__(self, cfg: ExperimentConfig, graphs: list[GraphRecord], seed: int = 0,
                 algo: str = "tgms", c_bar: float | None = None):
        if not graphs:
            raise UsageError("training needs at least one graph")
        if algo not in ("tgms", "tgms-mlp"):
            raise UsageError(f"algo {algo!r} is not trainable")
        for r in graphs:
            check_node_bound(r.graph, cfg.max_nodes)
        self.cfg, self.graphs, self.seed, self.algo = cfg, graphs, seed, algo
        self.c_bar = cfg.c_bar[0] if c_bar is None else float(c_bar)
        tc = cfg.trainer
        self.agent = TGMSAgent(net_config_for(cfg, algo), seed)
        s, t = self.agent.sched, self.agent.tree
        kw = dict(beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps, centered=tc.centered,
                  weight_decay=tc.weight_decay)
        self.opts = {
            "sched_actor": Adam(s.store, s.actor_names, **kw),
            "sched_critic": Adam(s.store, s.critic_names, **kw),
            "tree_actor": Adam(t.store, t.actor_names, **kw),
            "tree_critic": Adam(t.store, t.critic_names, **kw),
        }
        self.lagrange = LagrangeState(tc.lambda_init)
        self.rng = np.random.default_rng([seed, 1])
        self.slot = 0
        self.episode = 0
        self.rows: list[list] = []
        self.slot_r1: list[float] = []
        self.incidents = 0
        self.selection_counts = [0, 0]   # destinations selected, candidates offered
        self._window = {"scheduler": [0.0, 0, 0.0], "tree": [0.0, 0, 0.0]}  # energy, slots, r1

    # -- bookkeeping --------------------------------------------------------
    def _lr(self, key: str) -> float:
        tc = self.cfg.trainer
        base = getattr(tc, key + "_lr")
        return cosine_lr(self.opts[key].t, tc.T0, tc.T_mult, tc.eta_min, base)

    def _note_slot(self, energy: float, r1: float):
        for w in self._window.values():
            w[0] += energy
            w[1] += 1
            w[2] += float(r1)

    def _row(self, agent: str, la, lc, ent, gn, lr):
        w = self._window[agent]
        n = max(w[1], 1)
        self.rows.append([self.slot, agent, la, lc, ent, gn, lr, self.lagrange.lam,
                          w[0] / n, w[2] / n])
        self._window[agent] = [0.0, 0, 0.0]

    def _update(self, agent: str, ep: Episode, gamma: float):
        actor, critic = f"{agent}_actor", f"{agent}_critic"
        ret, adv = compute_returns_and_advantages(ep, gamma)
        oa, oc = self.opts[actor], self.opts[critic]
        oa.store.zero_grad()
        la, ent = actor_gradients(ep, adv, self.cfg.trainer.entropy_coef)
        lc = critic_gradients(ep, ret)
        lr_a, lr_c = self._lr(actor), self._lr(critic)
        gn, ok_a = apply_step(oa, lr_a, self.cfg.trainer.grad_clip)
        _, ok_c = apply_step(oc, lr_c, self.cfg.trainer.grad_clip)
        if not (ok_a and ok_c):
            self.incidents += 1
            log.warning("non-finite gradient in %s update at slot %d; step skipped", agent, self.slot)
        self._row("scheduler" if agent == "sched" else "tree", la, lc, ent, gn, lr_a)

    # -- one graph episode --------------------------------------------------
    def _run_episode(self):
        cfg, tc = self.cfg, self.cfg.trainer
        rec = self.graphs[self.episode % len(self.graphs)]
        period = cfg.resample_period if cfg.train_resample else STATIC_PERIOD
        proc = rec.process(period, _seed_int(rec.seed, self.seed, self.episode),
                           (cfg.cost_low, cfg.cost_high))
        sim = init_state(rec.graph, cfg.initial_aoi)
        agent = self.agent
        drop_rng = self.rng if cfg.net.dropout > 0 else None
        sched_ep = Episode()
        for t in range(cfg.slots):
            sim.graph = resample_topology(proc, t)
            cands = reachable_candidates(sim.graph)
            out, outcome, logp, ent = agent.select(sim, cands, self.rng, "stochastic", drop_rng)
            r1, tree, selected = 0.0, None, []
            self.selection_counts[1] += len(cands)
            if outcome is not None and outcome.selected:
                self.selection_counts[0] += len(outcome.selected)
                selected = outcome.selected
                ctx = TreeEpisodeContext.for_graph(sim.graph, selected, sim.aoi,
                                                   self.lagrange.lam, self.c_bar)
                res = rollout(sim.graph, ctx, agent.tree_policy(True, drop_rng), self.rng)
                r1 = res.total_reward
                if not res.failed:
                    expected = quality(res.terminal, ctx) - quality(res.steps[0].state, ctx)
                    if abs(r1 - expected) > 1e-9 * max(1.0, abs(expected)):
                        raise DomainError("tree rewards do not telescope")
                tree = res.tree
                tree_ep = Episode()
                for st in res.steps:
                    tree_ep.add(st.info["log_prob"], st.info["entropy"], st.info["value"], st.reward)
                if len(tree_ep):
                    self._update("tree", tree_ep, tc.gamma_tree)
            if outcome is not None:
                sched_ep.add(logp, ent, out.value, r1)
            inject_tree(sim, tree, selected)
            advance_slot(sim)
            energy = sim.trace.records[-1].energy
            self.lagrange.record(energy)
            self._note_slot(energy, r1)
            self.slot_r1.append(r1)
            self.slot += 1
            last = t == cfg.slots - 1
            if (self.slot % tc.sched_interval == 0 or last) and len(sched_ep):
                if not last:
                    nxt = build_state(sim, reachable_candidates(sim.graph))
                    sched_ep.bootstrap = float(agent.sched.forward(nxt).value.value)
                self._update("sched", sched_ep, tc.gamma_sched)
                sched_ep = Episode()
            if self.slot % tc.lambda_interval == 0:
                self.lagrange = lagrange_step(self.lagrange, self.lagrange.avg_energy,
                                              self.c_bar, tc.lambda_lr, tc.lagrange_mode)
        self.episode += 1

    def run(self, total_slots: int, on_checkpoint=None):
        """Train until ``total_slots`` (rounded up to whole episodes)."""
        every = max(self.cfg.checkpoint_every, 1)
        while self.slot < total_slots:
            before = self.slot
            self._run_episode()
            if on_checkpoint is not None and self.slot // every > before // every:
                on_checkpoint(self)
        return TrainResult(self.rows, self.slot_r1, self.lagrange.lam, self.slot, self.incidents)

    # -- checkpoints --------------------------------------------------------
    def checkpoint_payload(self):
        arrays = dict(self.agent.arrays())
        for key, opt in self.opts.items():
            arrays.update(opt.state_arrays(key))
        meta = {
            "algo": self.algo, "seed": self.seed, "c_bar": self.c_bar,
            "slot": self.slot, "episode": self.episode,
            "lambda": self.lagrange.lam, "lambda_energy": self.lagrange.energy_acc,
            "lambda_slots": self.lagrange.slots,
            "opt_steps": {k: o.t for k, o in self.opts.items()},
            "rng": self.rng.bit_generator.state, "incidents": self.incidents,
            "window": self._window, "net": asdict(self.agent.sched.cfg),
            "selection_counts": list(self.selection_counts),
            "selection_fraction": self.selection_fraction,
            "config": serialize(self.cfg),
        }
        return arrays, meta

    def save(self, path: str):
        arrays, meta = self.checkpoint_payload()
        tmp = path + ".tmp"
        nn.save_checkpoint(tmp, arrays, meta)
        os.replace(tmp, path)

    def restore(self, path: str):
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("algo") != self.algo:
            raise UsageError(f"checkpoint was trained for {meta.get('algo')!r}")
        self.agent.load_arrays(arrays)
        for key, opt in self.opts.items():
            opt.load_state_arrays(key, arrays, meta["opt_steps"][key])
        self.slot, self.episode = meta["slot"], meta["episode"]
        self.lagrange = LagrangeState(meta["lambda"], meta["lambda_energy"], meta["lambda_slots"])
        self.rng.bit_generator.state = meta["rng"]
        self.incidents = meta["incidents"]
        self._window = {k: list(v) for k, v in meta["window"].items()}
        self.selection_counts = list(meta.get("selection_counts", [0, 0]))

    @property
    def selection_fraction(self) -> float:
        """Mean share of reachable destinations the scheduler selected."""
        sel, offered = self.selection_counts
        return sel / offered if offered else 0.0


def format_row(row) -> list[str]:
    out = []
    for v in row:
        if isinstance(v, (float, np.floating)):
            out.append(repr(float(v)))
        elif isinstance(v, np.integer):
            out.append(str(int(v)))
        else:
            out.append(str(v))
    return out


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(format_row(r))
    return buf.getvalue()


# --------------------------------------------------------------------------
# evaluation

@dataclass
class CellResult:
    dataset: str
    seed: int
    c_bar: float
    algo: str
    slots: int
    avg_weighted_aoi: float
    weighted_peak_age: float
    avg_energy: float
    drops: int
    trace: MetricsTrace = field(repr=False, default=None)
    selections: int = 0

    def row(self) -> list:
        return [self.dataset, self.seed, self.c_bar, self.algo, self.slots,
                self.avg_weighted_aoi, self.weighted_peak_age, self.avg_energy, self.drops]


def run_cell(cfg: ExperimentConfig, rec: GraphRecord, c_bar: float, algo: str, seed: int,
             agent: TGMSAgent | None = None, lam: float | None = None,
             slots: int | None = None) -> CellResult:
    """Simulate one (graph, budget, algorithm, seed) cell with topology
    resampling. The topology sequence depends only on (graph, seed), so
    algorithms are compared on identical network dynamics."""
    if algo not in ALGOS:
        raise UsageError(f"unknown algo {algo!r}")
    if algo in ("tgms", "tgms-mlp") and agent is None:
        raise UsageError(f"{algo} needs a trained checkpoint")
    slots = cfg.slots if slots is None else slots
    lam = cfg.trainer.lambda_init if lam is None else lam
    proc = rec.process(cfg.resample_period, _seed_int(rec.seed, seed, 77),
                       (cfg.cost_low, cfg.cost_high))
    rng = np.random.default_rng([rec.seed, seed, ALGOS.index(algo), int(round(c_bar * 1000))])
    sim = init_state(rec.graph, cfg.initial_aoi)
    sample = cfg.eval_mode == "sample"
    selections = 0
    for t in range(slots):
        sim.graph = resample_topology(proc, t)
        g = sim.graph
        cands = reachable_candidates(g)
        if algo == "random":
            sel, tree = random_policy(g, cands, rng)
        elif algo == "greedy":
            sel, tree = greedy_policy(g, cands, sim.aoi, g.weights, cfg.greedy_fraction)
        elif algo == "mst":
            sel, tree = mst_policy(g, cands)
        else:
            sel, tree = agent.act(sim, cands, rng, lam, c_bar, sample)
        selections += len(sel)
        inject_tree(sim, tree, sel)
        advance_slot(sim)
    w = rec.graph.weights
    try:
        peak = weighted_peak_age(sim.trace, w)
    except DomainError:
        peak = float("nan")
    return CellResult(rec.id, seed, float(c_bar), algo, slots, avg_weighted_aoi(sim.trace, w),
                      peak, avg_energy(sim.trace), sim.drops, sim.trace, selections)


def _cell_job(args):
    cfg, rec, c_bar, algo, seed, ckpt, lam = args
    agent = load_agent(ckpt, cfg, algo)[0] if ckpt else None
    return run_cell(cfg, rec, c_bar, algo, seed, agent, lam).row()


def evaluate(cfg: ExperimentConfig, graphs: list[GraphRecord], algo: str,
             checkpoint: str | None = None, workers: int = 1) -> list[list]:
    """Every (graph, budget, seed) cell for one algorithm, rows sorted by key."""
    lam = None
    if algo in ("tgms", "tgms-mlp"):
        if checkpoint is None:
            raise UsageError(f"{algo} evaluation needs --checkpoint")
        _, meta = load_agent(checkpoint, cfg, algo)
        lam = meta.get("lambda")
    jobs = [(cfg, rec, c, algo, s, checkpoint, lam)
            for rec in graphs for c in cfg.c_bar for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_cell_job, jobs))
    else:
        agent = load_agent(checkpoint, cfg, algo)[0] if checkpoint and lam is not None else None
        rows = [run_cell(cfg, rec, c, algo, s, agent, lam).row() for cfg, rec, c, algo, s, _, lam in jobs]
    rows.sort(key=lambda r: (r[0], r[2], r[3], r[1]))
    return rows
