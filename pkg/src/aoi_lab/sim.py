"""Slot-based multicast simulator: packet forwarding along frozen tree paths,
per-destination AoI, drop-on-inactive-link, energy accounting and metrics.

Within a slot the order is: the caller installs the slot's topology, injects
at most one tree (packets generated at the current clock), then calls
:func:`advance_slot`, which moves every packet one hop over the current
topology and records the AoI of the next slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError
from .graph import MulticastTree, NetworkGraph


@dataclass
class Packet:
    id: int
    generated_at: int
    dest: int
    route: list[int]
    position: int = 0


@dataclass
class Arrival:
    dest: int
    generated_at: int
    peak_aoi: float     # A_u(t-1) + 1, the value just before reception
    aoi_after: float


@dataclass
class SlotRecord:
    t: int
    aoi: np.ndarray
    energy: float = 0.0
    arrivals: list[Arrival] = field(default_factory=list)


@dataclass
class MetricsTrace:
    records: list[SlotRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_aoi(cls, aoi_rows, energies=None) -> "MetricsTrace":
        """Scripted trace from a (slots x nodes) AoI table."""
        rows = np.atleast_2d(np.asarray(aoi_rows, dtype=np.float64))
        energies = np.zeros(len(rows)) if energies is None else energies
        return cls([SlotRecord(t + 1, rows[t].copy(), float(energies[t]))
                    for t in range(len(rows))])


@dataclass
class SimState:
    clock: int
    graph: NetworkGraph
    aoi: np.ndarray
    in_flight: list[Packet] = field(default_factory=list)
    energy_total: float = 0.0
    trees_issued: int = 0
    drops: int = 0
    pending_energy: float = 0.0
    next_packet_id: int = 0
    trace: MetricsTrace = field(default_factory=MetricsTrace)

    @property
    def destinations(self) -> list[int]:
        return self.graph.destinations

    def in_flight_counts(self) -> np.ndarray:
        counts = np.zeros(self.graph.node_count)
        for p in self.in_flight:
            counts[p.dest] += 1
        return counts


def init_state(g: NetworkGraph, initial_aoi: float = 0.0) -> SimState:
    if initial_aoi < 0:
        raise ParameterError(f"initial_aoi must be nonnegative, got {initial_aoi}")
    aoi = np.zeros(g.node_count)
    aoi[g.destinations] = initial_aoi
    return SimState(clock=0, graph=g, aoi=aoi)


def inject_tree(s: SimState, t: MulticastTree | None, selected) -> SimState:
    """Generate one packet per selected destination along its tree path and
    charge the full tree energy. An empty selection sends nothing and costs
    nothing."""
    selected = sorted(set(selected))
    if not selected:
        return s
    if t is None:
        raise DomainError("non-empty selection without a tree")
    for u in selected:
        if u not in t.covered:
            raise DomainError(f"destination {u} not covered by tree")
    for u in selected:
        s.in_flight.append(Packet(s.next_packet_id, s.clock, u, t.path(u)))
        s.next_packet_id += 1
    e = t.energy
    s.energy_total += e
    s.pending_energy += e
    s.trees_issued += 1
    return s


def advance_slot(s: SimState) -> SimState:
    """Move every packet one hop, then update AoI for slot ``clock + 1``."""
    g = s.graph
    best_age: dict[int, int] = {}
    best_gen: dict[int, int] = {}
    survivors = []
    for p in s.in_flight:
        a, b = p.route[p.position], p.route[p.position + 1]
        if not g.has_edge(a, b):
            s.drops += 1
            continue
        p.position += 1
        if p.position == len(p.route) - 1:
            age = s.clock + 1 - p.generated_at
            if p.dest not in best_age or age < best_age[p.dest]:
                best_age[p.dest] = age
                best_gen[p.dest] = p.generated_at
        else:
            survivors.append(p)
    s.in_flight = survivors
    s.clock += 1
    dests = g.destinations
    stale = s.aoi[dests] + 1.0
    s.aoi[dests] = stale
    arrivals = []
    for u, age in sorted(best_age.items()):
        peak = s.aoi[u]
        # a packet older than what u already holds does not refresh it
        if age < peak:
            s.aoi[u] = age
            arrivals.append(Arrival(u, best_gen[u], float(peak), float(age)))
    s.trace.records.append(SlotRecord(s.clock, s.aoi.copy(), s.pending_energy, arrivals))
    s.pending_energy = 0.0
    return s


def predicted_arrival(t: MulticastTree, u: int, gen_slot: int) -> int:
    if u not in t.covered:
        raise DomainError(f"destination {u} not covered by tree")
    return gen_slot + t.hops(u)


def _weights_vector(weights, width: int) -> np.ndarray:
    if isinstance(weights, dict):
        w = np.zeros(width)
        for k, v in weights.items():
            w[k] = v
        return w
    return np.asarray(weights, dtype=np.float64)


def avg_weighted_aoi(trace: MetricsTrace, weights) -> float:
    """Finite-horizon mean over recorded slots of sum_u w_u A_u(t)."""
    if not trace.records:
        raise DomainError("empty trace")
    a = np.stack([r.aoi for r in trace.records])
    w = _weights_vector(weights, a.shape[1])
    return float((a @ w).mean())


def weighted_peak_age(trace: MetricsTrace, weights) -> float:
    """Mean over reception events of w_u times the AoI just before reception."""
    events = [e for r in trace.records for e in r.arrivals]
    if not events:
        raise DomainError("no arrivals in trace: peak age undefined")
    width = len(trace.records[0].aoi)
    w = _weights_vector(weights, width)
    return float(np.mean([w[e.dest] * e.peak_aoi for e in events]))


def avg_energy(trace: MetricsTrace) -> float:
    if not trace.records:
        raise DomainError("empty trace")
    return float(sum(r.energy for r in trace.records) / len(trace.records))
