"""Experiment configuration: a flat ``key = value`` text format with two
built-in profiles (``full`` scale, ``desk`` laptop scale)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from .a2c import TrainerConfig
from .errors import ParameterError, ParseError
from .nets import NetConfig

ALGOS = ("tgms", "tgms-mlp", "random", "greedy", "mst")
DATASETS = ("er", "ba", "ingested")


@dataclass
class ExperimentConfig:
    dataset: str = "er"
    nodes: int = 60
    er_p: float = 0.1
    ba_m: int = 2
    dest_fraction: float = 0.3
    cost_low: float = 0.5
    cost_high: float = 2.0
    train_graphs: int = 240
    test_graphs: int = 60
    slots: int = 100                 # slots per graph episode
    resample_period: int = 20
    train_resample: bool = False     # topology is static within a training episode
    train_slots: int = 24000
    checkpoint_every: int = 1000
    c_bar: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 7.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    graph_seed: int = 7
    algo: str = "tgms"
    initial_aoi: float = 1.0
    greedy_fraction: float = 0.3
    eval_mode: str = "sample"        # "sample" or "greedy" action choice for learned agents
    max_nodes: int = 128
    net: NetConfig = field(default_factory=NetConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ParameterError(f"unknown dataset {self.dataset!r}")
        if self.algo not in ALGOS:
            raise ParameterError(f"unknown algo {self.algo!r}")
        if self.eval_mode not in ("sample", "greedy"):
            raise ParameterError(f"unknown eval_mode {self.eval_mode!r}")
        if self.nodes < 2 or self.slots < 1 or self.resample_period < 1:
            raise ParameterError("nodes >= 2, slots >= 1 and resample_period >= 1 required")
        if not 0 < self.dest_fraction < 1:
            raise ParameterError("dest_fraction must be in (0, 1)")
        if self.train_slots < 0:
            raise ParameterError("train_slots must be nonnegative")
        if not 0 <= self.greedy_fraction <= 1:
            raise ParameterError("greedy_fraction must be in [0, 1]")
        self.c_bar = [float(c) for c in self.c_bar]
        self.seeds = [int(s) for s in self.seeds]


def desk_profile(**overrides) -> ExperimentConfig:
    """Laptop-scale protocol: 20 nodes, 24/6 graphs, 2000 training slots.

    Learning rates are far above the full-scale values because only a few
    hundred optimiser steps are taken. The multiplier starts near its
    working value and moves slowly, so the scheduler's reward is not
    dominated by a drifting energy price.
    """
    trainer = TrainerConfig(sched_actor_lr=3e-3, sched_critic_lr=3e-3,
                            tree_actor_lr=3e-3, tree_critic_lr=3e-3,
                            lambda_init=0.12, lambda_lr=1e-3)
    cfg = ExperimentConfig(nodes=20, er_p=0.2, train_graphs=24, test_graphs=6,
                           train_slots=2000, checkpoint_every=500,
                           net=NetConfig(hidden=64, heads=5, layers=3), trainer=trainer)
    return apply_overrides(cfg, overrides)


PROFILES = {"full": ExperimentConfig, "desk": desk_profile}


# --------------------------------------------------------------------------
# key = value serialisation

def _flat_items(cfg: ExperimentConfig) -> list[tuple[str, object]]:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "net":
            out += [(f"net.{k}", x) for k, x in asdict(v).items()]
        elif f.name == "trainer":
            out += [(f"trainer.{k}", x) for k, x in asdict(v).items()]
        else:
            out.append((f.name, v))
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_format(x) for x in v)
    return str(v)


def serialize(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in _flat_items(cfg))


def _coerce(template, text: str):
    text = text.strip()
    if isinstance(template, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, list):
        elem = template[0] if template else 0.0
        return [_coerce(elem, t) for t in text.split(",") if t.strip()]
    return text


def _template_map(cfg: ExperimentConfig) -> dict:
    return dict(_flat_items(cfg))


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Return a copy with dotted-key overrides (values may be strings)."""
    if not overrides:
        return cfg
    templates = _template_map(cfg)
    top, net, trainer = {}, {}, {}
    for key, raw in overrides.items():
        if key not in templates:
            raise ParameterError(f"unknown config key {key!r}")
        val = _coerce(templates[key], raw) if isinstance(raw, str) else raw
        if key.startswith("net."):
            net[key[4:]] = val
        elif key.startswith("trainer."):
            trainer[key[8:]] = val
        else:
            top[key] = val
    return replace(cfg, net=replace(cfg.net, **net), trainer=replace(cfg.trainer, **trainer), **top)


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment). A ``profile``
    key selects the starting defaults; remaining keys override them."""
    pairs = {}
    profile = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(lineno, line, "expected key = value")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ParseError(lineno, line, "empty key")
        if key == "profile":
            profile = value
            continue
        pairs[key] = (lineno, line, value)
    if base is None:
        if profile is not None and profile not in PROFILES:
            raise ParameterError(f"unknown profile {profile!r}")
        base = PROFILES[profile or "full"]()
    cfg = base
    templates = _template_map(base)
    for key, (lineno, line, value) in pairs.items():
        if key not in templates:
            raise ParseError(lineno, line, f"unknown key {key!r}")
        try:
            cfg = apply_overrides(cfg, {key: value})
        except (ValueError, TypeError) as exc:
            raise ParseError(lineno, line, str(exc)) from None
    return cfg


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse(fh.read())
