"""Run configuration: a YAML file with one section per subsystem.

Keys may be nested (``hcrac: {entries_per_core: 64}``) or written as flat
dotted paths (``hcrac.entries_per_core: 64``); both forms can be mixed.
Unset keys take the defaults of the simulated system: one channel and
open-row policy for a single core, two channels and closed-row policy for
more.

Traces are listed under ``traces`` (one per core). An entry is either a
path, relative to the config file, or a mapping describing a synthetic
workload, e.g. ``{synthetic: zipf, n: 20000, num_rows: 512}``; synthetic
traces are seeded with ``seed + core index``.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .analytics import reduction_margin_issues
from .controller import ControllerConfig, RowPolicy
from .cpu import CoreConfig
from .dram import ConfigError, DramGeometry, TimingParams
from .energy import PowerParams
from .policy import PolicyConfig, PolicyKind
from .sim import SimConfig
from .traces import SyntheticParams, gen_synthetic, read_trace

log = logging.getLogger(__name__)

DEFAULT_DELTAS = (4, 8)
DEFAULT_BUDGET = 1_000_000

# config key -> PolicyConfig field
_POLICY_KEYS = {
    "hcrac.entries_per_core": "entries_per_core",
    "hcrac.associativity": "associativity",
    "hcrac.caching_duration_ms": "caching_duration_ms",
    "hcrac.shared": "shared",
    "reduced.trcd_delta": "trcd_delta",
    "reduced.tras_delta": "tras_delta",
    "nuat.window_ms": "nuat_window_ms",
}
_SECTIONS = {
    "geometry": DramGeometry,
    "timing": TimingParams,
    "controller": ControllerConfig,
    "core": CoreConfig,
    "energy": PowerParams,
}
_TOP_LEVEL = {"cores", "traces", "seed", "instruction_budget", "warmup_cycles",
              "max_mem_cycles", "policy", "out", "weighted_speedup", "compare_baseline",
              "sweep"}


@dataclass
class RunConfig:
    sim: SimConfig
    traces: list                     # str paths or synthetic-trace dicts, one per core
    seed: int = 0
    out: Optional[str] = None
    weighted_speedup: bool = False   # also run every trace alone under the baseline
    compare_baseline: bool = True    # also run the baseline for energy/speedup deltas
    sweep: dict = field(default_factory=dict)
    base_dir: Path = Path(".")
    # the flat keys this config was built from, for deriving sweep points
    source: dict = field(default_factory=dict)

    @property
    def cores(self) -> int:
        return len(self.traces)

    def load_traces(self) -> list:
        out = []
        for i, entry in enumerate(self.traces):
            if isinstance(entry, dict):
                out.append(_synthetic(entry, self.sim.geometry, self.seed + i))
            else:
                out.append(read_trace(self.base_dir / entry))
        return out


def _synthetic(entry: dict, geometry: DramGeometry, seed: int) -> list:
    entry = dict(entry)
    kind = entry.pop("synthetic")
    entry.setdefault("seed", seed)
    if "rows" in entry:
        entry["rows"] = tuple(entry["rows"])
    names = {f.name for f in dataclasses.fields(SyntheticParams)}
    unknown = set(entry) - names
    if unknown:
        raise ConfigError(f"unknown synthetic trace keys: {sorted(unknown)}")
    try:
        return gen_synthetic(kind, geometry, SyntheticParams(**entry))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def flatten(raw: dict, prefix: str = "") -> dict:
    """Nested mapping -> {dotted.key: value}. `traces` and `sweep` stay whole."""
    out = {}
    for k, v in raw.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in ("sweep",) and not key.startswith("traces"):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def build_config(flat: dict, base_dir: Path = Path("."), require_traces: bool = True) -> RunConfig:
    """Validate flat dotted keys and assemble a RunConfig.

    With `require_traces` off, the trace list is ignored (system-only configs
    for verification and trace analysis)."""
    flat = dict(flat)
    source = dict(flat)
    listed = flat.get("traces")
    # system defaults still follow the listed core count when traces are ignored
    n_listed = len(listed) if isinstance(listed, list) else 0
    if not require_traces:
        flat.pop("traces", None)
    sections: dict = {name: {} for name in _SECTIONS}
    policy_kw: dict = {}
    for key in list(flat):
        if key in _POLICY_KEYS:
            policy_kw[_POLICY_KEYS[key]] = flat.pop(key)
            continue
        head, _, rest = key.partition(".")
        if head in _SECTIONS and rest:
            cls = _SECTIONS[head]
            if rest not in {f.name for f in dataclasses.fields(cls)}:
                raise ConfigError(f"unknown config key {key!r}")
            sections[head][rest] = flat.pop(key)
    unknown = set(flat) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    traces = flat.get("traces") or []
    if not isinstance(traces, list):
        raise ConfigError("traces must be a list")
    cores = flat.get("cores", n_listed or 1)
    if not isinstance(cores, int) or cores < 1:
        raise ConfigError("cores must be a positive integer")
    if require_traces and len(traces) != cores:
        raise ConfigError(f"{len(traces)} traces given for {cores} cores")
    for entry in traces:
        if isinstance(entry, dict):
            if "synthetic" not in entry:
                raise ConfigError("synthetic trace entries need a 'synthetic' kind")
        elif not (base_dir / str(entry)).is_file():
            raise ConfigError(f"trace file not found: {entry}")

    sections["geometry"].setdefault("channels", 1 if cores == 1 else 2)
    sections["controller"].setdefault("row_policy",
                                      RowPolicy.OPEN.value if cores == 1 else RowPolicy.CLOSED.value)
    try:
        built = {name: cls(**sections[name]) for name, cls in _SECTIONS.items()}
        policy = PolicyConfig(kind=flat.get("policy", PolicyKind.BASELINE.value), **policy_kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if built["energy"].clock_period_ns != built["timing"].clock_period_ns:
        raise ConfigError("energy.clock_period_ns must match timing.clock_period_ns")
    check_reduction_margin(policy, built["timing"].clock_period_ns)

    budget = flat.get("instruction_budget", DEFAULT_BUDGET)
    sim = SimConfig(geometry=built["geometry"], timing=built["timing"],
                    controller=built["controller"], core=built["core"], policy=policy,
                    power=built["energy"], instruction_budget=budget,
                    warmup_cycles=flat.get("warmup_cycles", 0),
                    max_mem_cycles=flat.get("max_mem_cycles"))
    if budget is not None and budget < 1:
        raise ConfigError("instruction_budget must be positive")
    if sim.warmup_cycles < 0:
        raise ConfigError("warmup_cycles must be non-negative")
    sweep = flat.get("sweep") or {}
    if not isinstance(sweep, dict) or not all(isinstance(v, list) and v for v in sweep.values()):
        raise ConfigError("sweep must map config keys to non-empty value lists")
    return RunConfig(sim=sim, traces=traces, seed=int(flat.get("seed", 0)), out=flat.get("out"),
                     weighted_speedup=bool(flat.get("weighted_speedup", False)),
                     compare_baseline=bool(flat.get("compare_baseline", True)),
                     sweep=sweep, base_dir=base_dir, source=source)


def check_reduction_margin(policy: PolicyConfig, clock_period_ns: float) -> list:
    """Reject timing reductions the charge model cannot justify for the
    configured caching duration. The default 4/8-cycle reductions only warn:
    they slightly exceed the modelled margin but are the reference setting."""
    if policy.kind in (PolicyKind.BASELINE, PolicyKind.LL_DRAM):
        return []
    durations = []
    if policy.kind in (PolicyKind.CHARGECACHE, PolicyKind.CHARGECACHE_NUAT):
        durations.append(policy.caching_duration_ms)
    if policy.kind in (PolicyKind.NUAT, PolicyKind.CHARGECACHE_NUAT):
        durations.append(policy.nuat_window_ms)
    issues = []
    for d in durations:
        if d == 0:
            continue  # nothing is ever served with reduced timings
        issues += reduction_margin_issues(policy.trcd_delta, policy.tras_delta,
                                          clock_period_ns, d)
    if issues:
        if policy.deltas == DEFAULT_DELTAS:
            for msg in issues:
                log.warning("%s (kept: reference setting)", msg)
        else:
            raise ConfigError("; ".join(issues))
    return issues


def load_config(path, overrides: Optional[dict] = None, require_traces: bool = True) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    flat = flatten(raw)
    flat.update(overrides or {})
    return build_config(flat, path.parent, require_traces)


def default_config(traces: Optional[list] = None, **overrides: Any) -> RunConfig:
    """Defaults for the given traces; without traces, a single-core system config."""
    flat = {"traces": traces} if traces is not None else {}
    flat.update(overrides)
    return build_config(flat, Path(os.getcwd()), require_traces=traces is not None)
