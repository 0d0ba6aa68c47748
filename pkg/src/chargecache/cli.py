"""Command-line front end.

Subcommands and their outputs (all CSVs have one header row and a fixed
column order):

simulate  metrics.csv      core,instructions,cycles,ipc,acts_standard,acts_reduced,hit_rate
          summary.csv      policy,cores,mem_cycles,core_cycles,commands,acts_standard,
                           acts_reduced,hit_rate,weighted_speedup,speedup_vs_baseline
          controller.csv   channel,reads,writes,row_hits,row_misses,row_conflicts,
                           avg_read_latency
          queue_hist.csv   channel,queue,occupancy,cycles
          energy.csv       act_pre_energy,...,hcrac_energy,total,percent_vs_baseline (joules)
          policy.csv       stat,value
          commands.trace   with --emit-cmd-trace
          run_info.json    sidecar: timestamp, version, charge-model calibration
rltl      rltl_<trace>.csv interval_ms,fraction,qualifying,total
verify    violations.csv   index,line,category,message (when --out is given)
gen-trace <kind>.trace
overhead  overhead.json
sweep     sweep.csv plus one simulate output directory per point

Exit status: 0 success, 1 validation or verification failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import datetime
import io
import itertools
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from . import __version__
from .analytics import OverheadInput, default_model, overhead_report
from .config import RunConfig, build_config, default_config, load_config
from .dram import ConfigError, TraceParseError, write_command_trace
from .energy import percent_vs_baseline
from .policy import PolicyKind
from .sim import SimResult, SimulationError, alone_ipcs, simulate
from .traces import (DEFAULT_INTERVALS_MS, SyntheticKind, SyntheticParams, TraceError,
                     activation_log, gen_synthetic, read_trace, rltl, trace_text)
from .verify import policy_checks, verify_command_file

log = logging.getLogger("chargecache")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- output helpers --------------------------------------------------------------

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return format(v, ".10g")
    return str(v)


def csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


@contextlib.contextmanager
def staged_output(out_dir: Path):
    """Collect files in a scratch directory next to `out_dir` and move them in
    only if the block succeeds, so a failed run leaves nothing behind."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        yield stage
        out_dir.mkdir(exist_ok=True)
        for p in sorted(stage.rglob("*")):
            rel = p.relative_to(stage)
            if p.is_dir():
                (out_dir / rel).mkdir(exist_ok=True)
            else:
                os.replace(p, out_dir / rel)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


# -- simulate ----------------------------------------------------------------------

def _baseline_of(cfg: RunConfig) -> RunConfig:
    policy = dataclasses.replace(cfg.sim.policy, kind=PolicyKind.BASELINE)
    return dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, policy=policy))


def run_simulation(cfg: RunConfig) -> dict:
    """Run one configuration and render all report files as {name: text}."""
    traces = cfg.load_traces()
    result = simulate(traces, cfg.sim)
    baseline: Optional[SimResult] = None
    if cfg.compare_baseline:
        baseline = result if cfg.sim.policy.kind is PolicyKind.BASELINE \
            else simulate(traces, _baseline_of(cfg).sim)
    alone = alone_ipcs(traces, cfg.sim) if cfg.weighted_speedup else None
    return render_reports(cfg, result, baseline, alone)


def render_reports(cfg: RunConfig, result: SimResult, baseline: Optional[SimResult],
                   alone: Optional[list]) -> dict:
    files = {}
    rows = []
    for m in result.cores:
        s, r = result.acts.get(m.core_id, (0, 0))
        rows.append([m.core_id, m.instructions, m.cycles, m.ipc, s, r,
                     result.core_hit_rate(m.core_id)])
    files["metrics.csv"] = csv_text(
        ["core", "instructions", "cycles", "ipc", "acts_standard", "acts_reduced", "hit_rate"], rows)

    ws = result.metrics(alone).weighted_speedup if alone else None
    speedup = None
    if baseline is not None and result.total_core_cycles:
        if alone:
            ws_base = baseline.metrics(alone).weighted_speedup
            speedup = ws / ws_base if ws_base else None
        else:
            speedup = baseline.total_core_cycles / result.total_core_cycles
    files["summary.csv"] = csv_text(
        ["policy", "cores", "mem_cycles", "core_cycles", "commands", "acts_standard",
         "acts_reduced", "hit_rate", "weighted_speedup", "speedup_vs_baseline"],
        [[cfg.sim.policy.kind.value, len(result.cores), result.mem_cycles,
          result.total_core_cycles, len(result.commands), result.acts_standard,
          result.acts_reduced, result.hit_rate, ws, speedup]])

    files["controller.csv"] = csv_text(
        ["channel", "reads", "writes", "row_hits", "row_misses", "row_conflicts",
         "avg_read_latency"],
        [[c.channel, c.reads, c.writes, c.row_hits, c.row_misses, c.row_conflicts,
          c.avg_read_latency] for c in result.channels])
    hist = []
    for c in result.channels:
        for name, h in (("read", c.read_queue_hist), ("write", c.write_queue_hist)):
            hist += [[c.channel, name, occ, h[occ]] for occ in sorted(h)]
    files["queue_hist.csv"] = csv_text(["channel", "queue", "occupancy", "cycles"], hist)

    e = result.energy.as_row()
    pct = percent_vs_baseline(result.energy, baseline.energy) if baseline is not None else None
    files["energy.csv"] = csv_text(list(e) + ["percent_vs_baseline"], [list(e.values()) + [pct]])

    stats = result.policy_stats
    files["policy.csv"] = csv_text(["stat", "value"], [[k, stats[k]] for k in sorted(stats)])
    files["_commands"] = result.commands
    return files


def write_simulation(files: dict, out: Path, emit_cmd_trace: bool, cfg: RunConfig) -> None:
    with staged_output(out) as stage:
        for name, text in files.items():
            if not name.startswith("_"):
                write_text(stage / name, text)
        if emit_cmd_trace:
            with open(stage / "commands.trace", "w") as fh:
                write_command_trace(files["_commands"], fh)
        model = default_model()
        info = {
            "version": __version__,
            "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "policy": cfg.sim.policy.kind.value,
            "cores": cfg.cores,
            "seed": cfg.seed,
            "charge_model": {"tau_leak_ms": model.tau_leak_ms,
                             "tau_sense_ns": model.tau_sense_ns},
        }
        write_text(stage / "run_info.json", json.dumps(info, indent=2, sort_keys=True) + "\n")


def _load_run_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config is None:
        raise UsageError("--config is required")
    return load_config(args.config, overrides)


def _system_config(args) -> RunConfig:
    """System parameters only; trace entries in the config are not needed."""
    if args.config:
        return load_config(args.config, require_traces=False)
    return default_config()


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or cfg.out
    if out is None:
        raise UsageError("--out is required (or set 'out' in the config)")
    return Path(out)


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, cfg)
    files = run_simulation(cfg)
    write_simulation(files, out, args.emit_cmd_trace, cfg)
    print(files["summary.csv"], end="")
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------------

def sweep_points(sweep: dict) -> list:
    keys = sorted(sweep)
    return [dict(zip(keys, values)) for values in itertools.product(*(sweep[k] for k in keys))]


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args, cfg)
    if not cfg.sweep:
        raise UsageError("config has no 'sweep' section")
    base_flat = dict(cfg.source)
    base_flat.pop("sweep")
    points = sweep_points(cfg.sweep)
    configs = []
    for point in points:
        flat = dict(base_flat)
        flat.update(point)
        configs.append(build_config(flat, cfg.base_dir))

    # each worker owns its simulation objects; nothing is shared between points
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(run_simulation, configs))

    keys = sorted(cfg.sweep)
    rows = []
    with staged_output(out) as stage:
        for i, (point, pc, files) in enumerate(zip(points, configs, results)):
            sub = stage / f"point_{i:03d}"
            for name, text in files.items():
                if not name.startswith("_"):
                    write_text(sub / name, text)
            if args.emit_cmd_trace:
                with open(sub / "commands.trace", "w") as fh:
                    write_command_trace(files["_commands"], fh)
            summary = list(csv.DictReader(io.StringIO(files["summary.csv"])))[0]
            energy = list(csv.DictReader(io.StringIO(files["energy.csv"])))[0]
            rows.append([i] + [point[k] for k in keys]
                        + [summary["mem_cycles"], summary["core_cycles"], summary["hit_rate"],
                           summary["speedup_vs_baseline"], energy["total"],
                           energy["percent_vs_baseline"]])
        text = csv_text(["point"] + keys + ["mem_cycles", "core_cycles", "hit_rate",
                                             "speedup_vs_baseline", "energy_total",
                                             "energy_percent_vs_baseline"], rows)
        write_text(stage / "sweep.csv", text)
    print(text, end="")
    return EXIT_OK


# -- rltl ------------------------------------------------------------------------------

def _parse_intervals(text: Optional[str]) -> list:
    if not text:
        return list(DEFAULT_INTERVALS_MS)
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad interval list {text!r}")
    if any(v < 0 for v in vals):
        raise UsageError("intervals must be non-negative")
    return vals


def cmd_rltl(args) -> int:
    intervals = _parse_intervals(args.intervals)
    cfg = _system_config(args)
    sim_cfg = dataclasses.replace(cfg.sim, policy=dataclasses.replace(
        cfg.sim.policy, kind=PolicyKind.BASELINE), instruction_budget=None, warmup_cycles=0,
        core=dataclasses.replace(cfg.sim.core, replay=False))
    out = Path(args.out) if args.out else None
    texts = {}
    for path in args.traces:
        records = read_trace(path)
        result = simulate([records], sim_cfg)
        curve = rltl(activation_log(result.commands), intervals, sim_cfg.timing.clock_period_ns)
        texts[f"rltl_{Path(path).stem}.csv"] = curve.to_csv()
    if out is None:
        for name, text in texts.items():
            print(f"# {name}")
            print(text, end="")
    else:
        with staged_output(out) as stage:
            for name, text in texts.items():
                write_text(stage / name, text)
    return EXIT_OK


# -- verify ----------------------------------------------------------------------------

def cmd_verify(args) -> int:
    sim = _system_config(args).sim
    checks = policy_checks(sim.policy, sim.timing.clock_period_ns)
    with open(args.trace) as fh:
        report = verify_command_file(fh, sim.geometry, sim.timing, sim.policy.deltas, **checks)
    print(report.summary())
    violations = report.timing_violations + report.safety_violations
    violations.sort(key=lambda v: v.index)
    for v in violations[:20]:
        print(f"line {v.lineno}: [{v.category}] {v.message}")
    if args.out:
        text = csv_text(["index", "line", "category", "message"],
                        [[v.index, v.lineno, v.category, v.message] for v in violations])
        with staged_output(Path(args.out)) as stage:
            write_text(stage / "violations.csv", text)
    return EXIT_OK if report.ok else EXIT_FAIL


# -- gen-trace -------------------------------------------------------------------------

def cmd_gen_trace(args) -> int:
    from .dram import DramGeometry
    if args.config:
        geometry = _system_config(args).sim.geometry
    else:
        geometry = DramGeometry(channels=args.channels)
    rows = tuple(int(x) for x in args.rows.split(",")) if args.rows else (5, 9)
    params = SyntheticParams(n=args.n, seed=args.seed or 0, nonmem=args.nonmem, rows=rows,
                             num_rows=args.num_rows,
                             bank=None if args.bank < 0 else args.bank,
                             channel=args.channel, row_offset=args.row_offset,
                             zipf_s=args.zipf_s, write_fraction=args.write_fraction)
    text = trace_text(gen_synthetic(args.kind, geometry, params))
    name = args.name or f"{args.kind}.trace"
    if args.out:
        atomic_write(Path(args.out) / name, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- overhead --------------------------------------------------------------------------

def cmd_overhead(args) -> int:
    inp = OverheadInput(cores=args.cores, channels=args.channels, entries=args.entries,
                        ranks=args.ranks, banks=args.banks, rows=args.rows,
                        lru_bits_per_entry=args.lru_bits)
    text = json.dumps(overhead_report(inp), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out) / "overhead.json", text)
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chargecache",
                                description="DRAM timing simulator with recently-precharged "
                                            "row caching")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run one configuration")
    s.add_argument("--emit-cmd-trace", action="store_true", help="also write commands.trace")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="run every point of the config's sweep")
    s.add_argument("--jobs", type=int, default=1, metavar="N")
    s.add_argument("--emit-cmd-trace", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("rltl", parents=[common],
                       help="row-level temporal locality of traces under the baseline")
    s.add_argument("traces", nargs="+", metavar="TRACE")
    s.add_argument("--intervals", help="comma-separated intervals in ms")
    s.set_defaults(func=cmd_rltl)

    s = sub.add_parser("verify", parents=[common], help="check a command trace")
    s.add_argument("trace", metavar="COMMAND_TRACE")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("gen-trace", parents=[common], help="write a synthetic trace")
    s.add_argument("kind", choices=[k.value for k in SyntheticKind])
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--nonmem", type=int, default=0)
    s.add_argument("--rows", help="ping-pong rows, comma-separated")
    s.add_argument("--num-rows", type=int, default=1024)
    s.add_argument("--row-offset", type=int, default=0)
    s.add_argument("--bank", type=int, default=0, help="-1 spreads over all banks")
    s.add_argument("--channel", type=int, default=0)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--zipf-s", type=float, default=1.0)
    s.add_argument("--write-fraction", type=float, default=0.0)
    s.add_argument("--name", help="output file name inside --out")
    s.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("overhead", parents=[common], help="HCRAC storage overhead")
    s.add_argument("--cores", type=int, default=8)
    s.add_argument("--channels", type=int, default=2)
    s.add_argument("--entries", type=int, default=128)
    s.add_argument("--ranks", type=int, default=1)
    s.add_argument("--banks", type=int, default=8)
    s.add_argument("--rows", type=int, default=65536)
    s.add_argument("--lru-bits", type=int, default=1)
    s.set_defaults(func=cmd_overhead)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TraceError, TraceParseError, SimulationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
