"""IDD-current based DRAM energy accounting over a simulated command stream."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Optional

from .dram import CommandKind, ConfigError, DramCommand, TimingClass, TimingParams

# Average HCRAC power reported for the 8-core, 2-channel configuration (mW).
HCRAC_POWER_MW = 0.149


class AccountingError(ValueError):
    pass


@dataclass(frozen=True)
class PowerParams:
    """DDR3-1600 4Gb datasheet currents (mA) at VDD = 1.5 V."""

    VDD: float = 1.5
    IDD0: float = 75.0
    IDD2N: float = 32.0
    IDD3N: float = 38.0
    IDD4R: float = 157.0
    IDD4W: float = 165.0
    IDD5: float = 235.0
    clock_period_ns: float = 1.25

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.IDD3N < self.IDD2N:
            raise ConfigError("IDD3N must be >= IDD2N")


@dataclass
class CommandCounts:
    acts_standard: int = 0
    acts_reduced: int = 0
    reads: int = 0
    writes: int = 0
    refreshes: int = 0


@dataclass
class StateDurations:
    """Rank-cycles with at least one bank open vs. all banks precharged."""
    active: int = 0
    standby: int = 0


@dataclass
class EnergyReport:
    act_pre_energy: float = 0.0
    read_energy: float = 0.0
    write_energy: float = 0.0
    refresh_energy: float = 0.0
    background_energy: float = 0.0
    hcrac_energy: float = 0.0

    @property
    def total(self) -> float:
        return (self.act_pre_energy + self.read_energy + self.write_energy
                + self.refresh_energy + self.background_energy + self.hcrac_energy)

    def as_row(self) -> dict:
        row = {f.name: getattr(self, f.name) for f in fields(self)}
        row["total"] = self.total
        return row


def activation_energy(params: PowerParams, tRAS: int, tRP: int) -> float:
    """Energy of one ACT/PRE pair above background, in joules."""
    tRC = tRAS + tRP
    charge = params.IDD0 * tRC - (params.IDD3N * tRAS + params.IDD2N * tRP)
    return params.VDD * charge * 1e-3 * params.clock_period_ns * 1e-9


def energy_from_run(counts: CommandCounts, durations: StateDurations, params: PowerParams,
                    run_wall_cycles: int, base: TimingParams, reduced: TimingParams,
                    ranks: int = 1, hcrac: bool = False) -> EnergyReport:
    """Turn command counts and state residencies into an energy breakdown.

    `durations` must partition ``ranks * run_wall_cycles``. A reduced
    activation is charged with its shorter tRAS. HCRAC energy is the reported
    average table power times wall time, and only applies when `hcrac` is set.
    """
    if durations.active < 0 or durations.standby < 0:
        raise AccountingError("negative state duration")
    if durations.active + durations.standby != ranks * run_wall_cycles:
        raise AccountingError(
            f"state durations {durations.active}+{durations.standby} do not partition "
            f"{ranks} x {run_wall_cycles} rank-cycles")
    scale = params.VDD * 1e-3 * params.clock_period_ns * 1e-9  # mA*cycles -> J
    rep = EnergyReport()
    rep.act_pre_energy = (counts.acts_standard * activation_energy(params, base.tRAS, base.tRP)
                          + counts.acts_reduced * activation_energy(params, reduced.tRAS, reduced.tRP))
    rep.read_energy = counts.reads * (params.IDD4R - params.IDD3N) * base.tBL * scale
    rep.write_energy = counts.writes * (params.IDD4W - params.IDD3N) * base.tBL * scale
    rep.refresh_energy = counts.refreshes * (params.IDD5 - params.IDD2N) * base.tRFC * scale
    rep.background_energy = (params.IDD3N * durations.active + params.IDD2N * durations.standby) * scale
    if hcrac:
        rep.hcrac_energy = HCRAC_POWER_MW * 1e-3 * run_wall_cycles * params.clock_period_ns * 1e-9
    return rep


def account_commands(commands: Iterable[DramCommand], start: int, end: int,
                     ranks: Iterable[tuple]) -> tuple[CommandCounts, StateDurations]:
    """Count commands issued in [start, end) and measure, per rank, how long at
    least one bank was open within that window.

    `ranks` lists every (channel, rank) pair so idle ranks count as standby.
    """
    counts = CommandCounts()
    open_banks: dict = {}     # (ch, rank) -> number of open banks
    opened_at: dict = {}      # (ch, rank) -> time the first bank opened
    active = {k: 0 for k in ranks}
    for k in active:
        open_banks[k] = 0
    for cmd in commands:
        t = cmd.issue_time
        if t >= end:
            break
        key = (cmd.coord.channel, cmd.coord.rank)
        kind = cmd.kind
        if kind is CommandKind.ACT:
            if open_banks[key] == 0:
                opened_at[key] = t
            open_banks[key] += 1
        elif kind is CommandKind.PRE:
            open_banks[key] -= 1
            if open_banks[key] == 0:
                s = max(opened_at[key], start)
                if t > s:
                    active[key] += t - s
        if t < start:
            continue
        if kind is CommandKind.ACT:
            if cmd.timing_class is TimingClass.REDUCED:
                counts.acts_reduced += 1
            else:
                counts.acts_standard += 1
        elif kind is CommandKind.RD:
            counts.reads += 1
        elif kind is CommandKind.WR:
            counts.writes += 1
        elif kind is CommandKind.REF:
            counts.refreshes += 1
    for key, n in open_banks.items():
        if n:
            s = max(opened_at[key], start)
            if end > s:
                active[key] += end - s
    total_active = sum(active.values())
    return counts, StateDurations(total_active, len(active) * (end - start) - total_active)


def percent_vs_baseline(report: EnergyReport, baseline: Optional[EnergyReport]) -> Optional[float]:
    """Energy saving relative to the baseline run, in percent (positive = less energy)."""
    if baseline is None or baseline.total == 0:
        return None
    return 100.0 * (baseline.total - report.total) / baseline.total
