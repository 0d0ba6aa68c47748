"""DRAM geometry, timing parameters, per-bank state machine and command traces.

All times are in memory-clock cycles unless a name says otherwise.
"""
from __future__ import annotations

import dataclasses
import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional, TextIO

# Timestamp used for "never happened"; far enough in the past that any
# constraint measured from it is already satisfied at cycle 0.
NEVER = -(1 << 40)


class ConfigError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """A command was applied to a bank that could not legally accept it."""


class TraceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class DramGeometry:
    channels: int = 1
    ranks_per_channel: int = 1
    banks_per_rank: int = 8
    rows_per_bank: int = 65536
    row_buffer_bytes: int = 8192
    cacheline_bytes: int = 64

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or not _is_pow2(value):
                raise ConfigError(f"{f.name} must be a power of two >= 1, got {value!r}")
        if self.row_buffer_bytes % self.cacheline_bytes:
            raise ConfigError("row_buffer_bytes must be divisible by cacheline_bytes")

    @property
    def columns(self) -> int:
        """Cache lines per row."""
        return self.row_buffer_bytes // self.cacheline_bytes

    @property
    def capacity_bytes(self) -> int:
        return (self.channels * self.ranks_per_channel * self.banks_per_rank
                * self.rows_per_bank * self.row_buffer_bytes)


@dataclass(frozen=True)
class TimingParams:
    """DDR3-1600 (11-11-11) timing set. tRCD/tRAS follow the simulated system table."""

    tRCD: int = 11
    tRAS: int = 28
    tRP: int = 11
    tCL: int = 11
    tCWL: int = 8
    tBL: int = 4
    tCCD: int = 4
    tRTP: int = 6
    tWTR: int = 6
    tWR: int = 12
    tRRD: int = 5
    tFAW: int = 24
    tRFC: int = 208
    tREFI: int = 6240
    clock_period_ns: float = 1.25

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive")
        if self.tRAS < self.tRCD:
            raise ConfigError("tRAS must be >= tRCD")

    @property
    def tRC(self) -> int:
        return self.tRAS + self.tRP

    def cycles(self, ns: float) -> float:
        return ns / self.clock_period_ns


class TimingClass(enum.Enum):
    STANDARD = "S"
    REDUCED = "R"


class CommandKind(enum.Enum):
    ACT = "ACT"
    PRE = "PRE"
    RD = "RD"
    WR = "WR"
    REF = "REF"


class DramCoord(NamedTuple):
    channel: int
    rank: int
    bank: Optional[int] = None
    row: Optional[int] = None
    column: Optional[int] = None


class DramCommand:
    """One issued DRAM command.

    `core` names the core whose request caused the command. It is kept in
    memory only: it is not serialized and does not take part in equality.
    """

    __slots__ = ("kind", "coord", "issue_time", "timing_class", "core")

    def __init__(self, kind: CommandKind, coord: DramCoord, issue_time: int,
                 timing_class: TimingClass = TimingClass.STANDARD, core: int = -1):
        self.kind = kind
        self.coord = coord
        self.issue_time = issue_time
        self.timing_class = timing_class
        self.core = core

    def _key(self):
        return (self.kind, self.coord, self.issue_time, self.timing_class)

    def __eq__(self, other):
        if not isinstance(other, DramCommand):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return (f"DramCommand({self.kind.value}, {tuple(self.coord)}, t={self.issue_time}, "
                f"{self.timing_class.value})")


def effective_timings(base: TimingParams, reduced_deltas: tuple[int, int],
                      timing_class: TimingClass) -> TimingParams:
    """Timing set governing one activation.

    Only tRCD and tRAS shrink for a reduced activation (tRC follows from tRAS).
    """
    d_rcd, d_ras = reduced_deltas
    if d_rcd < 0 or d_ras < 0:
        raise ConfigError("timing reductions must be non-negative")
    if d_rcd >= base.tRCD or d_ras >= base.tRAS:
        raise ConfigError(
            f"reduction ({d_rcd}, {d_ras}) must be smaller than tRCD/tRAS ({base.tRCD}, {base.tRAS})")
    if timing_class is TimingClass.STANDARD:
        return base
    return dataclasses.replace(base, tRCD=base.tRCD - d_rcd, tRAS=base.tRAS - d_ras)


class BankStatus(enum.Enum):
    PRECHARGED = "precharged"
    ACTIVE = "active"


@dataclass(slots=True)
class BankState:
    open_row: Optional[int] = None
    last_act_time: int = NEVER
    last_pre_time: int = NEVER
    last_rd_time: int = NEVER
    last_wr_time: int = NEVER
    act_timing_class: TimingClass = TimingClass.STANDARD
    act_core: int = -1

    @property
    def state(self) -> BankStatus:
        return BankStatus.PRECHARGED if self.open_row is None else BankStatus.ACTIVE


@dataclass(slots=True)
class RankState:
    banks: list
    last_act_time: int = NEVER
    last_ref_time: int = NEVER
    # issue times of the last four ACTs, for the tFAW window
    act_window: deque = field(default_factory=lambda: deque(maxlen=4))

    @classmethod
    def fresh(cls, banks: int) -> "RankState":
        return cls(banks=[BankState() for _ in range(banks)])

    def all_precharged(self) -> bool:
        return all(b.open_row is None for b in self.banks)


@dataclass(slots=True)
class ChannelBus:
    """Data-bus history shared by every bank on a channel."""
    last_rd_time: int = NEVER
    last_wr_time: int = NEVER
    last_col_time: int = NEVER


def earliest_issue(kind: CommandKind, bank: Optional[BankState], rank: RankState,
                   bus: ChannelBus, base: TimingParams, active: TimingParams,
                   row: Optional[int] = None) -> Optional[int]:
    """Earliest cycle at which `kind` satisfies every timing constraint.

    Returns None when the bank state forbids the command outright (e.g. RD to
    a precharged bank). `active` is the timing set of the bank's current
    activation and is consulted only for tRCD and tRAS.
    """
    if kind is CommandKind.ACT:
        if bank.open_row is not None:
            return None
        t = bank.last_pre_time + base.tRP
        t = max(t, rank.last_act_time + base.tRRD, rank.last_ref_time + base.tRFC)
        if len(rank.act_window) == 4:
            t = max(t, rank.act_window[0] + base.tFAW)
        return t
    if kind is CommandKind.RD or kind is CommandKind.WR:
        if bank.open_row is None or (row is not None and row != bank.open_row):
            return None
        t = max(bank.last_act_time + active.tRCD, bus.last_col_time + base.tCCD)
        if kind is CommandKind.RD:
            return max(t, bus.last_wr_time + base.tCWL + base.tBL + base.tWTR)
        return max(t, bus.last_rd_time + base.tCL + base.tCCD + 2 - base.tCWL)
    if kind is CommandKind.PRE:
        if bank.open_row is None:
            return None
        return max(bank.last_act_time + active.tRAS,
                   bank.last_rd_time + base.tRTP,
                   bank.last_wr_time + base.tCWL + base.tBL + base.tWR)
    if kind is CommandKind.REF:
        t = rank.last_ref_time + base.tRFC
        for b in rank.banks:
            if b.open_row is not None:
                return None
            t = max(t, b.last_pre_time + base.tRP)
        return t
    raise ValueError(kind)


def can_issue(bank: Optional[BankState], rank: RankState, bus: ChannelBus, cmd: DramCommand,
              now: int, base: TimingParams, active: TimingParams) -> bool:
    t = earliest_issue(cmd.kind, bank, rank, bus, base, active, cmd.coord.row)
    return t is not None and t <= now


def apply_command(bank: Optional[BankState], rank: RankState, bus: ChannelBus,
                  cmd: DramCommand, now: int, base: TimingParams,
                  active: TimingParams, check: bool = True) -> None:
    """Advance the bank/rank/bus state for a command issued at `now`.

    Raises ProtocolError if the command is not legal at `now` (skipped when
    `check` is off and the caller has already established legality).
    """
    if check and not can_issue(bank, rank, bus, cmd, now, base, active):
        raise ProtocolError(f"illegal {cmd.kind.value} at cycle {now} for {cmd.coord} "
                            f"(bank state {bank.state.value if bank else '-'})")
    kind = cmd.kind
    if kind is CommandKind.ACT:
        bank.open_row = cmd.coord.row
        bank.last_act_time = now
        bank.act_timing_class = cmd.timing_class
        bank.act_core = cmd.core
        rank.last_act_time = now
        rank.act_window.append(now)
    elif kind is CommandKind.PRE:
        bank.open_row = None
        bank.last_pre_time = now
    elif kind is CommandKind.RD:
        bank.last_rd_time = now
        bus.last_rd_time = now
        bus.last_col_time = now
    elif kind is CommandKind.WR:
        bank.last_wr_time = now
        bus.last_wr_time = now
        bus.last_col_time = now
    else:
        rank.last_ref_time = now


# -- command trace files -----------------------------------------------------

def _field(v: Optional[int]) -> str:
    return "-" if v is None else str(v)


def format_command(cmd: DramCommand) -> str:
    c = cmd.coord
    return (f"{cmd.issue_time} {cmd.kind.value} {c.channel} {c.rank} {_field(c.bank)} "
            f"{_field(c.row)} {_field(c.column)} {cmd.timing_class.value}")


def write_command_trace(commands: Iterable[DramCommand], fh: TextIO) -> None:
    for cmd in commands:
        fh.write(format_command(cmd))
        fh.write("\n")


def _parse_opt(tok: str, lineno: int, name: str) -> Optional[int]:
    if tok == "-":
        return None
    try:
        v = int(tok)
    except ValueError:
        raise TraceParseError(lineno, f"bad {name} field {tok!r}") from None
    if v < 0:
        raise TraceParseError(lineno, f"negative {name}")
    return v


_KINDS = {k.value: k for k in CommandKind}
_CLASSES = {c.value: c for c in TimingClass}


def parse_command_trace(lines: Iterable[str]) -> Iterator[tuple[int, DramCommand]]:
    """Yield (line number, command) pairs; blank lines and '#' comments are skipped."""
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 8:
            raise TraceParseError(lineno, f"expected 8 fields, got {len(toks)}")
        try:
            cycle = int(toks[0])
        except ValueError:
            raise TraceParseError(lineno, f"bad cycle {toks[0]!r}") from None
        kind = _KINDS.get(toks[1])
        if kind is None:
            raise TraceParseError(lineno, f"unknown command {toks[1]!r}")
        tclass = _CLASSES.get(toks[7])
        if tclass is None:
            raise TraceParseError(lineno, f"unknown timing class {toks[7]!r}")
        channel = _parse_opt(toks[2], lineno, "channel")
        rank = _parse_opt(toks[3], lineno, "rank")
        bank = _parse_opt(toks[4], lineno, "bank")
        row = _parse_opt(toks[5], lineno, "row")
        col = _parse_opt(toks[6], lineno, "column")
        if channel is None or rank is None:
            raise TraceParseError(lineno, "channel and rank are required")
        if kind is not CommandKind.REF and bank is None:
            raise TraceParseError(lineno, f"{kind.value} needs a bank")
        if kind in (CommandKind.ACT, CommandKind.PRE, CommandKind.RD, CommandKind.WR) and row is None:
            raise TraceParseError(lineno, f"{kind.value} needs a row")
        yield lineno, DramCommand(kind, DramCoord(channel, rank, bank, row, col), cycle, tclass)
