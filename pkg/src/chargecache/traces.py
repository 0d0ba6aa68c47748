"""CPU trace files, synthetic workloads, and row-level temporal locality.

Trace lines are ``<nonmem_count> <address_hex> <R|W>``: the number of
non-memory instructions preceding one memory access. Traces are post-LLC, so
every record is a DRAM request.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO

import numpy as np

from .controller import encode_coord
from .dram import CommandKind, ConfigError, DramCommand, DramCoord, DramGeometry

DEFAULT_INTERVALS_MS = (0.125, 0.25, 0.5, 1, 2, 4, 8, 16, 32)


class TraceError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class TraceRecord(NamedTuple):
    nonmem_count: int
    address: int
    kind: str  # "R" or "W"

    @property
    def is_read(self) -> bool:
        return self.kind == "R"


def parse_trace(stream: Iterable[str]) -> list:
    records = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3:
            raise TraceError(lineno, f"expected 3 fields, got {len(toks)}")
        try:
            nonmem = int(toks[0])
        except ValueError:
            raise TraceError(lineno, f"bad instruction count {toks[0]!r}") from None
        if nonmem < 0:
            raise TraceError(lineno, "negative instruction count")
        try:
            address = int(toks[1], 16)
        except ValueError:
            raise TraceError(lineno, f"non-hex address {toks[1]!r}") from None
        if address < 0:
            raise TraceError(lineno, "negative address")
        kind = toks[2].upper()
        if kind not in ("R", "W"):
            raise TraceError(lineno, f"access kind must be R or W, got {toks[2]!r}")
        records.append(TraceRecord(nonmem, address, kind))
    return records


def read_trace(path) -> list:
    with open(path) as fh:
        return parse_trace(fh)


def serialize_trace(records: Iterable[TraceRecord], fh: TextIO) -> None:
    for r in records:
        fh.write(f"{r.nonmem_count} {r.address:#x} {r.kind}\n")


def trace_text(records: Iterable[TraceRecord]) -> str:
    return "".join(f"{r.nonmem_count} {r.address:#x} {r.kind}\n" for r in records)


# -- synthetic workloads -------------------------------------------------------

class SyntheticKind(enum.Enum):
    BANK_PING_PONG = "pingpong"
    ROW_STREAM = "stream"
    UNIFORM_RANDOM = "uniform"
    ZIPF = "zipf"


@dataclass(frozen=True)
class SyntheticParams:
    n: int = 1000
    seed: int = 0
    nonmem: int = 0
    rows: tuple = (5, 9)          # ping-pong rows
    num_rows: int = 1024          # row population for uniform/zipf
    bank: Optional[int] = 0       # None spreads accesses over all banks
    channel: int = 0
    rank: int = 0
    row_offset: int = 0           # first row of the population (uniform/zipf/stream)
    zipf_s: float = 1.0
    write_fraction: float = 0.0


def _check(params: SyntheticParams, geometry: DramGeometry):
    if params.n < 1:
        raise ConfigError("n must be >= 1")
    if params.nonmem < 0:
        raise ConfigError("nonmem must be >= 0")
    if not 0 <= params.write_fraction <= 1:
        raise ConfigError("write_fraction must be in [0, 1]")
    if not 0 <= params.channel < geometry.channels:
        raise ConfigError("channel outside geometry")
    if not 0 <= params.rank < geometry.ranks_per_channel:
        raise ConfigError("rank outside geometry")
    if params.bank is not None and not 0 <= params.bank < geometry.banks_per_rank:
        raise ConfigError("bank outside geometry")


def gen_synthetic(kind, geometry: DramGeometry, params: SyntheticParams = SyntheticParams()) -> list:
    """Generate a deterministic synthetic trace.

    pingpong alternates between `rows` in one bank (every access after the
    first two is a re-activation). stream touches each row once. uniform and
    zipf sample rows from a population of `num_rows`.
    """
    kind = SyntheticKind(kind)
    _check(params, geometry)
    rng = np.random.default_rng(params.seed)
    p = params
    g = geometry
    n = p.n
    cols = rng.integers(0, g.columns, size=n)
    writes = rng.random(n) < p.write_fraction
    banks_fixed = p.bank

    if kind is SyntheticKind.BANK_PING_PONG:
        if len(p.rows) < 2 or len(set(p.rows)) != len(p.rows):
            raise ConfigError("pingpong needs at least two distinct rows")
        rows = [p.rows[i % len(p.rows)] for i in range(n)]
        banks = [banks_fixed or 0] * n
    elif kind is SyntheticKind.ROW_STREAM:
        nb = 1 if banks_fixed is not None else g.banks_per_rank
        if n > nb * (g.rows_per_bank - p.row_offset):
            raise ConfigError("stream needs more rows than the geometry holds")
        if banks_fixed is not None:
            rows = [p.row_offset + i for i in range(n)]
            banks = [banks_fixed] * n
        else:
            rows = [p.row_offset + i // nb for i in range(n)]
            banks = [i % nb for i in range(n)]
    else:
        if p.num_rows < 1 or p.row_offset + p.num_rows > g.rows_per_bank:
            raise ConfigError("row population outside geometry")
        if kind is SyntheticKind.UNIFORM_RANDOM:
            picks = rng.integers(0, p.num_rows, size=n)
        else:
            if p.zipf_s <= 0:
                raise ConfigError("zipf exponent must be positive")
            weights = zipf_pmf(p.num_rows, p.zipf_s)
            picks = rng.choice(p.num_rows, size=n, p=weights)
        rows = [p.row_offset + int(x) for x in picks]
        if banks_fixed is not None:
            banks = [banks_fixed] * n
        else:
            banks = [int(x) for x in rng.integers(0, g.banks_per_rank, size=n)]

    out = []
    for i in range(n):
        coord = DramCoord(p.channel, p.rank, banks[i], rows[i], int(cols[i]))
        out.append(TraceRecord(p.nonmem, encode_coord(coord, g), "W" if writes[i] else "R"))
    return out


def zipf_pmf(num: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, num + 1, dtype=float) ** s
    return w / w.sum()


def reactivation_fraction(row_ids: Sequence) -> Optional[float]:
    """Fraction of accesses to a row that was touched before, treating every
    access as an activation."""
    if not row_ids:
        return None
    seen = set()
    again = 0
    for r in row_ids:
        if r in seen:
            again += 1
        seen.add(r)
    return again / len(row_ids)


# -- row-level temporal locality ----------------------------------------------

@dataclass
class RltlCurve:
    intervals_ms: list
    fractions: list
    qualifying: list
    total_activations: int = 0

    def fraction_at(self, interval_ms: float) -> float:
        return self.fractions[self.intervals_ms.index(interval_ms)]

    def to_csv(self) -> str:
        lines = ["interval_ms,fraction,qualifying,total"]
        for t, f, q in zip(self.intervals_ms, self.fractions, self.qualifying):
            lines.append(f"{_fmt_interval(t)},{f:.6f},{q},{self.total_activations}")
        return "\n".join(lines) + "\n"


def _fmt_interval(t: float) -> str:
    if math.isinf(t):
        return "inf"
    return f"{t:g}"


def activation_log(commands: Iterable[DramCommand]) -> list:
    """(time, row id, event) triples for the ACT/PRE commands of a schedule."""
    out = []
    for cmd in commands:
        if cmd.kind is CommandKind.ACT or cmd.kind is CommandKind.PRE:
            c = cmd.coord
            out.append((cmd.issue_time, (c.channel, c.rank, c.bank, c.row), cmd.kind.value))
    return out


def rltl(log: Sequence, intervals_ms: Sequence[float] = DEFAULT_INTERVALS_MS,
         clock_period_ns: float = 1.25) -> RltlCurve:
    """For each activation, the gap since the most recent precharge of the same
    row; an activation qualifies for interval t when that gap is at most t.
    A row's first activation never qualifies."""
    last_pre: dict = {}
    gaps = []
    total = 0
    prev_t = None
    for t, row, event in log:
        if prev_t is not None and t < prev_t:
            raise ValueError(f"activation log not time-sorted at t={t}")
        prev_t = t
        if event == "PRE":
            last_pre[row] = t
        elif event == "ACT":
            total += 1
            p = last_pre.get(row)
            if p is not None:
                gaps.append(t - p)
        else:
            raise ValueError(f"unknown event {event!r}")
    gaps.sort()
    gaps_arr = np.asarray(gaps, dtype=np.int64)
    qualifying = []
    for ms in intervals_ms:
        if math.isinf(ms):
            q = len(gaps)
        else:
            limit = ms * 1e6 / clock_period_ns
            q = int(np.searchsorted(gaps_arr, limit, side="right"))
        qualifying.append(q)
    fractions = [q / total if total else 0.0 for q in qualifying]
    return RltlCurve(list(intervals_ms), fractions, qualifying, total)
