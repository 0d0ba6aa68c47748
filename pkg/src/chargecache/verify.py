"""Independent replay checker for DRAM command traces.

This module deliberately re-derives every timing rule instead of calling the
scheduler's state machine, so that a bug in one is unlikely to be mirrored in
the other. It checks two things:

* timing/protocol legality of each command, and
* safety of reduced-latency activations: a reduced ACT must target a row that
  was precharged (closing an activation of that same row) no longer than the
  caching duration earlier.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Union

from .dram import (CommandKind, DramCommand, DramGeometry, TimingClass, TimingParams,
                   TraceParseError, parse_command_trace)
from .policy import PolicyConfig, PolicyKind, ms_to_cycles

_FAR_PAST = -(1 << 50)
ROWS_PER_RETENTION_WINDOW = 8192


@dataclass
class Violation:
    index: int
    lineno: int
    category: str  # "timing" or "safety"
    message: str


@dataclass
class VerifyReport:
    commands: int = 0
    timing_violations: list = field(default_factory=list)
    safety_violations: list = field(default_factory=list)
    act_counts: dict = field(default_factory=lambda: {"S": 0, "R": 0})

    @property
    def violation_count(self) -> int:
        return len(self.timing_violations) + len(self.safety_violations)

    @property
    def first_offending_index(self) -> Optional[int]:
        found = [v.index for v in self.timing_violations + self.safety_violations]
        return min(found) if found else None

    @property
    def ok(self) -> bool:
        return self.violation_count == 0

    def summary(self) -> str:
        first = self.first_offending_index
        return (f"commands={self.commands} timing_violations={len(self.timing_violations)} "
                f"safety_violations={len(self.safety_violations)} "
                f"acts_standard={self.act_counts['S']} acts_reduced={self.act_counts['R']} "
                f"first_offending_index={'-' if first is None else first}")


class _Bank:
    __slots__ = ("row", "act", "rcd", "ras", "rd", "wr", "pre")

    def __init__(self):
        self.row = None
        self.act = self.rd = self.wr = self.pre = _FAR_PAST
        self.rcd = self.ras = 0


def verify_command_trace(trace: Iterable[Union[DramCommand, tuple]],
                         geometry: DramGeometry, base: TimingParams,
                         deltas: tuple[int, int], caching_duration: Optional[int],
                         nuat_window: Optional[int] = None,
                         check_safety: bool = True) -> VerifyReport:
    """Replay `trace` and report every timing and safety violation.

    `trace` items are commands or (line number, command) pairs. A
    `caching_duration` of None means entries never expire. `nuat_window`
    additionally admits reduced activations of rows refreshed within that many
    cycles; `check_safety=False` skips the safety check entirely (idealized
    all-rows-fast DRAM).
    """
    d_rcd, d_ras = deltas
    T = base
    rep = VerifyReport()
    banks: dict = {}
    ranks_act: dict = {}      # (ch, rank) -> list of recent ACT times
    ranks_ref: dict = {}      # (ch, rank) -> last REF time
    ref_ptr: dict = {}        # (ch, rank) -> next row to be refreshed
    refreshed: dict = {}      # (ch, rank, row) -> last refresh time
    closed_at: dict = {}      # (ch, rank, bank, row) -> last PRE closing that row
    bus: dict = {}            # ch -> [last rd, last wr, last col]
    last_time: dict = {}      # ch -> last command time
    step = max(1, geometry.rows_per_bank // ROWS_PER_RETENTION_WINDOW)

    def timing(i, ln, msg):
        rep.timing_violations.append(Violation(i, ln, "timing", msg))

    for i, item in enumerate(trace):
        ln, cmd = item if isinstance(item, tuple) else (i + 1, item)
        rep.commands += 1
        c = cmd.coord
        t = cmd.issue_time
        if not (0 <= c.channel < geometry.channels and 0 <= c.rank < geometry.ranks_per_channel):
            raise TraceParseError(ln, f"unknown coordinate {c}")
        if cmd.kind is not CommandKind.REF:
            if c.bank is None or not 0 <= c.bank < geometry.banks_per_rank:
                raise TraceParseError(ln, f"unknown bank in {c}")
            if c.row is None or not 0 <= c.row < geometry.rows_per_bank:
                raise TraceParseError(ln, f"unknown row in {c}")
        if t < 0:
            raise TraceParseError(ln, "negative issue time")
        prev = last_time.get(c.channel)
        if prev is not None:
            if t < prev:
                raise TraceParseError(ln, f"time {t} precedes earlier command at {prev}")
            if t == prev:
                timing(i, ln, f"second command on channel {c.channel} in cycle {t}")
        last_time[c.channel] = t

        rk = (c.channel, c.rank)
        b_rd, b_wr, b_col = bus.get(c.channel, (_FAR_PAST, _FAR_PAST, _FAR_PAST))
        kind = cmd.kind

        if kind is CommandKind.REF:
            rank_banks = [banks[k] for k in banks if k[0] == c.channel and k[1] == c.rank]
            if any(b.row is not None for b in rank_banks):
                timing(i, ln, "REF with open bank")
            for b in rank_banks:
                if t - b.pre < T.tRP:
                    timing(i, ln, f"REF {t - b.pre} cycles after PRE (tRP={T.tRP})")
                    break
            last_ref = ranks_ref.get(rk, _FAR_PAST)
            if t - last_ref < T.tRFC:
                timing(i, ln, f"REF {t - last_ref} cycles after REF (tRFC={T.tRFC})")
            ranks_ref[rk] = t
            ptr = ref_ptr.get(rk, 0)
            for r in range(ptr, ptr + step):
                refreshed[(c.channel, c.rank, r % geometry.rows_per_bank)] = t
            ref_ptr[rk] = (ptr + step) % geometry.rows_per_bank
            continue

        key = (c.channel, c.rank, c.bank)
        bank = banks.get(key)
        if bank is None:
            bank = banks[key] = _Bank()

        if kind is CommandKind.ACT:
            reduced = cmd.timing_class is TimingClass.REDUCED
            rep.act_counts["R" if reduced else "S"] += 1
            if bank.row is not None:
                timing(i, ln, f"ACT to bank with row {bank.row} open")
            if t - bank.pre < T.tRP:
                timing(i, ln, f"ACT {t - bank.pre} cycles after PRE (tRP={T.tRP})")
            acts = ranks_act.setdefault(rk, [])
            if acts and t - acts[-1] < T.tRRD:
                timing(i, ln, f"ACT {t - acts[-1]} cycles after ACT (tRRD={T.tRRD})")
            if len(acts) >= 4 and t - acts[-4] < T.tFAW:
                timing(i, ln, f"fifth ACT within {t - acts[-4]} cycles (tFAW={T.tFAW})")
            if t - ranks_ref.get(rk, _FAR_PAST) < T.tRFC:
                timing(i, ln, "ACT inside tRFC")
            acts.append(t)
            if len(acts) > 4:
                del acts[0]
            if reduced and check_safety:
                ok = False
                pre_t = closed_at.get((c.channel, c.rank, c.bank, c.row))
                if pre_t is not None and (caching_duration is None or t - pre_t <= caching_duration):
                    ok = True
                if not ok and nuat_window is not None:
                    ref_t = refreshed.get((c.channel, c.rank, c.row))
                    ok = ref_t is not None and t - ref_t <= nuat_window
                if not ok:
                    age = "never precharged" if pre_t is None else f"precharged {t - pre_t} cycles ago"
                    rep.safety_violations.append(
                        Violation(i, ln, "safety", f"reduced ACT to row {c.row}: {age}"))
            bank.row = c.row
            bank.act = t
            bank.rcd = T.tRCD - d_rcd if reduced else T.tRCD
            bank.ras = T.tRAS - d_ras if reduced else T.tRAS
            continue

        if kind is CommandKind.PRE:
            if bank.row is None:
                timing(i, ln, "PRE to precharged bank")
            else:
                if c.row != bank.row:
                    timing(i, ln, f"PRE names row {c.row} but row {bank.row} is open")
                if t - bank.act < bank.ras:
                    timing(i, ln, f"PRE {t - bank.act} cycles after ACT (tRAS={bank.ras})")
                if t - bank.rd < T.tRTP:
                    timing(i, ln, f"PRE {t - bank.rd} cycles after RD (tRTP={T.tRTP})")
                if t - bank.wr < T.tCWL + T.tBL + T.tWR:
                    timing(i, ln, "PRE before write recovery (tWR)")
                closed_at[(c.channel, c.rank, c.bank, bank.row)] = t
            bank.row = None
            bank.pre = t
            continue

        # column commands
        if bank.row is None or bank.row != c.row:
            timing(i, ln, f"{kind.value} to row {c.row} but open row is {bank.row}")
        elif t - bank.act < bank.rcd:
            timing(i, ln, f"{kind.value} {t - bank.act} cycles after ACT (tRCD={bank.rcd})")
        if t - b_col < T.tCCD:
            timing(i, ln, f"column command {t - b_col} cycles after previous (tCCD={T.tCCD})")
        if kind is CommandKind.RD:
            if t < b_wr + T.tCWL + T.tBL + T.tWTR:
                timing(i, ln, "RD inside write-to-read turnaround (tWTR)")
            bank.rd = t
            bus[c.channel] = (t, b_wr, t)
        else:
            if t < b_rd + T.tCL + T.tCCD + 2 - T.tCWL:
                timing(i, ln, "WR inside read-to-write turnaround")
            bank.wr = t
            bus[c.channel] = (b_rd, t, t)
    return rep


def verify_command_file(fh: Union[TextIO, Sequence[str]], geometry: DramGeometry,
                        base: TimingParams, deltas: tuple[int, int],
                        caching_duration: Optional[int], **kwargs) -> VerifyReport:
    """Parse a command-trace file and verify it; parse errors carry line numbers."""
    return verify_command_trace(parse_command_trace(fh), geometry, base, deltas,
                                caching_duration, **kwargs)


def policy_checks(policy: PolicyConfig, clock_period_ns: float) -> dict:
    """Safety parameters implied by a policy configuration, as keyword
    arguments for `verify_command_trace` (after geometry, timings, deltas).

    Reduced ACTs are justified by a recent precharge for the caching policies
    and by a recent refresh for the refresh-based ones; the low-latency device
    is reduced by construction and is exempt from the safety check."""
    duration = 0
    nuat_window = None
    if policy.kind in (PolicyKind.CHARGECACHE, PolicyKind.CHARGECACHE_NUAT):
        duration = ms_to_cycles(policy.caching_duration_ms, clock_period_ns)
    if policy.kind in (PolicyKind.NUAT, PolicyKind.CHARGECACHE_NUAT):
        nuat_window = ms_to_cycles(policy.nuat_window_ms, clock_period_ns)
    return {"caching_duration": duration, "nuat_window": nuat_window,
            "check_safety": policy.kind is not PolicyKind.LL_DRAM}
