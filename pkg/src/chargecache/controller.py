"""Per-channel memory controller: address mapping, request queues, FR-FCFS
scheduling under open- or closed-row policy, and all-bank refresh."""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Optional

from .dram import (BankState, ChannelBus, CommandKind, ConfigError, DramCommand, DramCoord, DramGeometry,
                   RankState, TimingClass, TimingParams, apply_command, earliest_issue,
                   effective_timings)
from .policy import LatencyPolicy

INF = float("inf")
# per-bank scheduling cases, see ChannelController._bank_info
_EMPTY, _MISS, _COL, _IDLE_OPEN, _CONFLICT = range(5)
ROWS_PER_RETENTION_WINDOW = 8192

ACT, PRE, RD, WR, REF = (CommandKind.ACT, CommandKind.PRE, CommandKind.RD,
                         CommandKind.WR, CommandKind.REF)


class AddressError(ValueError):
    pass


class RowPolicy(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class ControllerConfig:
    row_policy: RowPolicy = RowPolicy.OPEN
    queue_capacity: int = 64
    refresh_enabled: bool = True
    # writes are drained ahead of reads once the write queue is fuller than this
    write_drain_fraction: float = 0.8
    # open banks are force-precharged once refresh slips by this many tREFI
    refresh_pullin: int = 4
    # re-check every issued command against the generic timing rules (slow;
    # the scheduler's inline checks and the offline verifier normally suffice)
    self_check: bool = False

    def __post_init__(self):
        if isinstance(self.row_policy, str):
            object.__setattr__(self, "row_policy", RowPolicy(self.row_policy))
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")


def _bits(n: int) -> int:
    return n.bit_length() - 1


def map_address(address: int, geometry: DramGeometry) -> DramCoord:
    """Decode a physical address.

    Bit fields from least significant: line offset, channel, column, bank,
    rank, row.
    """
    g = geometry
    if address < 0 or address >= g.capacity_bytes:
        raise AddressError(f"address {address:#x} outside {g.capacity_bytes:#x}-byte capacity")
    a = address >> _bits(g.cacheline_bytes)
    channel = a & (g.channels - 1)
    a >>= _bits(g.channels)
    column = a & (g.columns - 1)
    a >>= _bits(g.columns)
    bank = a & (g.banks_per_rank - 1)
    a >>= _bits(g.banks_per_rank)
    rank = a & (g.ranks_per_channel - 1)
    a >>= _bits(g.ranks_per_channel)
    return DramCoord(channel, rank, bank, a, column)


def encode_coord(coord: DramCoord, geometry: DramGeometry) -> int:
    """Inverse of map_address for line-aligned addresses."""
    g = geometry
    fields = ((coord.row, g.rows_per_bank), (coord.rank, g.ranks_per_channel),
              (coord.bank, g.banks_per_rank), (coord.column or 0, g.columns),
              (coord.channel, g.channels))
    a = 0
    for value, count in fields:
        if not 0 <= value < count:
            raise AddressError(f"coordinate {coord} outside geometry")
        a = (a << _bits(count)) | value
    return a << _bits(g.cacheline_bytes)


class MemRequest:
    __slots__ = ("core_id", "is_read", "address", "coord", "row", "arrive_time",
                 "first_issue_time", "complete_time", "done", "outcome", "seq")

    def __init__(self, core_id: int, is_read: bool, address: int, coord: DramCoord):
        self.core_id = core_id
        self.is_read = is_read
        self.address = address
        self.coord = coord
        self.row = coord.row if coord is not None else None
        self.arrive_time = None
        self.first_issue_time = None
        self.complete_time = None
        self.done = False
        self.outcome = None  # "hit", "miss" or "conflict", judged at arrival
        self.seq = 0         # arrival order within its channel

    @property
    def kind(self) -> str:
        return "R" if self.is_read else "W"

    def __repr__(self):
        return f"MemRequest(core={self.core_id}, {self.kind}, {self.address:#x})"


class ChannelController:
    def __init__(self, channel: int, geometry: DramGeometry, base: TimingParams,
                 deltas: tuple[int, int], config: ControllerConfig, policy: LatencyPolicy):
        self.channel = channel
        self.geometry = geometry
        self.base = base
        self.reduced = effective_timings(base, deltas, TimingClass.REDUCED)
        self.config = config
        self.policy = policy
        self.closed = config.row_policy is RowPolicy.CLOSED
        self.self_check = config.self_check
        self.ranks = [RankState.fresh(geometry.banks_per_rank)
                      for _ in range(geometry.ranks_per_channel)]
        self.bus = ChannelBus()
        # age-ordered request lists per bank: bank_q[0] reads, bank_q[1] writes,
        # indexed by rank * banks_per_rank + bank
        nbanks = geometry.ranks_per_channel * geometry.banks_per_rank
        self.bank_q = ([[] for _ in range(nbanks)], [[] for _ in range(nbanks)])
        self.counts = [0, 0]
        self._bank_wake = [INF] * nbanks
        # cached _bank_info per bank; cleared when the bank or its queues change
        self._info: list = [None] * nbanks
        # _bank_wake[i] is a lower bound on bank i's next command while its
        # cached info stands: bus and rank constraints only tighten as commands
        # issue. -1 forces a rescan of the bank.
        # shortest delay before a bank can take another command after each kind
        red = self.reduced
        self._min_gap = {
            ACT: min(red.tRCD, red.tRAS),
            PRE: base.tRP,
            RD: min(base.tCCD, base.tRTP),
            WR: min(base.tCCD, base.tCWL + base.tBL + base.tWR),
        }
        self._slots = [(r * geometry.banks_per_rank + b, r, b, bank)
                       for r, rank in enumerate(self.ranks) for b, bank in enumerate(rank.banks)]
        n = geometry.ranks_per_channel
        self.ref_due = [base.tREFI] * n
        self.ref_pending = [False] * n
        self.ref_ptr = [0] * n
        self.rows_per_ref = max(1, geometry.rows_per_bank // ROWS_PER_RETENTION_WINDOW)
        self._inflight: list = []  # heap of (complete_time, seq, request)
        self._seq = 0
        self._arrivals = 0
        self.log: list = []
        self.next_wake = 0

    # -- queues -------------------------------------------------------------

    def enqueue(self, req: MemRequest, now: int) -> bool:
        qi = 0 if req.is_read else 1
        if self.counts[qi] >= self.config.queue_capacity:
            return False
        c = req.coord
        req.arrive_time = now
        self._arrivals += 1
        req.seq = self._arrivals
        open_row = self.ranks[c.rank].banks[c.bank].open_row
        req.outcome = "miss" if open_row is None else ("hit" if open_row == c.row else "conflict")
        idx = c.rank * self.geometry.banks_per_rank + c.bank
        self.bank_q[qi][idx].append(req)
        self._info[idx] = None
        self._bank_wake[idx] = -1
        self.counts[qi] += 1
        # the new request can only create work on its own bank; wake no later
        # than a lower bound on that bank's next command
        bank = self.ranks[c.rank].banks[c.bank]
        if open_row is None:
            bound = bank.last_pre_time + self.base.tRP
        else:
            act = self.reduced if bank.act_timing_class is TimingClass.REDUCED else self.base
            bound = bank.last_act_time + min(act.tRCD, act.tRAS)
        if bound < now:
            bound = now
        if bound < self.next_wake:
            self.next_wake = bound
        return True

    def occupancy(self) -> tuple[int, int]:
        return self.counts[0], self.counts[1]

    def pending(self, reads: bool = True) -> list:
        """Queued requests of one kind, oldest first."""
        return sorted((r for lst in self.bank_q[0 if reads else 1] for r in lst),
                      key=lambda r: r.seq)

    def deliver(self, now: int) -> list:
        """Pop reads whose data has fully returned by `now`."""
        out = []
        heap = self._inflight
        while heap and heap[0][0] <= now:
            out.append(heapq.heappop(heap)[2])
        return out

    def next_completion(self) -> float:
        return self._inflight[0][0] if self._inflight else INF

    def idle(self) -> bool:
        return not (self.counts[0] or self.counts[1] or self._inflight)

    # -- command issue ------------------------------------------------------

    def _issue(self, kind, rank_i, bank_i, row, column, now, core=-1,
               tclass=TimingClass.STANDARD) -> DramCommand:
        rank = self.ranks[rank_i]
        bank = rank.banks[bank_i] if bank_i is not None else None
        cmd = DramCommand(kind, DramCoord(self.channel, rank_i, bank_i, row, column),
                          now, tclass, core)
        if self.self_check:
            active = self.base
            if kind is not ACT and bank is not None \
                    and bank.act_timing_class is TimingClass.REDUCED:
                active = self.reduced
            apply_command(bank, rank, self.bus, cmd, now, self.base, active)
        else:
            apply_command(bank, rank, self.bus, cmd, now, self.base, self.base, False)
        if bank_i is not None:
            idx = rank_i * self.geometry.banks_per_rank + bank_i
            self._info[idx] = None
            self._bank_wake[idx] = -1
        self.log.append(cmd)
        return cmd

    def _activate(self, req: MemRequest, now: int) -> DramCommand:
        c = req.coord
        tclass = self.policy.on_activate(req.core_id, c, now)
        if req.first_issue_time is None:
            req.first_issue_time = now
        return self._issue(ACT, c.rank, c.bank, c.row, None, now, req.core_id, tclass)

    def _precharge(self, rank_i: int, bank_i: int, now: int) -> DramCommand:
        bank = self.ranks[rank_i].banks[bank_i]
        row = bank.open_row
        self.policy.on_precharge(bank.act_core, DramCoord(self.channel, rank_i, bank_i, row), now)
        return self._issue(PRE, rank_i, bank_i, row, None, now, bank.act_core)

    def _column(self, req: MemRequest, now: int) -> DramCommand:
        c = req.coord
        kind = RD if req.is_read else WR
        cmd = self._issue(kind, c.rank, c.bank, c.row, c.column, now, req.core_id)
        if req.first_issue_time is None:
            req.first_issue_time = now
        qi = 0 if req.is_read else 1
        self.bank_q[qi][c.rank * self.geometry.banks_per_rank + c.bank].remove(req)
        self.counts[qi] -= 1
        b = self.base
        if req.is_read:
            req.complete_time = now + b.tCL + b.tBL
            self._seq += 1
            heapq.heappush(self._inflight, (req.complete_time, self._seq, req))
        else:
            req.complete_time = now + b.tCWL + b.tBL
            req.done = True
        return cmd

    def _refresh(self, rank_i: int, now: int) -> DramCommand:
        cmd = self._issue(REF, rank_i, None, None, None, now)
        ptr = self.ref_ptr[rank_i]
        rows = self.geometry.rows_per_bank
        self.policy.on_refresh(self.channel, rank_i,
                               [(ptr + k) % rows for k in range(self.rows_per_ref)], now)
        self.ref_ptr[rank_i] = (ptr + self.rows_per_ref) % rows
        self.ref_due[rank_i] += self.base.tREFI
        self.ref_pending[rank_i] = False
        self._rescan()
        return cmd

    def refresh_due(self, rank_i: int, now: int) -> Optional[DramCommand]:
        """Issue REF for a rank if its deadline has passed and it can legally go now."""
        if not self.config.refresh_enabled:
            return None
        if now >= self.ref_due[rank_i] and not self.ref_pending[rank_i]:
            self.ref_pending[rank_i] = True
            self._rescan()
        if not self.ref_pending[rank_i]:
            return None
        rank = self.ranks[rank_i]
        t = earliest_issue(REF, None, rank, self.bus, self.base, self.base)
        if t is not None and t <= now:
            return self._refresh(rank_i, now)
        return None

    def _rescan(self) -> None:
        """Refresh state changes can loosen constraints; re-examine every bank."""
        self._bank_wake[:] = [-1] * len(self._bank_wake)

    def _bank_info(self, idx: int, bank: BankState) -> tuple:
        """Scheduling facts that depend only on one bank's state and queues:
        (case, bank-local earliest time, read candidate, write candidate).

        For open rows with queued hits the candidates are the oldest hits;
        otherwise they are the oldest request of each queue."""
        rq = self.bank_q[0][idx]
        wq = self.bank_q[1][idx]
        row = bank.open_row
        act = self.reduced if bank.act_timing_class is TimingClass.REDUCED else self.base
        if row is None:
            if not rq and not wq:
                return (_EMPTY,)
            return (_MISS, bank.last_pre_time + self.base.tRP,
                    rq[0] if rq else None, wq[0] if wq else None)
        hit_r = hit_w = None
        for q in rq:
            if q.row == row:
                hit_r = q
                break
        for q in wq:
            if q.row == row:
                hit_w = q
                break
        if hit_r is not None or hit_w is not None:
            return (_COL, bank.last_act_time + act.tRCD, hit_r, hit_w)
        base = self.base
        pre = max(bank.last_act_time + act.tRAS, bank.last_rd_time + base.tRTP,
                  bank.last_wr_time + base.tCWL + base.tBL + base.tWR)
        if not rq and not wq:
            return (_IDLE_OPEN, pre)
        return (_CONFLICT, pre, rq[0] if rq else None, wq[0] if wq else None)

    # -- scheduling ---------------------------------------------------------

    def tick(self, now: int) -> Optional[DramCommand]:
        """Issue at most one command for this channel at cycle `now`.

        Sets ``next_wake`` to the earliest cycle at which a command could
        possibly become issuable if no new request arrives.
        """
        return self._schedule(now)

    def _schedule(self, now: int) -> Optional[DramCommand]:
        # Timing checks are inlined here for speed; apply_command re-validates
        # every issued command against the generic rules.
        base, reduced = self.base, self.reduced
        REDUCED = TimingClass.REDUCED
        ranks = self.ranks
        bus = self.bus
        wake = INF
        cfg = self.config
        ref_pending, ref_due = self.ref_pending, self.ref_due
        tRP = base.tRP
        wr_recovery = base.tCWL + base.tBL + base.tWR
        tRTP = base.tRTP

        def pre_time(bank):
            act = reduced if bank.act_timing_class is REDUCED else base
            t = bank.last_act_time + act.tRAS
            t2 = bank.last_rd_time + tRTP
            t3 = bank.last_wr_time + wr_recovery
            return t if t >= t2 and t >= t3 else (t2 if t2 >= t3 else t3)

        # refresh: REF when due, and precharge banks that nothing is waiting on
        if cfg.refresh_enabled:
            tREFI = base.tREFI
            for r, rank in enumerate(ranks):
                if not ref_pending[r]:
                    if now >= ref_due[r]:
                        ref_pending[r] = True
                        self._rescan()
                    else:
                        wake = min(wake, ref_due[r])
                        continue
                deadline = ref_due[r] + cfg.refresh_pullin * tREFI
                forced = now >= deadline
                if not forced:
                    wake = min(wake, deadline)
                t = earliest_issue(REF, None, rank, bus, base, base)
                if t is not None:
                    if t <= now:
                        self.next_wake = now + 1
                        return self._refresh(r, now)
                    wake = min(wake, t)
                    continue
                for b, bank in enumerate(rank.banks):
                    if bank.open_row is None:
                        continue
                    if not forced:
                        idx = r * len(rank.banks) + b
                        inf = self._info[idx]
                        if inf is None:
                            inf = self._info[idx] = self._bank_info(idx, bank)
                        if inf[0] == _COL:
                            continue  # requests still wait on the open row
                    t = pre_time(bank)
                    if t <= now:
                        self.next_wake = now + 1
                        return self._precharge(r, b, now)
                    wake = min(wake, t)

        n_reads, n_writes = self.counts
        primary = 1 if n_writes > cfg.write_drain_fraction * cfg.queue_capacity or not n_reads else 0
        pullin = cfg.refresh_pullin * base.tREFI
        closed = self.closed
        slots = self._slots
        col_t = bus.last_col_time + base.tCCD
        bus_ready = (max(col_t, bus.last_wr_time + base.tCWL + base.tBL + base.tWTR),
                     max(col_t, bus.last_rd_time + base.tCL + base.tCCD + 2 - base.tCWL))
        # rank-level activation constraints (tRRD, tRFC, tFAW) and forced refresh
        act_ready = []
        col_blocked = []
        for r, rank in enumerate(ranks):
            t = max(rank.last_act_time + base.tRRD, rank.last_ref_time + base.tRFC)
            if len(rank.act_window) == 4:
                t = max(t, rank.act_window[0] + base.tFAW)
            act_ready.append(t)
            col_blocked.append(ref_pending[r] and now >= ref_due[r] + pullin)

        # One pass over the banks collects the best candidate of each class
        # and the earliest time any bank could issue. The classes are then
        # tried in priority order:
        #   1. column commands to open rows (first ready), oldest first,
        #      primary queue before secondary
        #   2. closed-row policy: close an open row nobody is waiting for
        #   3. ACT/PRE for the oldest request of each bank (first come)
        col_best = [None, None]
        closed_pre = None
        age_best = [None, None]
        age_act = [False, False]
        bank_wake = self._bank_wake
        info = self._info
        for idx, r, b, bank in slots:
            if bank_wake[idx] > now:
                continue
            inf = info[idx]
            if inf is None:
                inf = info[idx] = self._bank_info(idx, bank)
            case = inf[0]
            if case == _EMPTY:
                bank_wake[idx] = INF
                continue
            bw = INF
            if case == _COL:
                if not col_blocked[r]:
                    t_rcd = inf[1]
                    for qi in (0, 1):
                        req = inf[2 + qi]
                        if req is None:
                            continue
                        t = bus_ready[qi]
                        if t_rcd > t:
                            t = t_rcd
                        if t < bw:
                            bw = t
                        if t <= now:
                            best = col_best[qi]
                            if best is None or req.seq < best.seq:
                                col_best[qi] = req
            elif case == _IDLE_OPEN or (case == _CONFLICT and closed):
                if closed:
                    bw = inf[1]
                    if bw <= now and closed_pre is None:
                        closed_pre = (r, b)
            elif case == _MISS and ref_pending[r]:
                pass
            else:
                # oldest request of the bank, primary queue first
                oldest_r, oldest_w = inf[2], inf[3]
                if primary:
                    group, req = (1, oldest_w) if oldest_w is not None else (0, oldest_r)
                else:
                    group, req = (0, oldest_r) if oldest_r is not None else (1, oldest_w)
                bw = inf[1]
                if case == _MISS and act_ready[r] > bw:
                    bw = act_ready[r]
                if bw <= now:
                    best = age_best[group]
                    if best is None or req.seq < best.seq:
                        age_best[group] = req
                        age_act[group] = case == _MISS
            bank_wake[idx] = bw
        bw = min(bank_wake)
        if bw < wake:
            wake = bw

        cmd = None
        for qi in (primary, 1 - primary):
            if col_best[qi] is not None:
                cmd = self._column(col_best[qi], now)
                break
        else:
            if closed_pre is not None:
                cmd = self._precharge(closed_pre[0], closed_pre[1], now)
            else:
                for group in (primary, 1 - primary):
                    req = age_best[group]
                    if req is not None:
                        if age_act[group]:
                            cmd = self._activate(req, now)
                        else:
                            c = req.coord
                            cmd = self._precharge(c.rank, c.bank, now)
                        break
        if cmd is None:
            self.next_wake = wake
            return None

        # Issuing only tightens constraints, so every other bank's earliest
        # time still bounds its next command from below. The bank just
        # commanded is bounded by the shortest gap its new state allows.
        c = cmd.coord
        issued = c.rank * self.geometry.banks_per_rank + c.bank
        nxt = now + self._min_gap[cmd.kind]
        saved = bank_wake[issued]
        bank_wake[issued] = INF
        bw = min(bank_wake)
        bank_wake[issued] = saved
        if bw < nxt:
            nxt = bw
        self.next_wake = nxt if nxt > now else now + 1
        return cmd

    schedule = tick
