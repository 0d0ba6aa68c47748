"""Timing-class decisions made by the memory controller on every ACT and PRE.

`ChargeCachePolicy` keeps a small set-associative table (the highly-charged
row address cache) of rows that were precharged recently. An activation that
finds its row in the table, inserted no longer than the caching duration ago,
may use reduced tRCD/tRAS. The other policies are comparison points.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional

from .dram import CommandKind, ConfigError, DramCommand, DramCoord, TimingClass

STANDARD = TimingClass.STANDARD
REDUCED = TimingClass.REDUCED


class PolicyKind(enum.Enum):
    BASELINE = "baseline"
    CHARGECACHE = "chargecache"
    NUAT = "nuat"
    LL_DRAM = "lldram"
    CHARGECACHE_NUAT = "chargecache+nuat"


def ms_to_cycles(ms: Optional[float], clock_period_ns: float) -> Optional[int]:
    if ms is None:
        return None
    if ms < 0:
        raise ConfigError("durations must be non-negative")
    return int(round(ms * 1e6 / clock_period_ns))


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.BASELINE
    # None means unbounded (fully associative, never evicts)
    entries_per_core: Optional[int] = 128
    associativity: int = 2
    # None means entries never expire
    caching_duration_ms: Optional[float] = 1.0
    shared: bool = False
    trcd_delta: int = 4
    tras_delta: int = 8
    nuat_window_ms: float = 4.0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.associativity < 1:
            raise ConfigError("associativity must be >= 1")
        if self.entries_per_core is not None:
            if self.entries_per_core < 0 or self.entries_per_core % self.associativity:
                raise ConfigError("entries_per_core must be a non-negative multiple of associativity")
            sets = self.entries_per_core // self.associativity
            if sets & (sets - 1):
                raise ConfigError("entries_per_core / associativity must be a power of two")
        if self.trcd_delta < 0 or self.tras_delta < 0:
            raise ConfigError("timing reductions must be non-negative")

    @property
    def deltas(self) -> tuple[int, int]:
        return (self.trcd_delta, self.tras_delta)


class HcracEntry:
    __slots__ = ("tag", "valid", "inserted_at")

    def __init__(self, tag, inserted_at):
        self.tag = tag
        self.valid = True
        self.inserted_at = inserted_at

    def __repr__(self):
        return f"HcracEntry({self.tag}, valid={self.valid}, t={self.inserted_at})"


class HcracTable:
    """Set-associative LRU table of (rank, bank, row) tags with insertion times.

    Within a set the list is kept in recency order, least recent first. An
    entry hits only while ``now - inserted_at <= caching_duration``.
    ``entries=None`` gives an unbounded table that never evicts.
    """

    def __init__(self, entries: Optional[int] = 128, associativity: int = 2,
                 caching_duration: Optional[int] = 800_000):
        self.entries = entries
        self.associativity = associativity
        self.caching_duration = caching_duration
        if entries is None:
            self._all: dict = {}
            self.n_sets = 0
        else:
            self.n_sets = entries // associativity
            self._sets = [[] for _ in range(self.n_sets)]
        self.inserts = 0
        self.evictions = 0
        self.lookups = 0
        self.hits = 0
        self.expired_on_lookup = 0
        self.expired_by_sweep = 0

    def _fresh(self, inserted_at: int, now: int) -> bool:
        return self.caching_duration is None or now - inserted_at <= self.caching_duration

    def set_index(self, tag: tuple) -> int:
        _, bank, row = tag
        return (row ^ bank) & (self.n_sets - 1)

    def insert(self, tag: tuple, now: int) -> None:
        self.inserts += 1
        if self.entries is None:
            self._all[tag] = now
            return
        if self.n_sets == 0:
            return
        ways = self._sets[self.set_index(tag)]
        for i, e in enumerate(ways):
            if e.tag == tag:
                e.valid = True
                e.inserted_at = now
                ways.append(ways.pop(i))
                return
        if len(ways) >= self.associativity:
            # expired entries are as good as invalid; reuse the least recent one
            victim = next((i for i, e in enumerate(ways)
                           if not e.valid or not self._fresh(e.inserted_at, now)), None)
            if victim is None:
                victim = 0
                self.evictions += 1
            del ways[victim]
        ways.append(HcracEntry(tag, now))

    def lookup(self, tag: tuple, now: int) -> bool:
        """True on a hit; a matching but expired entry is invalidated."""
        self.lookups += 1
        if self.entries is None:
            t = self._all.get(tag)
            if t is None:
                return False
            if self._fresh(t, now):
                self.hits += 1
                return True
            del self._all[tag]
            self.expired_on_lookup += 1
            return False
        if self.n_sets == 0:
            return False
        ways = self._sets[self.set_index(tag)]
        for i, e in enumerate(ways):
            if e.tag == tag and e.valid:
                if self._fresh(e.inserted_at, now):
                    ways.append(ways.pop(i))
                    self.hits += 1
                    return True
                e.valid = False
                self.expired_on_lookup += 1
                return False
        return False

    def expire(self, now: int) -> int:
        """Invalidate every entry older than the caching duration."""
        if self.caching_duration is None:
            return 0
        n = 0
        if self.entries is None:
            stale = [k for k, t in self._all.items() if not self._fresh(t, now)]
            for k in stale:
                del self._all[k]
            n = len(stale)
        else:
            for ways in self._sets:
                for e in ways:
                    if e.valid and not self._fresh(e.inserted_at, now):
                        e.valid = False
                        n += 1
        self.expired_by_sweep += n
        return n

    def valid_tags(self, now: Optional[int] = None) -> list:
        if self.entries is None:
            return [k for k, t in self._all.items() if now is None or self._fresh(t, now)]
        return [e.tag for ways in self._sets for e in ways
                if e.valid and (now is None or self._fresh(e.inserted_at, now))]

    def set_contents(self, index: int) -> list:
        """Valid tags of one set, least recently used first."""
        return [e.tag for e in self._sets[index] if e.valid]


class LatencyPolicy:
    """Baseline: every activation uses standard timings."""

    kind = PolicyKind.BASELINE
    sweep_interval: Optional[int] = None

    def on_precharge(self, core_id: int, coord: DramCoord, now: int) -> None:
        pass

    def on_activate(self, core_id: int, coord: DramCoord, now: int) -> TimingClass:
        return STANDARD

    def on_refresh(self, channel: int, rank: int, rows: Iterable[int], now: int) -> None:
        pass

    def expire(self, now: int) -> int:
        return 0

    def stats(self) -> dict:
        return {}


BaselinePolicy = LatencyPolicy


class LowLatencyPolicy(LatencyPolicy):
    """Idealized DRAM in which every row can be accessed with reduced timings."""

    kind = PolicyKind.LL_DRAM

    def on_activate(self, core_id, coord, now):
        return REDUCED


class ChargeCachePolicy(LatencyPolicy):
    kind = PolicyKind.CHARGECACHE

    def __init__(self, entries_per_core: Optional[int] = 128, associativity: int = 2,
                 caching_duration: Optional[int] = 800_000, shared: bool = False):
        self.entries_per_core = entries_per_core
        self.associativity = associativity
        self.caching_duration = caching_duration
        self.shared = shared
        self.tables: dict = {}
        if caching_duration:
            self.sweep_interval = max(1, caching_duration // 8)

    def table(self, core_id: int, channel: int) -> HcracTable:
        key = (-1, channel) if self.shared else (core_id, channel)
        t = self.tables.get(key)
        if t is None:
            t = self.tables[key] = HcracTable(self.entries_per_core, self.associativity,
                                              self.caching_duration)
        return t

    def on_precharge(self, core_id, coord, now):
        self.table(core_id, coord.channel).insert((coord.rank, coord.bank, coord.row), now)

    def on_activate(self, core_id, coord, now):
        hit = self.table(core_id, coord.channel).lookup((coord.rank, coord.bank, coord.row), now)
        return REDUCED if hit else STANDARD

    def expire(self, now):
        return sum(t.expire(now) for t in self.tables.values())

    def stats(self):
        out = {"inserts": 0, "evictions": 0, "lookups": 0, "hits": 0,
               "expired_on_lookup": 0, "expired_by_sweep": 0}
        for t in self.tables.values():
            for k in out:
                out[k] += getattr(t, k)
        return out


class NuatPolicy(LatencyPolicy):
    """Single-threshold stand-in for refresh-aware access: rows refreshed within
    `window` cycles are activated with reduced timings."""

    kind = PolicyKind.NUAT

    def __init__(self, window: int):
        self.window = window
        self.refreshed: dict = {}

    def on_refresh(self, channel, rank, rows, now):
        for r in rows:
            self.refreshed[(channel, rank, r)] = now

    def on_activate(self, core_id, coord, now):
        t = self.refreshed.get((coord.channel, coord.rank, coord.row))
        return REDUCED if t is not None and now - t <= self.window else STANDARD

    def stats(self):
        return {"rows_tracked": len(self.refreshed)}


class ChargeCacheNuatPolicy(LatencyPolicy):
    kind = PolicyKind.CHARGECACHE_NUAT

    def __init__(self, chargecache: ChargeCachePolicy, nuat: NuatPolicy):
        self.cc = chargecache
        self.nuat = nuat
        self.sweep_interval = chargecache.sweep_interval

    def on_precharge(self, core_id, coord, now):
        self.cc.on_precharge(core_id, coord, now)

    def on_activate(self, core_id, coord, now):
        # always consult the table so its LRU state matches plain ChargeCache
        a = self.cc.on_activate(core_id, coord, now)
        b = self.nuat.on_activate(core_id, coord, now)
        return REDUCED if REDUCED in (a, b) else STANDARD

    def on_refresh(self, channel, rank, rows, now):
        self.nuat.on_refresh(channel, rank, rows, now)

    def expire(self, now):
        return self.cc.expire(now)

    def stats(self):
        return self.cc.stats()


def make_policy(config: PolicyConfig, clock_period_ns: float) -> LatencyPolicy:
    duration = ms_to_cycles(config.caching_duration_ms, clock_period_ns)
    kind = config.kind
    if kind is PolicyKind.BASELINE:
        return LatencyPolicy()
    if kind is PolicyKind.LL_DRAM:
        return LowLatencyPolicy()
    cc = ChargeCachePolicy(config.entries_per_core, config.associativity, duration, config.shared)
    if kind is PolicyKind.CHARGECACHE:
        return cc
    nuat = NuatPolicy(ms_to_cycles(config.nuat_window_ms, clock_period_ns))
    if kind is PolicyKind.NUAT:
        return nuat
    return ChargeCacheNuatPolicy(cc, nuat)


def hit_rate(reduced: int, total: int) -> Optional[float]:
    """Fraction of activations that used reduced timings; None when there were none."""
    if total == 0:
        return None
    return reduced / total


def classify_schedule(commands: Iterable[DramCommand], policy: LatencyPolicy,
                      rows_per_ref: int = 1, rows_per_bank: int = 65536) -> list:
    """Replay a fixed command schedule through `policy`, returning the class it
    would assign to each ACT. Timing is not re-checked; this only counts."""
    classes = []
    ref_ptr: dict = {}
    for cmd in commands:
        c = cmd.coord
        if cmd.kind is CommandKind.ACT:
            classes.append(policy.on_activate(cmd.core, c, cmd.issue_time))
        elif cmd.kind is CommandKind.PRE:
            policy.on_precharge(cmd.core, c, cmd.issue_time)
        elif cmd.kind is CommandKind.REF:
            ptr = ref_ptr.get((c.channel, c.rank), 0)
            policy.on_refresh(c.channel, c.rank,
                              [(ptr + k) % rows_per_bank for k in range(rows_per_ref)],
                              cmd.issue_time)
            ref_ptr[(c.channel, c.rank)] = (ptr + rows_per_ref) % rows_per_bank
    return classes
