"""Run orchestration: cores, per-channel controllers and a latency policy
advanced under one global memory-cycle counter.

The loop only visits cycles in which something can happen. When every core
is stalled, it jumps to the next cycle at which a channel could issue a
command or a read could return; skipped cycles would have been no-ops.
"""
from __future__ import annotations

import gc
import heapq
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .controller import ChannelController, ControllerConfig, MemRequest, RowPolicy, map_address
from .cpu import Core, CoreConfig, CoreMetrics, compute_metrics
from .dram import CommandKind, DramGeometry, TimingClass, TimingParams, effective_timings
from .energy import EnergyReport, PowerParams, account_commands, energy_from_run
from .policy import PolicyConfig, PolicyKind, hit_rate, make_policy

INF = float("inf")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    geometry: DramGeometry = DramGeometry()
    timing: TimingParams = TimingParams()
    controller: ControllerConfig = ControllerConfig()
    core: CoreConfig = CoreConfig()
    policy: PolicyConfig = PolicyConfig()
    power: PowerParams = PowerParams()
    # instructions each core must retire in the measured phase; None = one trace pass
    instruction_budget: Optional[int] = None
    # core cycles simulated before measurement starts
    warmup_cycles: int = 0
    max_mem_cycles: Optional[int] = None


@dataclass
class ChannelStats:
    channel: int
    reads: int = 0
    writes: int = 0
    row_hits: int = 0
    row_misses: int = 0
    row_conflicts: int = 0
    read_latency_sum: int = 0
    # occupancy -> memory cycles spent at that occupancy
    read_queue_hist: dict = field(default_factory=dict)
    write_queue_hist: dict = field(default_factory=dict)

    @property
    def avg_read_latency(self) -> Optional[float]:
        return self.read_latency_sum / self.reads if self.reads else None


@dataclass
class SimResult:
    config: SimConfig
    cores: list                   # CoreMetrics
    mem_cycles: int               # measured-phase length
    start_cycle: int              # first measured memory cycle
    end_cycle: int
    commands: list                # full schedule, time-ordered
    acts: dict                    # core -> [standard, reduced] in measured phase
    channels: list                # ChannelStats
    policy_stats: dict
    max_outstanding: list
    energy: Optional[EnergyReport] = None

    @property
    def acts_standard(self) -> int:
        return sum(v[0] for v in self.acts.values())

    @property
    def acts_reduced(self) -> int:
        return sum(v[1] for v in self.acts.values())

    @property
    def hit_rate(self) -> Optional[float]:
        return hit_rate(self.acts_reduced, self.acts_standard + self.acts_reduced)

    def core_hit_rate(self, core_id: int) -> Optional[float]:
        s, r = self.acts.get(core_id, (0, 0))
        return hit_rate(r, s + r)

    @property
    def total_core_cycles(self) -> int:
        return max(c.cycles for c in self.cores)

    def metrics(self, alone_ipcs: Optional[Sequence[float]] = None):
        return compute_metrics(self.cores, alone_ipcs)


class MemorySystem:
    def __init__(self, traces: Sequence[Sequence], config: SimConfig):
        self.config = config
        g = config.geometry
        self.policy = make_policy(config.policy, config.timing.clock_period_ns)
        deltas = config.policy.deltas
        self.reduced = effective_timings(config.timing, deltas, TimingClass.REDUCED)
        self.controllers = [ChannelController(ch, g, config.timing, deltas, config.controller,
                                              self.policy) for ch in range(g.channels)]
        self.stats = [ChannelStats(ch) for ch in range(g.channels)]
        self.now = 0
        self.measuring = config.warmup_cycles == 0
        self._coord_cache: dict = {}
        self.cores = [Core(i, tr, config.core, self._send, self._make_request,
                           config.instruction_budget) for i, tr in enumerate(traces)]
        self._waiting: dict = {ch: set() for ch in range(g.channels)}
        for c in self.cores:
            c.counting = self.measuring

    def _make_request(self, core_id: int, rec) -> MemRequest:
        coord = self._coord_cache.get(rec.address)
        if coord is None:
            coord = self._coord_cache[rec.address] = map_address(rec.address, self.config.geometry)
        return MemRequest(core_id, rec.is_read, rec.address, coord)

    def _send(self, req: MemRequest) -> bool:
        ch = req.coord.channel
        if self.controllers[ch].enqueue(req, self.now):
            if self.measuring:
                st = self.stats[ch]
                if req.is_read:
                    st.reads += 1
                else:
                    st.writes += 1
                if req.outcome == "hit":
                    st.row_hits += 1
                elif req.outcome == "miss":
                    st.row_misses += 1
                else:
                    st.row_conflicts += 1
            return True
        self._waiting[ch].add(req.core_id)
        return False

    def run(self) -> SimResult:
        cfg = self.config
        ratio = cfg.core.clock_ratio
        cores = self.cores
        ctrls = self.controllers
        policy = self.policy
        sweep = policy.sweep_interval
        next_sweep = sweep if sweep else INF
        warm_mem = -(-cfg.warmup_cycles // ratio)
        limit = cfg.max_mem_cycles if cfg.max_mem_cycles is not None else INF
        now = 0
        start = 0 if self.measuring else warm_mem

        stats = self.stats
        waiting_sets = [self._waiting[ch] for ch in range(len(ctrls))]
        heaps = [ctrl._inflight for ctrl in ctrls]
        unfinished = len(cores)
        drain = not cfg.core.replay
        while True:
            self.now = now
            if not self.measuring and now >= warm_mem:
                self.measuring = True
                for c in cores:
                    c.retired_base = c.retired
                    c.counting = True
                    c.rebase = now * ratio
            while next_sweep <= now:
                policy.expire(next_sweep)
                next_sweep += sweep

            for ch, heap in enumerate(heaps):
                if heap and heap[0][0] <= now:
                    for req in ctrls[ch].deliver(now):
                        cores[req.core_id].on_response(req)
                        if self.measuring and req.arrive_time >= start:
                            stats[ch].read_latency_sum += req.complete_time - req.arrive_time

            # responses were delivered above; nothing unblocks a core until
            # the controllers run, so the active set only shrinks here
            active = [c for c in cores if not c.blocked]
            base_cc = now * ratio
            for k in range(ratio):
                if not active:
                    break
                cc = base_cc + k
                still = []
                for core in active:
                    if core.tick(cc):
                        still.append(core)
                    else:
                        core.blocked = True
                active = still
            any_active = bool(active)

            for ch, ctrl in enumerate(ctrls):
                # next_wake stays valid until this channel issues or receives a request
                if ctrl.next_wake > now:
                    continue
                cmd = ctrl.tick(now)
                if cmd is not None and (cmd.kind is CommandKind.RD or cmd.kind is CommandKind.WR):
                    waiting = waiting_sets[ch]
                    if waiting:
                        for cid in waiting:
                            cores[cid].blocked = False
                        waiting.clear()
                        any_active = True

            if self.measuring:
                while unfinished and cores[unfinished - 1].finish_cycle is not None:
                    unfinished -= 1
                # single-pass runs also wait for every queued request to be served
                if unfinished == 0 and (drain is False or all(c.idle() for c in ctrls)):
                    end = now + 1
                    self._account_occupancy(now, end)
                    break

            if any_active:
                nxt = now + 1
            else:
                nxt = INF
                for ctrl in ctrls:
                    nxt = min(nxt, ctrl.next_wake, ctrl.next_completion())
                if nxt is INF:
                    raise SimulationError(f"deadlock at memory cycle {now}")
                nxt = max(nxt, now + 1)
            if not self.measuring:
                nxt = min(nxt, warm_mem)
            if self.measuring:
                span = nxt - now
                for ctrl, st in zip(ctrls, stats):
                    r, w = ctrl.counts
                    h = st.read_queue_hist
                    h[r] = h.get(r, 0) + span
                    h = st.write_queue_hist
                    h[w] = h.get(w, 0) + span
            if nxt > limit:
                raise SimulationError(f"cycle limit {limit} reached before all cores finished")
            now = nxt

        return self._result(start, end)

    def _account_occupancy(self, now, nxt):
        span = nxt - now
        for ctrl, st in zip(self.controllers, self.stats):
            r, w = ctrl.occupancy()
            st.read_queue_hist[r] = st.read_queue_hist.get(r, 0) + span
            st.write_queue_hist[w] = st.write_queue_hist.get(w, 0) + span

    def _result(self, start: int, end: int) -> SimResult:
        cfg = self.config
        ratio = cfg.core.clock_ratio
        start_cc = start * ratio
        metrics = []
        for c in self.cores:
            cycles = c.finish_cycle - start_cc
            metrics.append(CoreMetrics(c.core_id, c.finish_retired, cycles,
                                       c.finish_retired / cycles if cycles > 0 else 0.0))
        commands = list(heapq.merge(*(ctrl.log for ctrl in self.controllers),
                                    key=lambda cmd: cmd.issue_time))
        acts = {c.core_id: [0, 0] for c in self.cores}
        for cmd in commands:
            if cmd.kind is CommandKind.ACT and cmd.issue_time >= start:
                acts[cmd.core][cmd.timing_class is TimingClass.REDUCED] += 1
        g = cfg.geometry
        ranks = [(ch, r) for ch in range(g.channels) for r in range(g.ranks_per_channel)]
        counts, durations = account_commands(commands, start, end, ranks)
        hcrac = cfg.policy.kind in (PolicyKind.CHARGECACHE, PolicyKind.CHARGECACHE_NUAT)
        energy = energy_from_run(counts, durations, cfg.power, end - start, cfg.timing,
                                 self.reduced, ranks=len(ranks), hcrac=hcrac)
        return SimResult(cfg, metrics, end - start, start, end, commands, acts, self.stats,
                         self.policy.stats(), [c.max_outstanding for c in self.cores], energy)


@contextmanager
def gc_paused():
    """Suspend cyclic garbage collection: a run allocates millions of
    short-lived acyclic objects and collector passes over the growing command
    log are pure overhead."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def simulate(traces: Sequence[Sequence], config: SimConfig = SimConfig()) -> SimResult:
    """Run the traces (one per core) to completion and collect results."""
    with gc_paused():
        return MemorySystem(traces, config).run()


def alone_ipcs(traces: Sequence[Sequence], config: SimConfig) -> list:
    """IPC of each trace run by itself under the baseline policy."""
    import dataclasses
    solo_cfg = dataclasses.replace(config, policy=dataclasses.replace(config.policy,
                                                                      kind=PolicyKind.BASELINE))
    return [simulate([tr], solo_cfg).cores[0].ipc for tr in traces]


def table1_config(cores: int = 1, **overrides) -> SimConfig:
    """Defaults of the simulated system: one channel and open-row policy for a
    single core, two channels and closed-row policy for multi-core runs."""
    geometry = DramGeometry(channels=1 if cores == 1 else 2)
    ctrl = ControllerConfig(row_policy=RowPolicy.OPEN if cores == 1 else RowPolicy.CLOSED)
    kw = dict(geometry=geometry, controller=ctrl)
    kw.update(overrides)
    return SimConfig(**kw)
