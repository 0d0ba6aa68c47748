"""Trace-driven cores with an instruction window, issue width and MSHR limit."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .controller import MemRequest
from .dram import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoreConfig:
    issue_width: int = 3
    window_entries: int = 128
    mshrs: int = 8
    # core cycles per memory cycle (4 GHz core, 800 MHz bus)
    clock_ratio: int = 5
    # wrap around to the start of the trace once it is exhausted
    replay: bool = True

    def __post_init__(self):
        for name in ("issue_width", "window_entries", "mshrs", "clock_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


class Core:
    """One trace-driven core.

    The window holds run-length groups of non-memory instructions (plain ints,
    complete on insertion) and read requests (complete when their data
    returns). Writes are posted and never enter the window.

    `send(request)` hands a request to the memory system and returns False when
    the target queue is full.
    """

    def __init__(self, core_id: int, trace: Sequence, config: CoreConfig,
                 send: Callable[[MemRequest], bool], make_request: Callable,
                 budget: Optional[int] = None):
        if not trace:
            raise ConfigError(f"core {core_id}: empty trace")
        self.core_id = core_id
        self.trace = trace
        self.config = config
        self.send = send
        self.make_request = make_request
        one_pass = sum(r.nonmem_count + 1 for r in trace)
        self.budget = budget if budget is not None else one_pass
        if not config.replay and self.budget > one_pass:
            raise ConfigError(f"core {core_id}: budget {self.budget} exceeds the trace "
                              f"({one_pass} instructions) and replay is off")
        self.cursor = 0
        self.bubbles = trace[0].nonmem_count
        self.window: deque = deque()
        self.occupancy = 0
        self.outstanding = 0
        self.retired = 0
        self.retired_base = 0
        self.posted = 0
        # first measured core cycle, set when a warm-up ends
        self.rebase: Optional[int] = None
        self.finish_cycle: Optional[int] = None
        self.finish_retired = 0
        self.blocked = False
        self.max_outstanding = 0
        self.passes = 0
        # set when the trace ends and the core is configured not to replay it
        self.exhausted = False
        # cleared during warm-up so the budget only counts measured instructions
        self.counting = True

    @property
    def finished(self) -> bool:
        return self.finish_cycle is not None

    def tick(self, now: int) -> bool:
        """Advance one core cycle; returns False if nothing could move."""
        width = self.config.issue_width
        window = self.window

        # retire; posted writes sent last cycle retire without using width
        if self.posted:
            self.retired += self.posted
            self.posted = 0
        n = width
        while n and window:
            head = window[0]
            if head.__class__ is int:
                k = head if head <= n else n
                if k == head:
                    window.popleft()
                else:
                    window[0] = head - k
                n -= k
                self.occupancy -= k
            elif head.done:
                window.popleft()
                n -= 1
                self.occupancy -= 1
            else:
                break
        progressed = n != width
        self.retired += width - n

        # refill: non-memory work first, then at most one memory operation
        cap = self.config.window_entries
        inserted = 0
        while inserted < width and self.occupancy < cap and not self.exhausted:
            if self.bubbles:
                k = min(width - inserted, cap - self.occupancy, self.bubbles)
                if window and window[-1].__class__ is int:
                    window[-1] += k
                else:
                    window.append(k)
                self.bubbles -= k
                self.occupancy += k
                inserted += k
                continue
            rec = self.trace[self.cursor]
            if rec.is_read:
                if self.outstanding >= self.config.mshrs:
                    break
                req = self.make_request(self.core_id, rec)
                if not self.send(req):
                    break
                window.append(req)
                self.occupancy += 1
                inserted += 1
                self.outstanding += 1
                if self.outstanding > self.max_outstanding:
                    self.max_outstanding = self.outstanding
            else:
                if not self.send(self.make_request(self.core_id, rec)):
                    break
                self.posted += 1
            progressed = True
            self._advance()
            break
        if inserted:
            progressed = True

        if self.counting and self.finish_cycle is None:
            if self.rebase is not None:
                if now == self.rebase:
                    # what retires in the first measured cycle was fetched before it
                    self.retired_base = self.retired
                self.rebase = None
            if self.retired - self.retired_base >= self.budget:
                self.finish_cycle = now
                self.finish_retired = self.retired - self.retired_base
        return progressed

    def _advance(self):
        self.cursor += 1
        if self.cursor == len(self.trace):
            # keep replaying so the core still loads memory after it finishes
            self.cursor = 0
            self.passes += 1
            if not self.config.replay:
                self.exhausted = True
        self.bubbles = self.trace[self.cursor].nonmem_count

    def on_response(self, req: MemRequest) -> None:
        req.done = True
        self.outstanding -= 1
        self.blocked = False


@dataclass
class CoreMetrics:
    core_id: int
    instructions: int
    cycles: int
    ipc: float


@dataclass
class MetricsReport:
    cores: list
    weighted_speedup: Optional[float] = None

    @property
    def ipcs(self) -> list:
        return [c.ipc for c in self.cores]


def compute_metrics(cores: Sequence[CoreMetrics],
                    alone_ipcs: Optional[Sequence[float]] = None) -> MetricsReport:
    """Per-core IPC, plus weighted speedup when stand-alone IPCs are given."""
    report = MetricsReport(list(cores))
    if alone_ipcs is None:
        if len(cores) > 1:
            log.warning("no stand-alone IPCs supplied; weighted speedup omitted")
        return report
    if len(alone_ipcs) != len(cores):
        raise ValueError("need one stand-alone IPC per core")
    report.weighted_speedup = sum(c.ipc / a for c, a in zip(cores, alone_ipcs))
    return report


def speedup(ws_policy: float, ws_baseline: float) -> float:
    return ws_policy / ws_baseline
