import dataclasses
import math

import pytest
from hypothesis import given, settings, strategies as st

from chargecache.controller import MemRequest, encode_coord
from chargecache.cpu import Core, CoreConfig, CoreMetrics, compute_metrics, speedup
from chargecache.dram import ConfigError, DramCoord, DramGeometry, TimingParams
from chargecache.sim import SimConfig, simulate, table1_config
from chargecache.traces import TraceRecord

G = DramGeometry()
T = TimingParams()


def addr(row, bank=0, col=0):
    return encode_coord(DramCoord(0, 0, bank, row, col), G)


class Sink:
    """Request sink; with `instant`, reads complete as soon as they are sent."""

    def __init__(self, instant=False, capacity=10**9):
        self.instant = instant
        self.capacity = capacity
        self.sent = []
        self.core = None

    def send(self, req):
        if len(self.sent) >= self.capacity:
            return False
        self.sent.append(req)
        if self.instant and req.is_read:
            self.core.on_response(req)
        return True


def make_core(trace, sink, budget=None, **cfg):
    core = Core(0, trace, CoreConfig(**cfg), sink.send,
                lambda cid, rec: MemRequest(cid, rec.is_read, rec.address, None), budget)
    sink.core = core
    return core


def run_core(core, limit=10**6):
    t = 0
    while core.finish_cycle is None:
        core.tick(t)
        t += 1
        assert t < limit
    return core.finish_cycle


# -- closed forms -------------------------------------------------------------------

def test_pure_compute_retires_at_issue_width():
    core = make_core([TraceRecord(1000, 0, "R")], Sink(), budget=300)
    assert run_core(core) == 100
    assert core.finish_retired == 300


def test_pure_compute_through_full_simulator():
    r = simulate([[TraceRecord(1000, 0, "R")]], SimConfig(instruction_budget=300))
    assert r.cores[0].cycles == 100
    assert r.cores[0].ipc == 3.0


def test_single_read_latency_matches_hand_schedule():
    # core sends at memory cycle 0; ACT @0, RD @tRCD, data back tCL+tBL later;
    # the core retires the load on the memory cycle the data arrives
    r = simulate([[TraceRecord(0, addr(7), "R")]], SimConfig(instruction_budget=1))
    mem_latency = T.tRCD + T.tCL + T.tBL
    assert r.cores[0].cycles == mem_latency * CoreConfig().clock_ratio == 130
    first = r.commands[:2]
    assert [(c.kind.value, c.issue_time) for c in first] == [("ACT", 0), ("RD", T.tRCD)]


def test_mshr_cap_with_sixteen_deep_burst():
    trace = [TraceRecord(0, addr(i, bank=i % 8), "R") for i in range(16)]
    r = simulate([trace], table1_config(1, instruction_budget=16))
    assert r.max_outstanding == [8]


def test_ninth_read_waits_for_a_free_mshr():
    sink = Sink()
    core = make_core([TraceRecord(0, addr(i), "R") for i in range(9)], sink)
    for t in range(50):
        core.tick(t)
    assert len(sink.sent) == 8 and core.outstanding == 8
    core.on_response(sink.sent[0])
    core.tick(50)
    assert len(sink.sent) == 9


def test_window_limit():
    sink = Sink()
    core = make_core([TraceRecord(0, addr(i), "R") for i in range(200)], sink, mshrs=1000)
    for t in range(400):
        core.tick(t)
    assert core.occupancy == 128 and len(sink.sent) == 128


def test_writes_are_posted():
    sink = Sink()
    core = make_core([TraceRecord(0, addr(i), "W") for i in range(30)], sink, budget=30)
    assert run_core(core) == 30          # one memory op per cycle, no stalls
    assert core.occupancy == 0 and core.outstanding == 0


def test_back_pressure_stalls_refill():
    sink = Sink(capacity=2)
    core = make_core([TraceRecord(0, addr(i), "W") for i in range(5)], sink)
    for t in range(20):
        core.tick(t)
    assert len(sink.sent) == 2 and core.finish_cycle is None


@given(st.integers(0, 12), st.integers(1, 4), st.booleans())
@settings(max_examples=40)
def test_zero_latency_memory_gives_intrinsic_ipc(k, width, reads):
    # each record: k non-memory ops, then one memory op which ends the cycle's fetch
    n = 60
    kind = "R" if reads else "W"
    core = make_core([TraceRecord(k, addr(i), kind) for i in range(n)], Sink(instant=True),
                     issue_width=width)
    cycles = run_core(core)
    per_record = math.ceil((k + 1) / width)
    assert cycles == n * per_record
    assert core.finish_retired / cycles == pytest.approx(min(width, (k + 1) / per_record))
    assert core.finish_retired / cycles <= min(width, k + 1)


def test_core_config_validation():
    with pytest.raises(ConfigError):
        CoreConfig(mshrs=0)
    with pytest.raises(ConfigError):
        Core(0, [], CoreConfig(), None, None)


# -- metrics --------------------------------------------------------------------------

def test_ipc_two():
    m = compute_metrics([CoreMetrics(0, 10**6, 5 * 10**5, 10**6 / (5 * 10**5))])
    assert m.ipcs == [2.0] and m.weighted_speedup is None


def test_no_interference_weighted_speedup_is_core_count():
    cores = [CoreMetrics(i, 1000, 500 + i, 1000 / (500 + i)) for i in range(8)]
    m = compute_metrics(cores, [c.ipc for c in cores])
    assert m.weighted_speedup == pytest.approx(8.0)
    assert speedup(m.weighted_speedup, 4.0) == pytest.approx(2.0)


def test_weighted_speedup_needs_matching_alone_runs():
    with pytest.raises(ValueError):
        compute_metrics([CoreMetrics(0, 1, 1, 1.0)], [1.0, 2.0])


# -- simulator-level behaviour ------------------------------------------------------------

def test_determinism():
    trace = [TraceRecord(3, addr(i % 9, bank=i % 3), "R" if i % 4 else "W") for i in range(300)]
    a = simulate([trace, trace[::-1]], table1_config(2))
    b = simulate([trace, trace[::-1]], table1_config(2))
    assert a.commands == b.commands
    assert [c.cycles for c in a.cores] == [c.cycles for c in b.cores]


def test_warmup_is_excluded_from_metrics():
    trace = [TraceRecord(1000, 0, "R")]
    r = simulate([trace], SimConfig(instruction_budget=300, warmup_cycles=500))
    assert r.start_cycle == 100                 # 500 core cycles at 5:1
    assert r.cores[0].cycles == 100 and r.cores[0].instructions == 300


def test_finished_core_keeps_loading_memory():
    short = [TraceRecord(0, addr(1), "R")]
    long = [TraceRecord(0, addr(2, bank=1), "R")] * 40
    r = simulate([short, long], dataclasses.replace(table1_config(1), instruction_budget=None))
    core0_reads = [c for c in r.commands if c.kind.value == "RD" and c.core == 0]
    assert len(core0_reads) > 1


def test_single_pass_mode_stops_at_trace_end_and_drains():
    trace = [TraceRecord(2, addr(i, bank=i % 8), "W" if i % 2 else "R") for i in range(100)]
    cfg = dataclasses.replace(SimConfig(), core=CoreConfig(replay=False))
    r = simulate([trace], cfg)
    assert sum(c.kind.value == "RD" for c in r.commands) == 50
    assert sum(c.kind.value == "WR" for c in r.commands) == 50


def test_single_pass_budget_cannot_exceed_trace():
    cfg = dataclasses.replace(SimConfig(instruction_budget=1000), core=CoreConfig(replay=False))
    with pytest.raises(ConfigError):
        simulate([[TraceRecord(0, 0, "R")]], cfg)
