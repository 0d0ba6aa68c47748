from collections import OrderedDict

import pytest
from hypothesis import given, settings, strategies as st

from chargecache.dram import CommandKind, ConfigError, DramCommand, DramCoord, TimingClass
from chargecache.policy import (ChargeCacheNuatPolicy, ChargeCachePolicy, HcracTable,
                                LatencyPolicy, LowLatencyPolicy, NuatPolicy, PolicyConfig,
                                PolicyKind, classify_schedule, hit_rate, make_policy,
                                ms_to_cycles)

S, R = TimingClass.STANDARD, TimingClass.REDUCED
DUR = 800_000


def coord(row, bank=0, channel=0):
    return DramCoord(channel, 0, bank, row)


# -- HCRAC table --------------------------------------------------------------------

def test_insert_into_empty_set():
    t = HcracTable(128, 2, DUR)
    t.insert((0, 0, 5), 10)
    assert t.set_contents(t.set_index((0, 0, 5))) == [(0, 0, 5)]


def test_third_row_in_set_evicts_lru():
    t = HcracTable(128, 2, DUR)
    assert t.n_sets == 64
    tags = [(0, 0, r) for r in (5, 69, 133)]
    assert len({t.set_index(tag) for tag in tags}) == 1   # 64 rows apart
    for i, tag in enumerate(tags):
        t.insert(tag, i)
    assert t.set_contents(t.set_index(tags[0])) == [(0, 0, 69), (0, 0, 133)]
    assert t.evictions == 1


def test_hit_promotes_entry_to_mru():
    t = HcracTable(128, 2, DUR)
    t.insert((0, 0, 5), 0)
    t.insert((0, 0, 69), 1)
    assert t.lookup((0, 0, 5), 2)
    t.insert((0, 0, 133), 3)
    assert t.set_contents(t.set_index((0, 0, 5))) == [(0, 0, 5), (0, 0, 133)]


def test_reinsert_refreshes_timestamp():
    t = HcracTable(128, 2, DUR)
    t.insert((0, 0, 5), 0)
    t.insert((0, 0, 5), 500_000)
    assert t.valid_tags() == [(0, 0, 5)]
    assert t.lookup((0, 0, 5), 1_200_000)     # 700000 after the second insert


def test_set_index_folds_bank():
    t = HcracTable(128, 2, DUR)
    assert t.set_index((0, 1, 5)) == (5 ^ 1) % 64
    assert t.set_index((0, 1, 5)) != t.set_index((0, 0, 5))


def test_expired_entry_is_preferred_victim():
    t = HcracTable(4, 2, 100)
    t.insert((0, 0, 0), 0)      # will be expired
    t.insert((0, 0, 2), 150)    # fresh, more recent
    t.insert((0, 0, 4), 160)
    assert t.set_contents(0) == [(0, 0, 2), (0, 0, 4)]
    assert t.evictions == 0


def test_zero_entries_never_hit():
    t = HcracTable(0, 2, DUR)
    t.insert((0, 0, 5), 0)
    assert not t.lookup((0, 0, 5), 1)


def test_unbounded_table():
    t = HcracTable(None, 2, None)
    for r in range(1000):
        t.insert((0, 0, r), r)
    assert all(t.lookup((0, 0, r), 10**9) for r in range(1000))


# -- expiry ---------------------------------------------------------------------------

def test_expire_counts_only_old_entries():
    t = HcracTable(128, 2, DUR)
    t.insert((0, 0, 1), 0)            # 1.5 ms old at now
    t.insert((0, 0, 2), 800_000)      # 0.5 ms old at now
    assert t.expire(1_200_000) == 1
    assert t.valid_tags() == [(0, 0, 2)]


def test_expire_empty_table():
    assert HcracTable(128, 2, DUR).expire(10**9) == 0


def test_expire_boundary_is_inclusive():
    t = HcracTable(128, 2, DUR)
    t.insert((0, 0, 1), 0)
    t.insert((0, 0, 2), 0)
    assert t.expire(DUR) == 0
    assert t.expire(DUR + 1) == 2


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 7), st.integers(0, 300)), max_size=60),
       st.integers(1, 200))
@settings(max_examples=60)
def test_sweep_matches_lazy_expiry(ops, duration):
    """Periodic invalidation never changes hit/miss outcomes."""
    swept, lazy = HcracTable(8, 2, duration), HcracTable(8, 2, duration)
    now = 0
    for is_insert, row, gap in ops:
        now += gap
        swept.expire(now)
        tag = (0, 0, row)
        if is_insert:
            swept.insert(tag, now)
            lazy.insert(tag, now)
        else:
            assert swept.lookup(tag, now) == lazy.lookup(tag, now)


# -- LRU reference model ------------------------------------------------------------

@given(st.lists(st.tuples(st.booleans(), st.integers(0, 15)), max_size=80),
       st.sampled_from([1, 2, 4]))
@settings(max_examples=100)
def test_lru_matches_reference(ops, ways):
    sets = 2
    t = HcracTable(sets * ways, ways, None)
    ref = [OrderedDict() for _ in range(sets)]
    for now, (is_insert, row) in enumerate(ops):
        tag = (0, 0, row)
        s = ref[row % sets]
        if is_insert:
            if tag in s:
                s.move_to_end(tag)
            else:
                if len(s) == ways:
                    s.popitem(last=False)
                s[tag] = now
        else:
            hit = tag in s
            if hit:
                s.move_to_end(tag)
            assert t.lookup(tag, now) == hit
            continue
        t.insert(tag, now)
    for i in range(sets):
        assert t.set_contents(i) == list(ref[i])


# -- policies -------------------------------------------------------------------------

def test_chargecache_hit_within_duration():
    p = ChargeCachePolicy(128, 2, DUR)
    p.on_precharge(0, coord(5), 100)
    assert p.on_activate(0, coord(5), 200) is R


def test_chargecache_expired_entry_is_standard_and_invalidated():
    p = ChargeCachePolicy(128, 2, DUR)
    p.on_precharge(0, coord(5), 100)
    assert p.on_activate(0, coord(5), 900_200) is S
    t = p.table(0, 0)
    assert t.valid_tags() == [] and t.expired_on_lookup == 1


def test_chargecache_tables_are_per_core_and_channel():
    p = ChargeCachePolicy(128, 2, DUR)
    p.on_precharge(0, coord(5), 100)
    assert p.on_activate(1, coord(5), 200) is S
    assert p.on_activate(0, coord(5, channel=1), 200) is S
    shared = ChargeCachePolicy(128, 2, DUR, shared=True)
    shared.on_precharge(0, coord(5), 100)
    assert shared.on_activate(1, coord(5), 200) is R


def test_zero_duration_never_reduces():
    p = ChargeCachePolicy(128, 2, 0)
    p.on_precharge(0, coord(5), 100)
    assert p.on_activate(0, coord(5), 101) is S
    assert p.sweep_interval is None


def test_sweep_interval_is_eighth_of_duration():
    assert ChargeCachePolicy(128, 2, DUR).sweep_interval == DUR // 8


def test_baseline_and_lldram():
    for t in (0, 10**9):
        assert LatencyPolicy().on_activate(0, coord(1), t) is S
        assert LowLatencyPolicy().on_activate(0, coord(1), t) is R


def test_nuat_window():
    p = NuatPolicy(window=1000)
    p.on_refresh(0, 0, [3, 4], 50)
    assert p.on_activate(0, coord(3), 1050) is R
    assert p.on_activate(0, coord(3), 1051) is S
    assert p.on_activate(0, coord(5), 60) is S


def test_combined_policy_is_union():
    p = ChargeCacheNuatPolicy(ChargeCachePolicy(128, 2, DUR), NuatPolicy(1000))
    p.on_refresh(0, 0, [3], 0)
    p.on_precharge(0, coord(7), 0)
    assert p.on_activate(0, coord(3), 10) is R
    assert p.on_activate(0, coord(7), 10) is R
    assert p.on_activate(0, coord(9), 10) is S


def test_make_policy_kinds():
    for kind, cls in [("baseline", LatencyPolicy), ("lldram", LowLatencyPolicy),
                      ("chargecache", ChargeCachePolicy), ("nuat", NuatPolicy),
                      ("chargecache+nuat", ChargeCacheNuatPolicy)]:
        p = make_policy(PolicyConfig(kind=kind), 1.25)
        assert type(p) is cls
        assert p.kind is PolicyKind(kind)
    cc = make_policy(PolicyConfig(kind="chargecache"), 1.25)
    assert cc.caching_duration == DUR


def test_policy_config_validation():
    with pytest.raises(ConfigError):
        PolicyConfig(entries_per_core=127)
    with pytest.raises(ConfigError):
        PolicyConfig(entries_per_core=96)       # 48 sets is not a power of two
    with pytest.raises(ValueError):
        PolicyConfig(kind="nonsense")
    assert ms_to_cycles(1.0, 1.25) == 800_000


# -- hit rate -------------------------------------------------------------------------

def test_hit_rate_examples():
    assert hit_rate(67, 100) == pytest.approx(0.67)
    assert hit_rate(0, 0) is None
    assert hit_rate(0, 40) == 0.0


def test_classify_schedule_follows_fixed_commands():
    A, P = CommandKind.ACT, CommandKind.PRE
    cmds = [DramCommand(A, coord(5), 0), DramCommand(P, coord(5), 28),
            DramCommand(A, coord(5), 100), DramCommand(P, coord(5), 128),
            DramCommand(A, coord(5), 128 + DUR + 1)]
    assert classify_schedule(cmds, ChargeCachePolicy(128, 2, DUR)) == [S, R, S]
    assert classify_schedule(cmds, ChargeCachePolicy(None, 2, None)) == [S, R, R]
