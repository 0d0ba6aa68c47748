import pytest
from hypothesis import given, strategies as st

from chargecache.dram import (CommandKind, ConfigError, DramCommand, DramCoord, TimingClass,
                              TimingParams, effective_timings)
from chargecache.energy import (HCRAC_POWER_MW, AccountingError, CommandCounts, EnergyReport,
                                PowerParams, StateDurations, account_commands,
                                activation_energy, energy_from_run, percent_vs_baseline)

P = PowerParams()
BASE = TimingParams()
RED = effective_timings(BASE, (4, 8), TimingClass.REDUCED)
A, PR, RD, WR, REF = (CommandKind.ACT, CommandKind.PRE, CommandKind.RD, CommandKind.WR,
                      CommandKind.REF)


def run(counts, active, standby, wall, hcrac=False):
    return energy_from_run(counts, StateDurations(active, standby), P, wall, BASE, RED,
                           hcrac=hcrac)


def test_background_only():
    T = 10_000
    rep = run(CommandCounts(), 0, T, T)
    assert rep.total == pytest.approx(P.VDD * P.IDD2N * 1e-3 * T * P.clock_period_ns * 1e-9)
    assert rep.total == rep.background_energy


def test_component_formulas():
    scale = P.VDD * 1e-3 * P.clock_period_ns * 1e-9
    rep = run(CommandCounts(acts_standard=1, reads=2, writes=3, refreshes=1), 0, 100, 100)
    assert rep.read_energy == pytest.approx(2 * (P.IDD4R - P.IDD3N) * BASE.tBL * scale)
    assert rep.write_energy == pytest.approx(3 * (P.IDD4W - P.IDD3N) * BASE.tBL * scale)
    assert rep.refresh_energy == pytest.approx((P.IDD5 - P.IDD2N) * BASE.tRFC * scale)
    tRC = BASE.tRAS + BASE.tRP
    expected_act = (P.IDD0 * tRC - P.IDD3N * BASE.tRAS - P.IDD2N * BASE.tRP) * scale
    assert rep.act_pre_energy == pytest.approx(expected_act)


def test_reduced_activation_costs_less():
    assert RED.tRAS < BASE.tRAS
    std = activation_energy(P, BASE.tRAS, BASE.tRP)
    red = activation_energy(P, RED.tRAS, RED.tRP)
    assert 0 < red < std


def test_hcrac_energy_is_constant_power_times_wall_time():
    rep = run(CommandCounts(), 0, 800, 800, hcrac=True)
    assert rep.hcrac_energy == pytest.approx(HCRAC_POWER_MW * 1e-3 * 800 * 1.25e-9)
    assert run(CommandCounts(), 0, 800, 800).hcrac_energy == 0


def test_durations_must_partition_run():
    with pytest.raises(AccountingError):
        run(CommandCounts(), 10, 10, 30)
    with pytest.raises(AccountingError):
        run(CommandCounts(), -1, 31, 30)


def test_power_params_validation():
    with pytest.raises(ConfigError):
        PowerParams(IDD0=0)
    with pytest.raises(ConfigError):
        PowerParams(IDD3N=30.0, IDD2N=32.0)


@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000),
       st.integers(0, 20), st.integers(0, 10**6), st.integers(0, 10**6), st.booleans())
def test_non_negative_and_additive(s, r, rd, wr, ref, active, standby, hcrac):
    rep = run(CommandCounts(s, r, rd, wr, ref), active, standby, active + standby, hcrac)
    parts = rep.as_row()
    total = parts.pop("total")
    assert all(v >= 0 for v in parts.values())
    assert total == pytest.approx(sum(parts.values()))


@given(st.integers(1, 10**5), st.integers(1, 10**5))
def test_shorter_wall_time_means_less_energy(wall, extra):
    counts = CommandCounts(acts_standard=10, reads=10)
    short = run(counts, wall // 2, wall - wall // 2, wall)
    long = run(counts, wall // 2, wall - wall // 2 + extra, wall + extra)
    assert short.background_energy < long.background_energy
    assert short.total < long.total


def test_percent_vs_baseline():
    a, b = EnergyReport(background_energy=0.9), EnergyReport(background_energy=1.0)
    assert percent_vs_baseline(a, b) == pytest.approx(10.0)
    assert percent_vs_baseline(a, None) is None


def cmd(kind, t, bank=0, tclass=TimingClass.STANDARD):
    if kind is REF:
        return DramCommand(REF, DramCoord(0, 0), t)
    return DramCommand(kind, DramCoord(0, 0, bank, 5), t, tclass)


def test_account_commands_residency_and_counts():
    cmds = [cmd(A, 0), cmd(A, 5, bank=1, tclass=TimingClass.REDUCED), cmd(RD, 20),
            cmd(PR, 40), cmd(WR, 45, bank=1), cmd(PR, 70, bank=1), cmd(REF, 90),
            cmd(A, 400)]
    counts, dur = account_commands(cmds, 10, 100, [(0, 0), (1, 0)])
    assert counts == CommandCounts(acts_standard=0, acts_reduced=0, reads=1, writes=1,
                                   refreshes=1)
    # rank (0,0) open from 0 to 70, clipped to the window start at 10
    assert dur == StateDurations(active=60, standby=2 * 90 - 60)


def test_account_commands_row_open_at_window_end():
    counts, dur = account_commands([cmd(A, 50)], 0, 100, [(0, 0)])
    assert counts.acts_standard == 1
    assert dur == StateDurations(50, 50)
