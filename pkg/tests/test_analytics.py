import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chargecache.analytics import (ChargeModel, OverheadInput, cell_voltage, default_model,
                                   overhead_report, reduction_margin_issues, sensing_time,
                                   storage_overhead, timing_reduction)
from chargecache.dram import ConfigError

M = default_model()


def closed_form_constants(model=ChargeModel()):
    """Solve the two anchor equations by hand (t_offset = 0)."""
    target = (model.v_ready_frac - 0.5) * model.vdd
    full_dev = model.charge_sharing * model.vdd / 2
    tau_sense = 10.0 / math.log(target / full_dev)
    v64 = model.vdd / 2 + target / model.charge_sharing * math.exp(-14.5 / tau_sense)
    tau_leak = -model.retention_ms / math.log(v64 / model.vdd)
    return tau_sense, v64, tau_leak


# -- calibration ---------------------------------------------------------------------

def test_calibration_matches_closed_form():
    tau_sense, v64, tau_leak = closed_form_constants()
    assert M.tau_sense_ns == pytest.approx(tau_sense, rel=1e-5)
    assert M.tau_leak_ms == pytest.approx(tau_leak, rel=1e-5)
    assert cell_voltage(64.0, M) == pytest.approx(v64, rel=1e-5)


def test_anchors():
    assert sensing_time(M.vdd, M) == pytest.approx(10.0, rel=0.01)
    assert sensing_time(cell_voltage(64.0, M), M) == pytest.approx(14.5, rel=0.01)


def test_calibration_is_deterministic():
    assert ChargeModel().calibrate() == ChargeModel().calibrate() == M


def test_full_charge_voltage():
    assert cell_voltage(0, M) == 1.5


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        cell_voltage(-1, M)


def test_sensing_diverges_near_half_vdd():
    times = [sensing_time(0.75 + eps, M) for eps in (1e-1, 1e-3, 1e-6, 1e-9)]
    assert times == sorted(times) and times[-1] > 100
    assert sensing_time(0.75, M) == math.inf


def test_uncalibrated_model_rejected():
    with pytest.raises(ConfigError):
        sensing_time(1.5, ChargeModel())
    with pytest.raises(ConfigError):
        ChargeModel(v_ready_frac=0.97)


# -- timing reduction -----------------------------------------------------------------

def test_reduction_endpoints():
    d_rcd, d_ras = timing_reduction(0)
    assert d_rcd == pytest.approx(4.5, rel=0.01) and d_ras == pytest.approx(9.6, rel=0.01)
    assert timing_reduction(64.0) == pytest.approx((0.0, 0.0), abs=1e-6)


def test_one_millisecond_is_interior():
    d_rcd, d_ras = timing_reduction(1.0)
    assert 0 < d_rcd < 4.5 and 0 < d_ras < 9.6


def test_monotone_curves_on_dense_grid():
    ts = np.linspace(0, 64, 10_000)
    v = np.array([cell_voltage(t, M) for t in ts])
    assert np.all(np.diff(v) < 0)
    vs = np.linspace(0.7501, 1.5, 10_000)
    s = np.array([sensing_time(x, M) for x in vs])
    assert np.all(np.diff(s) < 0)
    comp = np.array([sensing_time(cell_voltage(t, M), M) for t in ts])
    assert np.all(np.diff(comp) > 0)
    red = np.array([timing_reduction(t)[0] for t in ts])
    assert np.all(np.diff(red) <= 1e-12)


@given(st.floats(0, 200), st.floats(0, 200))
def test_reduction_monotone_property(a, b):
    lo, hi = sorted((a, b))
    r_lo, r_hi = timing_reduction(lo), timing_reduction(hi)
    assert r_lo[0] >= r_hi[0] - 1e-12 and r_lo[1] >= r_hi[1] - 1e-12
    assert 0 <= r_hi[0] <= 4.5 and 0 <= r_hi[1] <= 9.6


def test_default_deltas_exceed_analytic_margin():
    # 4 cycles x 1.25 ns = 5 ns > the 4.5 ns the model allows even at full charge
    issues = reduction_margin_issues(4, 8, 1.25, 1.0)
    assert any("tRCD" in i for i in issues)
    assert reduction_margin_issues(0, 0, 1.25, 1.0) == []
    assert reduction_margin_issues(1, 1, 1.25, 1.0) == []


# -- storage overhead -------------------------------------------------------------------

def test_eight_core_overhead():
    out = storage_overhead(OverheadInput())
    assert out["entry_size_bits"] == 20
    assert out["total_bits"] == 43008
    assert out["total_bytes"] == 5376
    assert out["bytes_per_core"] == 672


def test_single_core_overhead():
    assert storage_overhead(OverheadInput(cores=1))["total_bytes"] == 672


def test_zero_entries():
    assert storage_overhead(OverheadInput(entries=0))["total_bytes"] == 0


def test_non_power_of_two_geometry_rejected():
    with pytest.raises(ConfigError):
        storage_overhead(OverheadInput(banks=6))


@given(st.integers(0, 64), st.integers(0, 8), st.integers(0, 2048), st.integers(0, 4))
def test_overhead_is_linear(c, mc, e, lru):
    bits = storage_overhead(OverheadInput(cores=c, channels=mc, entries=e,
                                          lru_bits_per_entry=lru))["total_bits"]
    unit = storage_overhead(OverheadInput(cores=1, channels=1, entries=1,
                                          lru_bits_per_entry=lru))["total_bits"]
    assert bits == c * mc * e * unit == c * mc * e * (20 + lru)


def test_overhead_report_labels_constants():
    rep = overhead_report(OverheadInput())
    assert rep["inputs"]["cores"] == 8
    assert rep["reported_constants"]["area_mm2"]["value"] == 0.022
    assert rep["reported_constants"]["power_mw"]["value"] == 0.149
