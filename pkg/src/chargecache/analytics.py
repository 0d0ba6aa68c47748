"""Analytic bitline sensing model and HCRAC storage overhead.

The sensing model is deliberately small: cell voltage decays exponentially
after the last charge replenish, the bitline deviation after charge sharing is
proportional to the cell's distance from VDD/2, and the sense amplifier grows
that deviation exponentially until it reaches the ready-to-access level. Two
time constants are fitted by bisection so that a fully charged cell senses in
10 ns and a cell left for a full retention period senses in 14.5 ns.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

from scipy.optimize import bisect

from .dram import ConfigError

# Circuit-level anchors for a 55nm DDR3 sense amplifier.
FULL_CHARGE_SENSE_NS = 10.0
WORST_CASE_SENSE_NS = 14.5
FULL_CHARGE_TRAS_REDUCTION_NS = 9.6

# Reported (not modelled) HCRAC cost for the 8-core, 2-channel, 128-entry setup.
HCRAC_AREA_MM2 = 0.022
HCRAC_POWER_MW = 0.149

CALIBRATION_XTOL = 1e-6


@dataclass(frozen=True)
class ChargeModel:
    vdd: float = 1.5
    v_ready_frac: float = 0.75
    retention_ms: float = 64.0
    restore_frac: float = 0.95
    # bitline deviation per volt of cell deviation from VDD/2
    charge_sharing: float = 0.2
    t_offset_ns: float = 0.0
    tau_leak_ms: Optional[float] = None
    tau_sense_ns: Optional[float] = None

    def __post_init__(self):
        if not 0.5 < self.v_ready_frac < self.restore_frac <= 1:
            raise ConfigError("need 0.5 < v_ready_frac < restore_frac <= 1")
        if not 0 < self.charge_sharing < 1:
            raise ConfigError("charge_sharing must be in (0, 1)")
        for name in ("tau_leak_ms", "tau_sense_ns"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def calibrated(self) -> bool:
        return self.tau_leak_ms is not None and self.tau_sense_ns is not None

    def calibrate(self) -> "ChargeModel":
        """Return a copy with both time constants fitted to the sensing anchors."""
        def full_err(tau):
            return sensing_time(self.vdd, dataclasses.replace(self, tau_sense_ns=tau)) \
                - FULL_CHARGE_SENSE_NS
        tau_sense = bisect(full_err, 1e-3, 1e3, xtol=CALIBRATION_XTOL)
        fitted = dataclasses.replace(self, tau_sense_ns=tau_sense)

        def worst_err(log_tau):
            m = dataclasses.replace(fitted, tau_leak_ms=math.exp(log_tau))
            return sensing_time(cell_voltage(self.retention_ms, m), m) - WORST_CASE_SENSE_NS
        # bisect in log space: the leak constant spans many decades
        log_tau = bisect(worst_err, math.log(1e-2), math.log(1e9), xtol=CALIBRATION_XTOL)
        return dataclasses.replace(fitted, tau_leak_ms=math.exp(log_tau))


_default_model: Optional[ChargeModel] = None


def default_model() -> ChargeModel:
    global _default_model
    if _default_model is None:
        _default_model = ChargeModel().calibrate()
    return _default_model


def cell_voltage(t_since_replenish_ms: float, model: ChargeModel) -> float:
    if t_since_replenish_ms < 0:
        raise ValueError("time since replenish must be non-negative")
    if model.tau_leak_ms is None:
        raise ConfigError("model is not calibrated")
    return model.vdd * math.exp(-t_since_replenish_ms / model.tau_leak_ms)


def sensing_time(v_cell: float, model: ChargeModel) -> float:
    """Nanoseconds for the bitline to reach the ready-to-access level.

    Returns math.inf when the cell holds no usable charge (v_cell <= VDD/2).
    """
    if model.tau_sense_ns is None:
        raise ConfigError("model is not calibrated")
    half = model.vdd / 2
    if v_cell <= half:
        return math.inf
    deviation = model.charge_sharing * (v_cell - half)
    target = (model.v_ready_frac - 0.5) * model.vdd
    return model.tau_sense_ns * math.log(target / deviation) + model.t_offset_ns


def timing_reduction(t_since_replenish_ms: float,
                     model: Optional[ChargeModel] = None) -> tuple[float, float]:
    """(tRCD, tRAS) reductions in ns available to a row replenished this long ago.

    The tRAS saving is taken proportional to the tRCD saving.
    """
    model = model or default_model()
    worst = sensing_time(cell_voltage(model.retention_ms, model), model)
    now = sensing_time(cell_voltage(t_since_replenish_ms, model), model)
    max_rcd = WORST_CASE_SENSE_NS - FULL_CHARGE_SENSE_NS
    d_rcd = min(max(worst - now, 0.0), max_rcd)
    return d_rcd, FULL_CHARGE_TRAS_REDUCTION_NS * d_rcd / max_rcd


def reduction_margin_issues(trcd_delta: int, tras_delta: int, clock_period_ns: float,
                            caching_duration_ms: Optional[float],
                            model: Optional[ChargeModel] = None) -> list:
    """Messages for cycle reductions that exceed what the model allows for rows
    cached as long as `caching_duration_ms`. Empty when consistent."""
    if caching_duration_ms is None:
        return [f"unbounded caching duration: no reduction is safe for stale rows"] \
            if (trcd_delta or tras_delta) else []
    d_rcd, d_ras = timing_reduction(caching_duration_ms, model)
    issues = []
    if trcd_delta * clock_period_ns > d_rcd + 1e-9:
        issues.append(f"tRCD reduction {trcd_delta} cycles = {trcd_delta * clock_period_ns:g} ns "
                      f"exceeds {d_rcd:.3f} ns available after {caching_duration_ms:g} ms")
    if tras_delta * clock_period_ns > d_ras + 1e-9:
        issues.append(f"tRAS reduction {tras_delta} cycles = {tras_delta * clock_period_ns:g} ns "
                      f"exceeds {d_ras:.3f} ns available after {caching_duration_ms:g} ms")
    return issues


# -- storage overhead ------------------------------------------------------------

@dataclass(frozen=True)
class OverheadInput:
    cores: int = 8
    channels: int = 2
    entries: int = 128
    ranks: int = 1
    banks: int = 8
    rows: int = 65536
    lru_bits_per_entry: int = 1


def _log2_exact(n: int, name: str) -> int:
    if n < 1 or n & (n - 1):
        raise ConfigError(f"{name} must be a power of two, got {n}")
    return n.bit_length() - 1


def storage_overhead(inp: OverheadInput) -> dict:
    """Bits needed for all HCRAC tables: one per core and channel, each entry
    holding a rank/bank/row tag, a valid bit and its LRU bits."""
    for name in ("cores", "channels", "entries", "lru_bits_per_entry"):
        if getattr(inp, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    entry_bits = (_log2_exact(inp.ranks, "ranks") + _log2_exact(inp.banks, "banks")
                  + _log2_exact(inp.rows, "rows") + 1)
    per_table = inp.entries * (entry_bits + inp.lru_bits_per_entry)
    total_bits = inp.cores * inp.channels * per_table
    return {
        "entry_size_bits": entry_bits,
        "total_bits": total_bits,
        "total_bytes": _bytes(total_bits),
        "bytes_per_core": _bytes(inp.channels * per_table),
    }


def _bytes(bits: int):
    """Whole bytes when exact, fractional otherwise."""
    return bits // 8 if bits % 8 == 0 else bits / 8


def overhead_report(inp: OverheadInput) -> dict:
    out = {"inputs": dataclasses.asdict(inp)}
    out.update(storage_overhead(inp))
    out["reported_constants"] = {
        "area_mm2": {"value": HCRAC_AREA_MM2,
                     "source": "published McPAT estimate, 22nm, 8 cores x 2 channels x 128 entries"},
        "power_mw": {"value": HCRAC_POWER_MW,
                     "source": "published McPAT average power, same configuration"},
    }
    return out
