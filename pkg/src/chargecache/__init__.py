"""Trace-driven DRAM timing simulator with a charge-aware activation-latency cache."""
from .dram import DramGeometry, TimingParams, TimingClass, effective_timings
from .policy import PolicyConfig, PolicyKind, HcracTable
from .sim import SimConfig, simulate

__version__ = "0.1.0"
