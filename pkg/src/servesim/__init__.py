"""Discrete-event simulator for batched LLM inference serving."""

from .config import RunConfig, load, loads, simulate
from .metrics import SloSpec, export, summary
from .scenarios import scenario
from .sweep import SweepSpec, run_sweep

__all__ = [
    "RunConfig",
    "SloSpec",
    "SweepSpec",
    "export",
    "load",
    "loads",
    "run_sweep",
    "scenario",
    "simulate",
    "summary",
]
