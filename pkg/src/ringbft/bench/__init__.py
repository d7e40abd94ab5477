"""Workload generation, peak search and reporting."""

from .workload import (
    DecayRow, KneeResult, Report, Rung, WorkloadSpec, find_knee, peak_search, repeat, run_workload,
    sweep,
)

__all__ = ["DecayRow", "KneeResult", "Report", "Rung", "WorkloadSpec", "find_knee", "peak_search",
           "repeat", "run_workload", "sweep"]
