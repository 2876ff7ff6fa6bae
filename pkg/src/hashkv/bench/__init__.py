"""Workload generation, experiment driver and reporting."""

from .driver import Experiment, MetricsReport, execute, run_experiment, run_load, run_scan_bench, run_update_phases, run_ycsb
from .workload import YCSB_MIXES, KeySpace, PhaseSpec, WorkloadSpec, Zipfian, make_keys

__all__ = [
    "Experiment", "KeySpace", "MetricsReport", "PhaseSpec", "WorkloadSpec", "YCSB_MIXES", "Zipfian",
    "execute", "make_keys", "run_experiment", "run_load", "run_scan_bench", "run_update_phases", "run_ycsb",
]
