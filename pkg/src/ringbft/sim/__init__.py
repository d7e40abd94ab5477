"""Deterministic simulation of ring and chain deployments."""

from .adversary import AdversarySpec, cascade, fallback_flood
from .engine import CapacityModel, Simulator
from .leader import LeaderResult, fit_decay_exponent, leader_broadcast_model
from .latency import REGION_ORDER, LatencyModel, Placement, load_rtt, place_replicas
from .oracle import GlobalOracle, SafetyViolation
from .run import RunMetrics, Scenario, WorkloadConfig, load_scenario, minimize_trace, run_sim

__all__ = [
    "AdversarySpec", "CapacityModel", "GlobalOracle", "LatencyModel", "LeaderResult", "Placement", "REGION_ORDER",
    "RunMetrics", "SafetyViolation", "Scenario", "Simulator", "WorkloadConfig", "cascade",
    "fallback_flood", "fit_decay_exponent", "leader_broadcast_model", "load_rtt", "load_scenario", "minimize_trace", "place_replicas", "run_sim",
]
