"""Deterministic microscopic traffic simulator for ring-road on-ramp merging.

Benchmarks a reactive priority baseline against proactive distance-based and
velocity-based merging for sensor-enabled cars on a closed main loop.
"""

from .dynamics import IdmParams, LeaderView, desired_gap, effective_leader, idm_acceleration, step_world
from .engine import CollisionError, RampEvent, RunResult, Simulation, run_simulation
from .metrics import MetricsFrame, RunSummary, accel_stats, flow, latency_to_fill, throughput
from .strategies import (
    GapAssignment,
    MergePlan,
    StrategyKind,
    order_distance_based,
    order_velocity_based,
    predict_arrival_time,
    sliding_decision_offset,
)
from .traffic import ArrivalProcess, ArrivalSchedule, ScenarioConfig, canonical_cell
from .world import (
    CarLists,
    Road,
    RoadNetwork,
    VehicleState,
    World,
    build_car_lists,
    distance_to_point,
    net_gap,
    wrap_position,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalProcess",
    "ArrivalSchedule",
    "CarLists",
    "CollisionError",
    "GapAssignment",
    "IdmParams",
    "LeaderView",
    "MergePlan",
    "MetricsFrame",
    "RampEvent",
    "Road",
    "RoadNetwork",
    "RunResult",
    "RunSummary",
    "ScenarioConfig",
    "Simulation",
    "StrategyKind",
    "VehicleState",
    "World",
    "accel_stats",
    "build_car_lists",
    "canonical_cell",
    "desired_gap",
    "distance_to_point",
    "effective_leader",
    "flow",
    "idm_acceleration",
    "latency_to_fill",
    "net_gap",
    "order_distance_based",
    "order_velocity_based",
    "predict_arrival_time",
    "run_simulation",
    "sliding_decision_offset",
    "step_world",
    "throughput",
    "wrap_position",
]
