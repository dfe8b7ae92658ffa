"""Scenario construction: experiment cells, arrivals, and sensor noise.

A scenario is one experiment cell: main-road density, ramp demand, arrival
process, strategy, geometry, seed, and duration.  The canonical cells cross
light/medium/heavy main density (5/10/15 cars/km) with low/high ramp demand
(6/12 cars/minute) on a 10 km loop with a 400 m ramp.

Randomness is confined to named sub-streams derived from the scenario seed
(arrivals, sensor noise), so toggling one feature never perturbs another
and identical configs replay bit-identically.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum

from .dynamics import IdmParams, equilibrium_velocity
from .strategies import StrategyKind
from .world import Road, RoadNetwork, VehicleState, World

__all__ = [
    "ArrivalProcess",
    "ScenarioConfig",
    "ArrivalSchedule",
    "SensorModel",
    "MAX_RAMP_RATE",
    "MAX_SENSOR_NOISE_PCT",
    "CANONICAL_DENSITIES",
    "CANONICAL_RAMP_RATES",
    "canonical_cell",
    "next_interarrival",
    "init_main_loop",
    "spawn_ramp_car",
    "apply_sensor_noise",
    "substream",
]

MAX_RAMP_RATE = 12.0          # cars/minute; a ramp's physical capability
MAX_SENSOR_NOISE_PCT = 3.0    # automotive sensors: total error under 3 %

CANONICAL_DENSITIES = {"light": 5.0, "medium": 10.0, "heavy": 15.0}
CANONICAL_RAMP_RATES = {"low_ramp": 6.0, "high_ramp": 12.0}


class ArrivalProcess(Enum):
    CONSTANT = "constant"
    POISSON = "poisson"


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment cell."""

    main_density: float = 10.0          # cars/km
    ramp_rate: float = 6.0              # cars/minute; 0 disables the ramp
    arrival_process: ArrivalProcess = ArrivalProcess.CONSTANT
    strategy: StrategyKind = StrategyKind.PRIORITY
    network: RoadNetwork = field(default_factory=RoadNetwork)
    idm: IdmParams = field(default_factory=IdmParams)
    dt: float = 0.1
    duration: float = 1800.0
    seed: int = 42
    sensor_noise_pct: float = 0.0
    neighbor_limit: int = 8
    neighbor_range: float = 400.0
    sliding_decision: bool = False
    vehicle_length: float = 5.0
    entry_velocity: float = 60.0 / 3.6
    metrics_interval: float = 1.0

    def __post_init__(self) -> None:
        if self.main_density < 0:
            raise ValueError("main_density must be nonnegative")
        if not (0 <= self.ramp_rate <= MAX_RAMP_RATE):
            raise ValueError(f"ramp_rate must be within [0, {MAX_RAMP_RATE}] cars/minute")
        if not (0 <= self.sensor_noise_pct <= MAX_SENSOR_NOISE_PCT):
            raise ValueError(f"sensor_noise_pct must be within [0, {MAX_SENSOR_NOISE_PCT}]")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if self.neighbor_limit < 1:
            raise ValueError("neighbor_limit must be at least 1")
        if not (self.neighbor_range > 0):
            raise ValueError("neighbor_range must be positive")
        if not (self.vehicle_length > 0):
            raise ValueError("vehicle_length must be positive")
        if not (0 <= self.entry_velocity <= self.idm.desired_velocity):
            raise ValueError("entry_velocity must be within [0, desired_velocity]")

    def with_(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


def canonical_cell(
    density_name: str, ramp_name: str, strategy: StrategyKind, **overrides
) -> ScenarioConfig:
    """Build one cell of the canonical experiment matrix by name."""
    try:
        density = CANONICAL_DENSITIES[density_name]
    except KeyError:
        raise ValueError(f"unknown density level {density_name!r}") from None
    try:
        rate = CANONICAL_RAMP_RATES[ramp_name]
    except KeyError:
        raise ValueError(f"unknown ramp level {ramp_name!r}") from None
    return ScenarioConfig(
        main_density=density, ramp_rate=rate, strategy=strategy, **overrides
    )


def substream(seed: int, tag: str) -> random.Random:
    """Deterministic named RNG sub-stream derived from the scenario seed."""
    return random.Random(f"{seed}:{tag}")


def next_interarrival(
    process: ArrivalProcess, rate: float, rng: random.Random
) -> float:
    """Seconds until the next ramp arrival.

    Constant spacing is exactly ``60 / rate``; Poisson arrivals draw an
    exponential interval with the same mean from the given generator.
    """
    if not (rate > 0):
        raise ValueError("arrival rate must be positive")
    mean = 60.0 / rate
    if process is ArrivalProcess.CONSTANT:
        return mean
    return rng.expovariate(1.0 / mean)


class ArrivalSchedule:
    """Ramp-demand stream: arrival instants plus the pending entry queue.

    Arrivals that find the ramp entry occupied wait in a FIFO queue and
    enter at the first free step; demand is conserved, and the queue depth
    is a reported metric.
    """

    def __init__(self, config: ScenarioConfig):
        self._process = config.arrival_process
        self._rate = config.ramp_rate
        self._rng = substream(config.seed, "arrivals")
        self.next_arrival_time = math.inf
        if self._rate > 0:
            self.next_arrival_time = next_interarrival(self._process, self._rate, self._rng)
        self.pending: list[float] = []  # arrival instants waiting to enter
        self.total_arrivals = 0

    def poll(self, t: float) -> None:
        """Move all arrivals due by time ``t`` into the entry queue."""
        while t >= self.next_arrival_time:
            self.pending.append(self.next_arrival_time)
            self.total_arrivals += 1
            self.next_arrival_time += next_interarrival(self._process, self._rate, self._rng)

    @property
    def queue_depth(self) -> int:
        return len(self.pending)


class SensorModel:
    """Multiplicative bounded sensor error on strategy-perceived values.

    Dynamics always see ground truth; only the quantities strategies consume
    are distorted.  At zero error the model is an exact identity and draws
    nothing, so enabling other features never shifts the noise stream.
    """

    def __init__(self, pct: float, rng: random.Random):
        if not (0 <= pct <= MAX_SENSOR_NOISE_PCT):
            raise ValueError(f"noise pct must be within [0, {MAX_SENSOR_NOISE_PCT}]")
        self._pct = pct
        self._rng = rng

    def __call__(self, value: float) -> float:
        return apply_sensor_noise(value, self._pct, self._rng)


def apply_sensor_noise(value: float, pct: float, rng: random.Random) -> float:
    """Perceived value with uniform relative error inside ``±pct`` percent."""
    if pct == 0:
        return value
    u = rng.uniform(-pct / 100.0, pct / 100.0)
    return value * (1.0 + u)


def init_main_loop(
    density: float,
    network: RoadNetwork,
    idm: IdmParams,
    vehicle_length: float = 5.0,
    first_id: int = 0,
) -> list[VehicleState]:
    """Equally spaced main-loop population at its car-following equilibrium.

    The car count is ``round(density * loop_km)``; every car starts at the
    velocity where the car-following command vanishes for the resulting net
    gap, so the initial state is stationary.
    """
    n = int(round(density * network.loop_length / 1000.0))
    if n == 0:
        return []
    spacing = network.loop_length / n
    gap = spacing - vehicle_length
    if gap < idm.min_gap:
        raise ValueError(
            f"density {density} cars/km needs spacing {spacing:.2f} m; "
            f"below body length plus minimum gap ({vehicle_length + idm.min_gap:.2f} m)"
        )
    v_eq = equilibrium_velocity(gap, idm)
    return [
        VehicleState(
            id=first_id + i,
            road=Road.MAIN,
            position=i * spacing,
            velocity=v_eq,
            length=vehicle_length,
        )
        for i in range(n)
    ]


def _safe_entry_velocity(
    requested: float, gap: float, leader_velocity: float, idm: IdmParams
) -> float:
    """Cap the entry velocity so the new car can brake out of its approach."""
    margin = max(gap - idm.min_gap, 0.0)
    v_max = math.sqrt(leader_velocity * leader_velocity + 2.0 * idm.max_decel * margin)
    return min(requested, v_max)


def spawn_ramp_car(
    world: World,
    schedule: ArrivalSchedule,
    config: ScenarioConfig,
    next_id: int,
) -> VehicleState | None:
    """Admit the oldest queued arrival if the ramp entry cell is free.

    The entry cell is the first body length plus minimum gap of the ramp;
    entry is FIFO and at most one car enters per step.  The entry velocity
    is the configured default, capped so the newcomer can always brake
    behind the current last ramp car.  Returns the admitted car or None.
    """
    if not schedule.pending:
        return None
    length = config.vehicle_length
    entry_front = length  # new car's front bumper; body occupies [0, length]
    if world.n_ramp:
        last_rear = float(world.ramp_pos[0]) - float(world.ramp_len[0])
        gap = last_rear - entry_front
        if gap < config.idm.min_gap:
            return None
        velocity = _safe_entry_velocity(
            config.entry_velocity, gap, float(world.ramp_vel[0]), config.idm
        )
    else:
        velocity = config.entry_velocity
    schedule.pending.pop(0)
    car = VehicleState(
        id=next_id, road=Road.RAMP, position=entry_front,
        velocity=velocity, length=length,
    )
    world.add_ramp_car(car)
    return car
