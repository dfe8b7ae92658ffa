"""Road geometry and vehicle state for the ring-road merge simulator.

The main road is a closed loop; a single-lane ramp joins it along a merge
section.  Loop positions wrap modulo the loop length.  Ramp positions run
from 0 (ramp entry) to ``ramp_length`` (end of the merge section), and the
last ``merge_section`` metres of the ramp run alongside the loop stretch
between the section start and section end, so the two coordinate systems
share the section-start anchor.

A car's ``position`` is its front bumper; its body occupies
``[position - length, position]`` along its road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

__all__ = [
    "Road",
    "RoadNetwork",
    "VehicleState",
    "CarLists",
    "World",
    "wrap_position",
    "net_gap",
    "distance_to_point",
    "signed_distance_to_merge_start",
    "loop_projection",
    "build_car_lists",
]


class Road(Enum):
    MAIN = "main"
    RAMP = "ramp"


def wrap_position(x: float, loop_length: float) -> float:
    """Map a loop coordinate into [0, loop_length)."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite loop position: {x!r}")
    if not (loop_length > 0):
        raise ValueError(f"loop_length must be positive, got {loop_length!r}")
    w = math.fmod(x, loop_length)
    if w < 0:
        w += loop_length
    # fmod of an exact multiple can return loop_length - 0 after the shift
    if w >= loop_length:
        w -= loop_length
    return w


@dataclass(frozen=True)
class RoadNetwork:
    """Closed main loop plus a single on-ramp.

    ``merge_start`` / ``merge_end`` are loop coordinates of the merge
    section; ``decision_offset`` is the distance from the decision point to
    the section start, measured upstream along the ramp.
    """

    loop_length: float = 10_000.0
    ramp_length: float = 400.0
    merge_start: float = 0.0
    merge_end: float = 100.0
    decision_offset: float = 200.0

    def __post_init__(self) -> None:
        if not (self.loop_length > 0):
            raise ValueError("loop_length must be positive")
        if not (self.ramp_length > 0):
            raise ValueError("ramp_length must be positive")
        section = wrap_position(self.merge_end - self.merge_start, self.loop_length)
        if not (0 < section <= self.ramp_length):
            raise ValueError(
                f"merge section must be positive and at most the ramp length, got {section}"
            )
        if not (0 <= self.decision_offset <= self.ramp_length):
            raise ValueError("decision_offset must lie within the ramp")

    @property
    def merge_section(self) -> float:
        """Arc length of the merge section along the loop."""
        return wrap_position(self.merge_end - self.merge_start, self.loop_length)

    @property
    def ramp_merge_start(self) -> float:
        """Ramp coordinate of the merge-section start."""
        return self.ramp_length - self.merge_section

    @property
    def ramp_decision_point(self) -> float:
        """Ramp coordinate of the decision point (clamped at the ramp entry)."""
        return max(0.0, self.ramp_merge_start - self.decision_offset)

    def with_decision_offset(self, offset: float) -> "RoadNetwork":
        return replace(self, decision_offset=offset)


@dataclass(frozen=True)
class VehicleState:
    id: int
    road: Road
    position: float
    velocity: float
    acceleration: float = 0.0
    length: float = 5.0
    merged_at: float | None = None

    def __post_init__(self) -> None:
        if self.velocity < 0:
            raise ValueError(f"car {self.id}: velocity must be nonnegative")
        if not (self.length > 0):
            raise ValueError(f"car {self.id}: length must be positive")


@dataclass
class CarLists:
    """The three car lists consumed by merging strategies.

    ``ramp_list`` and ``main_list`` are ordered front-most first (closest to
    the merge-section start).  ``out_list`` is the computed post-merge
    sequence; single lanes forbid overtaking, so its restriction to either
    road must preserve that road's order.
    """

    ramp_list: list[int] = field(default_factory=list)
    main_list: list[int] = field(default_factory=list)
    out_list: list[int] = field(default_factory=list)


def net_gap(follower: VehicleState, leader: VehicleState, network: RoadNetwork) -> float:
    """Bumper-to-bumper distance from follower front to leader rear.

    On the loop the arc wraps, so a car can be its own leader (single car on
    the ring): the gap is then the circumference minus its body length.  On
    the ramp the road is linear and a self-gap is meaningless.
    """
    if follower.road is not leader.road:
        raise ValueError("follower and leader must be on the same road")
    if follower.road is Road.MAIN:
        return wrap_position(
            (leader.position - leader.length) - follower.position, network.loop_length
        )
    if follower.id == leader.id:
        raise ValueError("identical cars on the ramp have no defined gap")
    return (leader.position - leader.length) - follower.position


def _signed_arc_to(position: float, point: float, network: RoadNetwork) -> float:
    """Signed forward arc from a loop position to a point.

    Positive means the point lies ahead; arcs longer than half the loop are
    reported as negative (the position is just past the point).
    """
    arc = wrap_position(point - position, network.loop_length)
    if arc > network.loop_length / 2:
        arc -= network.loop_length
    return arc


def signed_distance_to_merge_start(car: VehicleState, network: RoadNetwork) -> float:
    """Along-path distance to the merge-section start; negative once past it.

    Shared anchor for both roads: a ramp car and a main car with equal values
    are side by side relative to the section start.
    """
    if car.road is Road.RAMP:
        return network.ramp_merge_start - car.position
    return _signed_arc_to(car.position, network.merge_start, network)


def distance_to_point(car: VehicleState, point: float, network: RoadNetwork) -> float:
    """Nonnegative along-path distance from the car to a loop coordinate.

    Returns 0 for a car that is at or already past the point while inside
    the merge section.  For ramp cars only points inside the merge section
    are reachable.
    """
    if car.road is Road.MAIN:
        arc = wrap_position(point - car.position, network.loop_length)
        behind = network.loop_length - arc  # how far past the point the car sits
        if arc > 0 and behind <= network.merge_section:
            # Just past the point and still within one merge-section length:
            # treat as arrived when the car is inside the section.
            past_start = wrap_position(car.position - network.merge_start, network.loop_length)
            if past_start <= network.merge_section:
                return 0.0
        return arc
    # Ramp car: map the loop point onto the ramp via the shared anchor.
    ahead_of_start = wrap_position(point - network.merge_start, network.loop_length)
    if ahead_of_start > network.merge_section:
        raise ValueError(f"loop point {point} is not reachable from the ramp")
    ramp_point = network.ramp_merge_start + ahead_of_start
    return max(0.0, ramp_point - car.position)


def loop_projection(car: VehicleState, network: RoadNetwork) -> float:
    """Loop coordinate a ramp car would occupy if transferred right now."""
    if car.road is Road.MAIN:
        return car.position
    return wrap_position(
        network.merge_start - signed_distance_to_merge_start(car, network),
        network.loop_length,
    )


class World:
    """Mutable container for all cars, stored as parallel arrays per road.

    Main-road arrays are kept in ring order (the car at index ``i + 1 mod n``
    is the next car ahead of index ``i``); ramp arrays are kept in ascending
    position order (the front-most ramp car is the last index).  Single-lane
    roads forbid overtaking, so the orders are stable between structural
    changes (spawns and merges).
    """

    def __init__(self, network: RoadNetwork):
        self.network = network
        self.main_ids = np.empty(0, dtype=np.int64)
        self.main_pos = np.empty(0, dtype=np.float64)
        self.main_vel = np.empty(0, dtype=np.float64)
        self.main_acc = np.empty(0, dtype=np.float64)
        self.main_len = np.empty(0, dtype=np.float64)
        self.main_merged_at = np.empty(0, dtype=np.float64)  # nan = entered on the loop
        self.ramp_ids = np.empty(0, dtype=np.int64)
        self.ramp_pos = np.empty(0, dtype=np.float64)
        self.ramp_vel = np.empty(0, dtype=np.float64)
        self.ramp_acc = np.empty(0, dtype=np.float64)
        self.ramp_len = np.empty(0, dtype=np.float64)

    # ── construction ──────────────────────────────────────────────────

    def copy(self) -> "World":
        w = World(self.network)
        for name in (
            "main_ids", "main_pos", "main_vel", "main_acc", "main_len",
            "main_merged_at", "ramp_ids", "ramp_pos", "ramp_vel",
            "ramp_acc", "ramp_len",
        ):
            setattr(w, name, getattr(self, name).copy())
        return w

    def add_main_cars(self, cars: list[VehicleState]) -> None:
        """Append main-road cars; the given order must be ring order."""
        if not cars:
            return
        self.main_ids = np.concatenate([self.main_ids, [c.id for c in cars]]).astype(np.int64)
        self.main_pos = np.concatenate([self.main_pos, [c.position for c in cars]])
        self.main_vel = np.concatenate([self.main_vel, [c.velocity for c in cars]])
        self.main_acc = np.concatenate([self.main_acc, [c.acceleration for c in cars]])
        self.main_len = np.concatenate([self.main_len, [c.length for c in cars]])
        self.main_merged_at = np.concatenate(
            [self.main_merged_at,
             [math.nan if c.merged_at is None else c.merged_at for c in cars]]
        )

    def add_ramp_car(self, car: VehicleState) -> None:
        """Insert a ramp car keeping ascending position order."""
        idx = int(np.searchsorted(self.ramp_pos, car.position))
        self.ramp_ids = np.insert(self.ramp_ids, idx, car.id)
        self.ramp_pos = np.insert(self.ramp_pos, idx, car.position)
        self.ramp_vel = np.insert(self.ramp_vel, idx, car.velocity)
        self.ramp_acc = np.insert(self.ramp_acc, idx, car.acceleration)
        self.ramp_len = np.insert(self.ramp_len, idx, car.length)

    def move_to_main(self, car_id: int, loop_position: float, t: float) -> None:
        """Transfer a ramp car onto the loop at the given position.

        Velocity is preserved; the insertion index is chosen so ring order
        stays consistent (smallest forward arc to the existing cars).
        """
        ridx = self.ramp_index(car_id)
        pos = wrap_position(loop_position, self.network.loop_length)
        n = len(self.main_ids)
        if n == 0:
            idx = 0
        else:
            # Next car ahead: smallest forward arc from the insertion point.
            arcs = (self.main_pos - pos) % self.network.loop_length
            idx = int(np.argmin(arcs))
        self.main_ids = np.insert(self.main_ids, idx, self.ramp_ids[ridx])
        self.main_pos = np.insert(self.main_pos, idx, pos)
        self.main_vel = np.insert(self.main_vel, idx, self.ramp_vel[ridx])
        self.main_acc = np.insert(self.main_acc, idx, self.ramp_acc[ridx])
        self.main_len = np.insert(self.main_len, idx, self.ramp_len[ridx])
        self.main_merged_at = np.insert(self.main_merged_at, idx, t)
        self._drop_ramp_index(ridx)

    def _drop_ramp_index(self, idx: int) -> None:
        self.ramp_ids = np.delete(self.ramp_ids, idx)
        self.ramp_pos = np.delete(self.ramp_pos, idx)
        self.ramp_vel = np.delete(self.ramp_vel, idx)
        self.ramp_acc = np.delete(self.ramp_acc, idx)
        self.ramp_len = np.delete(self.ramp_len, idx)

    # ── queries ───────────────────────────────────────────────────────

    @property
    def n_main(self) -> int:
        return len(self.main_ids)

    @property
    def n_ramp(self) -> int:
        return len(self.ramp_ids)

    def main_index(self, car_id: int) -> int:
        hits = np.nonzero(self.main_ids == car_id)[0]
        if len(hits) != 1:
            raise KeyError(f"car {car_id} not on the main loop")
        return int(hits[0])

    def ramp_index(self, car_id: int) -> int:
        hits = np.nonzero(self.ramp_ids == car_id)[0]
        if len(hits) != 1:
            raise KeyError(f"car {car_id} not on the ramp")
        return int(hits[0])

    def car(self, car_id: int) -> VehicleState:
        hits = np.nonzero(self.main_ids == car_id)[0]
        if len(hits) == 1:
            i = int(hits[0])
            merged = self.main_merged_at[i]
            return VehicleState(
                id=car_id,
                road=Road.MAIN,
                position=float(self.main_pos[i]),
                velocity=float(self.main_vel[i]),
                acceleration=float(self.main_acc[i]),
                length=float(self.main_len[i]),
                merged_at=None if math.isnan(merged) else float(merged),
            )
        i = self.ramp_index(car_id)
        return VehicleState(
            id=car_id,
            road=Road.RAMP,
            position=float(self.ramp_pos[i]),
            velocity=float(self.ramp_vel[i]),
            acceleration=float(self.ramp_acc[i]),
            length=float(self.ramp_len[i]),
        )

    def main_cars(self) -> list[VehicleState]:
        return [self.car(int(cid)) for cid in self.main_ids]

    def ramp_cars(self) -> list[VehicleState]:
        return [self.car(int(cid)) for cid in self.ramp_ids]

    def main_gaps(self) -> np.ndarray:
        """Net gap from each main car to the next car ahead (ring order)."""
        n = self.n_main
        if n == 0:
            return np.empty(0)
        lead_rear = np.roll(self.main_pos - self.main_len, -1)
        return (lead_rear - self.main_pos) % self.network.loop_length

    def ramp_gaps(self) -> np.ndarray:
        """Net gap from each ramp car to the next ramp car ahead (last = inf)."""
        n = self.n_ramp
        if n == 0:
            return np.empty(0)
        gaps = np.full(n, np.inf)
        if n > 1:
            gaps[:-1] = (self.ramp_pos[1:] - self.ramp_len[1:]) - self.ramp_pos[:-1]
        return gaps


def build_car_lists(
    world: World,
    neighbor_limit: int = 8,
    neighbor_range: float = 400.0,
) -> CarLists:
    """Build the strategy-facing car lists from a world snapshot.

    ``ramp_list``: all unmerged ramp cars, front-most first.  ``main_list``:
    main-loop cars strictly upstream of the merge-section start, limited to
    the ``neighbor_limit`` nearest within ``neighbor_range`` metres
    (communication horizon), front-most first.  ``out_list`` starts empty and
    is filled by an ordering strategy.
    """
    net = world.network
    ramp_list = [int(cid) for cid in world.ramp_ids[::-1]]

    main_list: list[int] = []
    if world.n_main:
        dist = (net.merge_start - world.main_pos) % net.loop_length
        mask = (dist > 0) & (dist <= neighbor_range)
        order = np.argsort(dist[mask], kind="stable")
        ids = world.main_ids[mask][order][:neighbor_limit]
        main_list = [int(cid) for cid in ids]
    return CarLists(ramp_list=ramp_list, main_list=main_list)
