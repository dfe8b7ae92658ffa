"""Merging strategies: reactive priority baseline and the proactive family.

The priority baseline gives main-road traffic absolute right of way: ramp
cars merge only into gaps that are already big enough, and main-road cars
never react to the ramp.

The proactive family dissociates the decision point from the merge point:
when a ramp car reaches its decision point it is assigned a target gap
between two main-road cars (phase 1), then adjusts speed to arrive inside
that gap (phase 2) while the designated main-road follower yields to the
ramp car's projected position so the gap actually materializes.

Ordering flavours: distance-based knows positions only and ranks cars by
distance to the merge-section start; velocity-based also knows velocities
and ranks by predicted arrival time under constant-velocity extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .dynamics import (
    IdmParams,
    LeaderView,
    desired_gap,
    effective_leader,
    idm_acceleration,
    ramp_safety_command,
)
from .world import (
    CarLists,
    Road,
    RoadNetwork,
    VehicleState,
    World,
    distance_to_point,
    loop_projection,
    signed_distance_to_merge_start,
    wrap_position,
)

__all__ = [
    "StrategyKind",
    "GapAssignment",
    "MergePlan",
    "MIN_PREDICTION_VELOCITY",
    "predict_arrival_time",
    "order_distance_based",
    "order_velocity_based",
    "assign_gap_at_decision_point",
    "proactive_accel_command",
    "enforce_order_on_main",
    "priority_can_merge",
    "insertion_feasible",
    "execute_merge",
    "sliding_decision_offset",
]

# Velocity floor for arrival prediction; keeps crawling cars from producing
# unbounded arrival times while still ranking them effectively last.
MIN_PREDICTION_VELOCITY = 0.1

# Strongest braking a cooperative yield may command.  A leader that brakes at
# the mutual clamp cannot be followed safely by an equally-clamped follower
# whose response ramps up progressively, so planned gap-opening stays at
# comfortable levels and full braking is reserved for the safety law.
YIELD_DECEL_LIMIT = 2.0

# Followers yield only for the ramp cars at the head of the merge queue.
# Yielding for every queued car simultaneously strangles the main road under
# saturation without absorbing anyone.
MAX_CONCURRENT_YIELDS = 2

# A car crawling at or below this speed may force its way in when the
# forward-simulated insertion stays clear.  Without this valve one unlucky
# car stopped at the section end plugs the ramp forever, because free-flow
# traffic never satisfies the worst-case invariant against a standing car.
FORCED_MERGE_MAX_VELOCITY = 5.0


Perceive = Callable[[float], float]


def _identity(x: float) -> float:
    return x


class StrategyKind(Enum):
    PRIORITY = "priority"
    DISTANCE_BASED = "distance"
    VELOCITY_BASED = "velocity"
    PROACTIVE_VELOCITY = "proactive_velocity"

    @classmethod
    def from_name(cls, name: str) -> "StrategyKind":
        for kind in cls:
            if kind.value == name:
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown strategy {name!r} (expected one of: {valid})")

    @property
    def proactive(self) -> bool:
        """True when the strategy assigns gaps and adjusts speed early."""
        return self is not StrategyKind.PRIORITY

    def decision_lead(self, network: RoadNetwork) -> float:
        """Distance before the merge-section start at which the order is fixed.

        Only the proactive-velocity strategy decides upstream at the
        decision point; the reactive flavours decide on arrival at the
        section start.
        """
        if self is StrategyKind.PROACTIVE_VELOCITY:
            return network.decision_offset
        return 0.0


@dataclass(frozen=True)
class GapAssignment:
    """Target slot for one ramp car: bounding main-road cars, if any."""

    leader_id: int | None
    follower_id: int | None


@dataclass
class MergePlan:
    out_list: list[int]
    gap_assignment: dict[int, GapAssignment] = field(default_factory=dict)
    decided_at: float = 0.0


def predict_arrival_time(car: VehicleState, point: float, network: RoadNetwork) -> float:
    """Constant-velocity arrival time at a loop point (velocity floored)."""
    dist = distance_to_point(car, point, network)
    return _arrival_time(dist, car.velocity)


def _arrival_time(dist: float, velocity: float) -> float:
    if dist <= 0:
        return 0.0
    return dist / max(velocity, MIN_PREDICTION_VELOCITY)


def _merge_by_key(
    main_keyed: list[tuple[int, float]], ramp_keyed: list[tuple[int, float]]
) -> list[int]:
    """Stable head-vs-head merge of the two per-road sequences.

    Only the current heads are compared, so the output preserves each road's
    internal order even if the keys are non-monotone within a road.  Ties go
    to the main road (right-of-way convention of the baseline).
    """
    out: list[int] = []
    i = j = 0
    while i < len(main_keyed) and j < len(ramp_keyed):
        if main_keyed[i][1] <= ramp_keyed[j][1]:
            out.append(main_keyed[i][0])
            i += 1
        else:
            out.append(ramp_keyed[j][0])
            j += 1
    out.extend(cid for cid, _ in main_keyed[i:])
    out.extend(cid for cid, _ in ramp_keyed[j:])
    return out


def order_distance_based(
    lists: CarLists,
    world: World,
    t: float = 0.0,
    perceive: Perceive = _identity,
) -> MergePlan:
    """Rank all listed cars by distance to the merge-section start."""
    net = world.network

    def keyed(ids: list[int]) -> list[tuple[int, float]]:
        return [
            (cid, perceive(distance_to_point(world.car(cid), net.merge_start, net)))
            for cid in ids
        ]

    out = _merge_by_key(keyed(lists.main_list), keyed(lists.ramp_list))
    return MergePlan(out_list=out, decided_at=t)


def order_velocity_based(
    lists: CarLists,
    world: World,
    t: float = 0.0,
    perceive: Perceive = _identity,
) -> MergePlan:
    """Rank all listed cars by predicted arrival at the merge-section start."""
    net = world.network

    def keyed(ids: list[int]) -> list[tuple[int, float]]:
        result = []
        for cid in ids:
            car = world.car(cid)
            dist = perceive(distance_to_point(car, net.merge_start, net))
            result.append((cid, _arrival_time(dist, perceive(car.velocity))))
        return result

    out = _merge_by_key(keyed(lists.main_list), keyed(lists.ramp_list))
    return MergePlan(out_list=out, decided_at=t)


def assign_gap_at_decision_point(
    ramp_car: VehicleState,
    lists: CarLists,
    world: World,
    params: IdmParams,
    perceive: Perceive = _identity,
) -> GapAssignment:
    """Pick the main-road gap whose arrival-time window fits the ramp car.

    Each spatially consecutive pair of known main cars with enough physical
    room spans a window ``[t_front, t_rear]`` of predicted arrivals at the
    section start; there is also an unbounded window ahead of the first car
    and behind the last.  The car takes the window containing its own
    predicted arrival, or the nearest later one (always reachable, since
    braking can delay arrival arbitrarily).  With no known main cars the
    gap is unbounded on both sides.
    """
    net = world.network
    if not lists.main_list:
        return GapAssignment(leader_id=None, follower_id=None)

    own_dist = perceive(distance_to_point(ramp_car, net.merge_start, net))
    t_r = _arrival_time(own_dist, perceive(ramp_car.velocity))

    cars = [world.car(cid) for cid in lists.main_list]
    times = [
        _arrival_time(
            perceive(distance_to_point(c, net.merge_start, net)), perceive(c.velocity)
        )
        for c in cars
    ]
    # room needed to physically hold the ramp car between a pair
    room = ramp_car.length + 2.0 * params.min_gap

    # Candidate windows front to back: (leader, follower, window_end).
    windows: list[tuple[int | None, int | None, float]] = [
        (None, cars[0].id, times[0])
    ]
    for front, back, t_front, t_back in zip(cars, cars[1:], times, times[1:]):
        pair_gap = perceive(
            wrap_position((front.position - front.length) - back.position, net.loop_length)
        )
        if pair_gap >= room:
            windows.append((front.id, back.id, t_back))
    windows.append((cars[-1].id, None, math.inf))

    for leader_id, follower_id, end in windows:
        if end >= t_r:
            return GapAssignment(leader_id=leader_id, follower_id=follower_id)
    return GapAssignment(leader_id=cars[-1].id, follower_id=None)


def proactive_accel_command(
    ramp_car: VehicleState,
    assignment: GapAssignment | None,
    world: World,
    params: IdmParams,
    perceive: Perceive = _identity,
    dt: float = 0.1,
) -> float:
    """Phase-2 speed adjustment: min of the safety and gap-tracking commands.

    The safety command follows the real ramp leader or the virtual stop at
    the section end.  The tracking command follows the assigned main-road
    leader projected onto the ramp car's own path: once the leader is at or
    past the section start the projection is its plain along-path offset;
    while it is still upstream it is projected through its arrival time
    (the slot boundary sits where the ramp car would arrive exactly when
    the leader does), so the car regulates its arrival-time headway behind
    the leader instead of reacting to a transient spatial inversion.  A
    slot that has effectively fallen behind the car (nonpositive projected
    gap) demands maximum braking.  Taking the minimum means tracking can
    only ever be more cautious than pure safety.
    """
    a_safety = ramp_safety_command(ramp_car, world, params, dt)
    if assignment is None or assignment.leader_id is None:
        return a_safety

    net = world.network
    leader = world.car(assignment.leader_id)
    own_dist = perceive(signed_distance_to_merge_start(ramp_car, net))
    lead_dist = perceive(signed_distance_to_merge_start(leader, net))
    lead_v = perceive(leader.velocity)
    if lead_dist <= 0:
        gap = (own_dist - lead_dist) - leader.length
    else:
        time_to_start = lead_dist / max(lead_v, MIN_PREDICTION_VELOCITY)
        gap = own_dist - ramp_car.velocity * time_to_start - leader.length
    if gap <= 0:
        a_track = -params.max_decel
    else:
        a_track = idm_acceleration(
            ramp_car.velocity,
            LeaderView(gap=gap, leader_velocity=lead_v,
                       closing_speed=ramp_car.velocity - lead_v),
            params,
        )
    return min(a_safety, a_track)


def enforce_order_on_main(
    assignments: dict[int, GapAssignment],
    world: World,
    perceive: Perceive = _identity,
) -> dict[int, LeaderView]:
    """Candidate leader views realizing the planned order on the main road.

    For every unmerged ramp car with an assigned follower, that follower
    sees the ramp car projected onto the loop as a potential leader.  The
    engine combines this with the follower's real leader by taking the more
    cautious command.  Projections behind the follower wrap to huge gaps and
    therefore never bind.  The priority strategy never calls this.
    """
    net = world.network
    overrides: dict[int, LeaderView] = {}
    for ramp_id, assignment in assignments.items():
        if assignment.follower_id is None:
            continue
        try:
            ridx = world.ramp_index(ramp_id)
        except KeyError:
            continue  # already merged; override lapses
        try:
            fidx = world.main_index(assignment.follower_id)
        except KeyError:
            continue
        own_dist = perceive(net.ramp_merge_start - float(world.ramp_pos[ridx]))
        proj = wrap_position(net.merge_start - own_dist, net.loop_length)
        gap = wrap_position(
            (proj - float(world.ramp_len[ridx])) - float(world.main_pos[fidx]),
            net.loop_length,
        )
        if gap <= 0:
            continue
        ramp_v = perceive(float(world.ramp_vel[ridx]))
        view = LeaderView(
            gap=gap,
            leader_velocity=ramp_v,
            closing_speed=float(world.main_vel[fidx]) - ramp_v,
        )
        follower_id = assignment.follower_id
        if follower_id not in overrides or view.gap < overrides[follower_id].gap:
            overrides[follower_id] = view
    return overrides


def _insertion_neighbors(
    world: World, position: float, length: float
) -> tuple[tuple[float, float] | None, tuple[float, float] | None]:
    """(front, rear) neighbors of a hypothetical car inserted on the loop.

    Each side is ``(net_gap, velocity)`` or None when the loop is empty.
    Neighbors are found by front-bumper arcs so that a car whose body
    straddles the insertion point shows up as a nonpositive gap instead of
    wrapping around to a spurious full-loop distance.
    """
    if world.n_main == 0:
        return None, None
    loop = world.network.loop_length
    arc = (world.main_pos - position) % loop  # front bumper to front bumper
    fidx = int(np.argmin(arc))
    ridx = int(np.argmax(arc))
    front = (float(arc[fidx] - world.main_len[fidx]), float(world.main_vel[fidx]))
    rear = (float((loop - arc[ridx]) - length), float(world.main_vel[ridx]))
    return front, rear


def _stopping_invariant(
    v_rear: float, v_front: float, gap: float, params: IdmParams
) -> bool:
    """Worst-case stopping margin: if the front party brakes at the clamp to
    a stop, the rear party can still stop at least a minimum gap behind it."""
    return v_rear * v_rear - v_front * v_front <= 2.0 * params.max_decel * (
        gap - params.min_gap
    )


def _filtered_command(v: float, gap: float, lead_v: float, params: IdmParams, dt: float) -> float:
    from .dynamics import safe_command_limit  # local import avoids an import cycle

    dyn = v * params.time_headway + v * (v - lead_v) / (
        2.0 * math.sqrt(params.max_accel * params.max_decel)
    )
    s_star = params.min_gap + max(0.0, dyn)
    a = params.max_accel * (
        1.0 - (v / params.desired_velocity) ** params.accel_exponent
        - (s_star / gap) ** 2
    )
    a = min(params.max_accel, max(-params.max_decel, a))
    return min(a, safe_command_limit(v, gap, lead_v, params, dt))


def _insertion_rollout_safe(
    front_gap: float,
    front_v: float,
    merge_v: float,
    rear_gap: float,
    rear_v: float,
    params: IdmParams,
    dt: float,
    horizon: float = 20.0,
    margin: float = 0.25,
) -> bool:
    """Forward-simulate the insertion chain under the engine's actual laws.

    The would-be merged car follows the front neighbor (held at constant
    velocity; sound for a slow merger, which cannot catch a faster front
    car within the horizon) and the rear neighbor follows the merged car;
    both run the safety-filtered car-following command at the simulation
    timestep.  Accepts when the chain never closes below the margin and
    reaches a state where the speeds are ordered and both stopping
    invariants hold, so the per-step safety limit preserves the margins
    from then on.
    """
    vm, vr = merge_v, rear_v
    g_front, g_rear = front_gap, rear_gap
    for _ in range(int(horizon / dt)):
        if (
            vr <= vm
            and vm <= front_v
            and _stopping_invariant(vr, vm, g_rear, params)
            and _stopping_invariant(vm, front_v, g_front, params)
        ):
            return True
        am = _filtered_command(vm, g_front, front_v, params, dt)
        ar = _filtered_command(vr, g_rear, vm, params, dt)
        vm1 = max(0.0, vm + am * dt)
        vr1 = max(0.0, vr + ar * dt)
        g_front += front_v * dt - 0.5 * (vm + vm1) * dt
        g_rear += 0.5 * (vm + vm1) * dt - 0.5 * (vr + vr1) * dt
        vm, vr = vm1, vr1
        if g_front <= margin or g_rear <= margin:
            return False
    return _stopping_invariant(vr, vm, g_rear, params) and _stopping_invariant(
        vm, front_v, g_front, params
    )


def insertion_feasible(
    world: World,
    ramp_car: VehicleState,
    params: IdmParams,
    dt: float = 0.1,
) -> bool:
    """True when lateral transfer at the car's projection is acceptable.

    Requires at least the standstill minimum gap on both sides, plus the
    worst-case stopping invariant for both newly created pairs (the
    per-step safety limit then preserves those margins forever).  A car
    crawling at the forced-merge speed may instead be admitted on a
    forward-simulated insertion that stays clear: the give-way nose-in
    that makes the new follower shed speed while the merged car pulls
    away.  An empty loop is always feasible.
    """
    pos = loop_projection(ramp_car, world.network)
    front, rear = _insertion_neighbors(world, pos, ramp_car.length)
    if front is None:
        return True
    front_gap, front_v = front
    rear_gap, rear_v = rear
    if front_gap < params.min_gap or rear_gap < params.min_gap:
        return False
    if _stopping_invariant(rear_v, ramp_car.velocity, rear_gap, params) and (
        _stopping_invariant(ramp_car.velocity, front_v, front_gap, params)
    ):
        return True
    if ramp_car.velocity > FORCED_MERGE_MAX_VELOCITY:
        return False
    return _insertion_rollout_safe(
        front_gap, front_v, ramp_car.velocity, rear_gap, rear_v, params, dt
    )


def priority_can_merge(
    ramp_car: VehicleState, world: World, params: IdmParams, dt: float = 0.1
) -> bool:
    """Gap acceptance for the priority baseline.

    The ramp car gives way: it needs at least the minimum standstill gap to
    the rear neighbor and at least its dynamically desired gap to the front
    neighbor, and the insertion must pass the shared admission rule
    (comfortable, or certified survivable once the car is running out of
    ramp).
    """
    pos = loop_projection(ramp_car, world.network)
    front, rear = _insertion_neighbors(world, pos, ramp_car.length)
    if front is None:
        return True
    front_gap, front_v = front
    rear_gap, _ = rear
    if rear_gap < params.min_gap:
        return False
    if front_gap < desired_gap(ramp_car.velocity, ramp_car.velocity - front_v, params):
        return False
    return insertion_feasible(world, ramp_car, params, dt)


def execute_merge(
    world: World,
    ramp_car_id: int,
    t: float,
    params: IdmParams,
    strategy: StrategyKind,
    dt: float = 0.1,
) -> bool:
    """Attempt the lateral transfer of a ramp car inside the merge section.

    Mutates the world on success (road flips, position preserved as the
    loop projection, velocity preserved, merge time recorded) and returns
    whether the merge happened.  A car that reaches the section end without
    a feasible insertion simply keeps waiting there against the virtual
    stop.
    """
    car = world.car(ramp_car_id)
    if car.road is not Road.RAMP:
        raise ValueError(f"car {ramp_car_id} is not on the ramp")
    if signed_distance_to_merge_start(car, world.network) > 0:
        return False
    if strategy is StrategyKind.PRIORITY:
        ok = priority_can_merge(car, world, params, dt)
    else:
        ok = insertion_feasible(world, car, params, dt)
    if not ok:
        return False
    world.move_to_main(ramp_car_id, loop_projection(car, world.network), t)
    return True


def sliding_decision_offset(
    mean_main_velocity: float,
    network: RoadNetwork,
    params: IdmParams,
    gain: float = 2.0,
) -> float:
    """Velocity-adaptive distance from decision point to section start.

    Proportional to the time-headway travel distance at the current mean
    main-road velocity, clamped to the ramp stretch available upstream of
    the merge section.  Monotone non-decreasing in the mean velocity.
    """
    cap = network.ramp_length - network.merge_section
    raw = gain * max(0.0, mean_main_velocity) * params.time_headway
    return min(max(raw, 0.0), cap)
