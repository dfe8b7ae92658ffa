"""Car-following acceleration law and the fixed-timestep world integrator.

The acceleration model is the intelligent-driver family: a free-road term
pulling toward the desired velocity and an interaction term comparing the
dynamically desired gap against the actual net gap.  Commands are clamped to
``[-max_decel, +max_accel]``.

Ramp cars additionally see a virtual stopped car (zero length, zero
velocity) at the end of the merge section, so an unmerged car decelerates
toward the section end instead of driving off the ramp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .world import Road, RoadNetwork, VehicleState, World, wrap_position

__all__ = [
    "IdmParams",
    "LeaderView",
    "FILTER_MARGIN",
    "desired_gap",
    "idm_acceleration",
    "safe_command_limit",
    "section_end_command",
    "ramp_safety_command",
    "effective_leader",
    "equilibrium_velocity",
    "compute_idm_commands",
    "integrate",
    "step_world",
]

# Residual clearance the safety filter preserves in the worst case, metres.
FILTER_MARGIN = 0.25

# Comfortable deceleration for approaching the fixed end of the merge
# section.  A stationary endpoint is not a decelerating vehicle: applying
# the car-following law's closing-speed anticipation to it makes cars shed
# speed hundreds of metres early, so the endpoint is approached on a
# braking envelope instead (the safety limit still guarantees no overshoot).
ENDPOINT_COMFORT_DECEL = 2.5


@dataclass(frozen=True)
class IdmParams:
    """Driver-model parameters (SI units)."""

    desired_velocity: float = 100.0 / 3.6
    time_headway: float = 1.5
    max_accel: float = 1.0
    max_decel: float = 3.0
    min_gap: float = 2.0
    accel_exponent: float = 4.0

    def __post_init__(self) -> None:
        for name in ("desired_velocity", "time_headway", "max_accel", "max_decel", "min_gap"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.accel_exponent < 1:
            raise ValueError("accel_exponent must be at least 1")


@dataclass(frozen=True)
class LeaderView:
    """What a follower knows about its effective leader."""

    gap: float
    leader_velocity: float
    closing_speed: float  # follower velocity minus leader velocity

    def __post_init__(self) -> None:
        if not (self.gap > 0):
            raise ValueError(f"leader gap must be positive, got {self.gap}")


def desired_gap(v: float, dv: float, params: IdmParams) -> float:
    """Dynamically desired net gap at velocity ``v`` and closing speed ``dv``.

    The dynamic contribution (headway plus approach braking) is floored at
    zero, so the result never drops below the standstill minimum gap.
    """
    dyn = v * params.time_headway + v * dv / (
        2.0 * math.sqrt(params.max_accel * params.max_decel)
    )
    return params.min_gap + max(0.0, dyn)


def idm_acceleration(v: float, leader: LeaderView, params: IdmParams) -> float:
    """Commanded acceleration for a car at velocity ``v`` behind ``leader``.

    Raises if the gap is nonpositive: that means a collision already exists
    and the run must abort rather than paper over it.
    """
    if not (leader.gap > 0):
        raise ValueError(f"nonpositive gap {leader.gap}: collision already present")
    s_star = desired_gap(v, leader.closing_speed, params)
    a = params.max_accel * (
        1.0
        - (v / params.desired_velocity) ** params.accel_exponent
        - (s_star / leader.gap) ** 2
    )
    return min(params.max_accel, max(-params.max_decel, a))


def section_end_command(v: float, distance: float, params: IdmParams, dt: float) -> float:
    """Command gliding a ramp car to rest just before the section end.

    Follows the comfortable braking envelope ``v_cap(d) = sqrt(2 b_c (d -
    s0))`` toward the fixed endpoint, coming to rest a minimum gap short of
    it.  Far from the end the cap exceeds any reachable speed and the
    command clamps to full acceleration (a no-op under min-composition).
    """
    d_next = max(distance - v * dt, 0.0)
    room = max(d_next - params.min_gap, 0.0)
    v_cap = math.sqrt(2.0 * ENDPOINT_COMFORT_DECEL * room)
    limit = (v_cap - v) / dt
    return min(params.max_accel, max(-params.max_decel, limit))


def safe_command_limit(
    v: float, gap: float, leader_velocity: float, params: IdmParams, dt: float
) -> float:
    """Largest command that keeps a guaranteed stopping margin behind the leader.

    Worst case: the leader brakes at the full clamp to a stop starting now.
    The follower applies the command for one timestep and brakes at the
    clamp afterwards; its travel must never exceed the current gap plus the
    leader's stopping distance, less a small residual clearance.  The
    car-following law anticipates braking at the same rate it is clamped
    to, so it has no emergency reserve of its own; composing commands with
    this limit makes overlap impossible by induction.  In equilibrium and
    free flow the limit is far above the clamp and never binds.
    """
    b = params.max_decel
    budget = gap - FILTER_MARGIN + leader_velocity * leader_velocity / (2.0 * b)
    r = budget - 0.5 * v * dt
    if r <= 0:
        v_next = 0.0
    else:
        half_step = 0.5 * b * dt
        v_next = -half_step + math.sqrt(half_step * half_step + 2.0 * b * r)
    limit = (v_next - v) / dt
    return min(params.max_accel, max(-params.max_decel, limit))


def _safe_limit_array(
    v: np.ndarray, gap: np.ndarray, lead_v: np.ndarray, params: IdmParams, dt: float
) -> np.ndarray:
    b = params.max_decel
    r = gap - FILTER_MARGIN + lead_v * lead_v / (2.0 * b) - 0.5 * v * dt
    half_step = 0.5 * b * dt
    v_next = np.where(
        r <= 0, 0.0, -half_step + np.sqrt(half_step * half_step + 2.0 * b * np.maximum(r, 0.0))
    )
    return np.clip((v_next - v) / dt, -params.max_decel, params.max_accel)


def effective_leader(car: VehicleState, world: World) -> LeaderView:
    """Resolve the car's effective leader in the given world.

    Main-loop cars follow the next real car ahead (wrapping; a lone car
    follows itself around the ring).  Ramp cars follow the nearer of their
    real ramp leader and the virtual stopped car at the merge-section end.
    """
    net = world.network
    if car.road is Road.MAIN:
        idx = world.main_index(car.id)
        nxt = (idx + 1) % world.n_main
        gap = float(
            wrap_position(
                (world.main_pos[nxt] - world.main_len[nxt]) - world.main_pos[idx],
                net.loop_length,
            )
        )
        if world.n_main == 1:
            gap = net.loop_length - float(world.main_len[idx])
        lv = float(world.main_vel[nxt])
        return LeaderView(gap=gap, leader_velocity=lv, closing_speed=car.velocity - lv)

    idx = world.ramp_index(car.id)
    virtual_gap = max(net.ramp_length - float(world.ramp_pos[idx]), 1e-3)
    best = LeaderView(gap=virtual_gap, leader_velocity=0.0, closing_speed=car.velocity)
    if idx + 1 < world.n_ramp:
        gap = float(
            (world.ramp_pos[idx + 1] - world.ramp_len[idx + 1]) - world.ramp_pos[idx]
        )
        if gap <= 0:
            raise ValueError(
                f"nonpositive ramp gap {gap} behind car {int(world.ramp_ids[idx + 1])}"
            )
        if gap < best.gap:
            lv = float(world.ramp_vel[idx + 1])
            best = LeaderView(gap=gap, leader_velocity=lv, closing_speed=car.velocity - lv)
    return best


def ramp_safety_command(car: VehicleState, world: World, params: IdmParams, dt: float) -> float:
    """Default command for a ramp car: follow the real leader and glide to
    the section end, with the worst-case safety limit on both constraints.

    Matches the vectorized default the engine computes for ramp cars.
    """
    if car.road is not Road.RAMP:
        raise ValueError(f"car {car.id} is not on the ramp")
    net = world.network
    idx = world.ramp_index(car.id)
    v = car.velocity
    d_end = max(net.ramp_length - car.position, 1e-9)
    cmd = min(
        section_end_command(v, d_end, params, dt),
        safe_command_limit(v, d_end, 0.0, params, dt),
    )
    if idx + 1 < world.n_ramp:
        gap = float((world.ramp_pos[idx + 1] - world.ramp_len[idx + 1]) - world.ramp_pos[idx])
        if gap <= 0:
            raise ValueError(f"nonpositive ramp gap behind car {int(world.ramp_ids[idx + 1])}")
        lv = float(world.ramp_vel[idx + 1])
        view = LeaderView(gap=gap, leader_velocity=lv, closing_speed=v - lv)
        cmd = min(cmd, idm_acceleration(v, view, params),
                  safe_command_limit(v, gap, lv, params, dt))
    else:
        free = LeaderView(gap=1e9, leader_velocity=v, closing_speed=0.0)
        cmd = min(cmd, idm_acceleration(v, free, params))
    return cmd


def equilibrium_velocity(gap: float, params: IdmParams, tol: float = 1e-12) -> float:
    """Velocity at which a car following at ``gap`` with zero closing speed
    commands exactly zero acceleration.  Found by bisection; the command is
    strictly decreasing in velocity so the root is unique.
    """
    if gap <= params.min_gap:
        return 0.0

    def f(v: float) -> float:
        return (
            1.0
            - (v / params.desired_velocity) ** params.accel_exponent
            - (desired_gap(v, 0.0, params) / gap) ** 2
        )

    lo, hi = 0.0, params.desired_velocity
    if f(lo) <= 0:
        return 0.0
    while hi - lo > tol * params.desired_velocity:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def compute_idm_commands(
    world: World, params: IdmParams, dt: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized default commands for every car from a frozen snapshot.

    Main cars follow their ring leader; ramp cars follow the nearer of their
    ramp leader and the virtual stop at the section end.  Each car-following
    command is composed with the worst-case safety limit, so the default
    commands match ``min(idm_acceleration, safe_command_limit)`` per car.
    """
    net = world.network
    n_main, n_ramp = world.n_main, world.n_ramp

    main_cmd = np.empty(n_main)
    if n_main:
        gaps = world.main_gaps()
        if np.any(gaps <= 0):
            bad = int(np.argmax(gaps <= 0))
            raise ValueError(f"nonpositive main-road gap at car {int(world.main_ids[bad])}")
        lead_v = np.roll(world.main_vel, -1)
        main_cmd = np.minimum(
            _idm_array(world.main_vel, gaps, lead_v, params),
            _safe_limit_array(world.main_vel, gaps, lead_v, params, dt),
        )

    ramp_cmd = np.empty(n_ramp)
    if n_ramp:
        v = world.ramp_vel
        gaps = world.ramp_gaps()  # inf for the front-most car
        if np.any(gaps <= 0):
            bad = int(np.argmax(gaps <= 0))
            raise ValueError(f"nonpositive ramp gap at car {int(world.ramp_ids[bad])}")
        lead_v = np.empty(n_ramp)
        lead_v[:-1] = world.ramp_vel[1:]
        lead_v[-1] = v[-1] if n_ramp else 0.0  # front-most car has open road ahead
        follow_gaps = np.where(np.isinf(gaps), 1e9, gaps)
        ramp_cmd = np.minimum(
            _idm_array(v, follow_gaps, lead_v, params),
            _safe_limit_array(v, follow_gaps, lead_v, params, dt),
        )
        # Fixed endpoint of the merge section: comfortable braking envelope
        # plus the worst-case stopping limit against a zero-velocity point.
        d_end = np.maximum(net.ramp_length - world.ramp_pos, 1e-9)
        room = np.maximum(np.maximum(d_end - v * dt, 0.0) - params.min_gap, 0.0)
        v_cap = np.sqrt(2.0 * ENDPOINT_COMFORT_DECEL * room)
        a_end = np.clip((v_cap - v) / dt, -params.max_decel, params.max_accel)
        ramp_cmd = np.minimum(ramp_cmd, a_end)
        ramp_cmd = np.minimum(
            ramp_cmd, _safe_limit_array(v, d_end, np.zeros(n_ramp), params, dt)
        )
    return main_cmd, ramp_cmd


def _idm_array(v: np.ndarray, gap: np.ndarray, lead_v: np.ndarray, params: IdmParams) -> np.ndarray:
    dyn = v * params.time_headway + v * (v - lead_v) / (
        2.0 * math.sqrt(params.max_accel * params.max_decel)
    )
    s_star = params.min_gap + np.maximum(0.0, dyn)
    a = params.max_accel * (
        1.0 - (v / params.desired_velocity) ** params.accel_exponent - (s_star / gap) ** 2
    )
    return np.clip(a, -params.max_decel, params.max_accel)


def integrate(
    world: World, dt: float, main_cmd: np.ndarray, ramp_cmd: np.ndarray
) -> World:
    """Semi-implicit ballistic update applied simultaneously to all cars.

    ``v' = max(0, v + a dt)``; ``x' = x + (v + v')/2 dt`` (wrapping on the
    loop).  Ramp positions are clamped to the ramp end as a hard barrier.
    Velocities are never driven negative.
    """
    if not (dt > 0):
        raise ValueError("dt must be positive")
    out = world.copy()
    net = world.network
    if world.n_main:
        v1 = np.maximum(0.0, world.main_vel + main_cmd * dt)
        out.main_pos = (world.main_pos + 0.5 * (world.main_vel + v1) * dt) % net.loop_length
        out.main_vel = v1
        out.main_acc = np.asarray(main_cmd, dtype=np.float64).copy()
    if world.n_ramp:
        v1 = np.maximum(0.0, world.ramp_vel + ramp_cmd * dt)
        out.ramp_pos = np.minimum(
            world.ramp_pos + 0.5 * (world.ramp_vel + v1) * dt, net.ramp_length
        )
        out.ramp_vel = v1
        out.ramp_acc = np.asarray(ramp_cmd, dtype=np.float64).copy()
    return out


def step_world(
    world: World,
    dt: float,
    params: IdmParams,
    commands: Mapping[int, float] | None = None,
) -> World:
    """Advance the world one timestep.

    All commands are computed from the frozen snapshot (car-following for
    every car unless overridden in ``commands``), then applied
    simultaneously, so the result does not depend on storage order.
    """
    main_cmd, ramp_cmd = compute_idm_commands(world, params, dt)
    if commands:
        for car_id, a in commands.items():
            a = min(params.max_accel, max(-params.max_decel, a))
            hits = np.nonzero(world.main_ids == car_id)[0]
            if len(hits):
                main_cmd[int(hits[0])] = a
            else:
                ramp_cmd[world.ramp_index(car_id)] = a
    return integrate(world, dt, main_cmd, ramp_cmd)
