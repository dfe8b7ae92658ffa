"""Runnable invariant suites: equilibrium, geometry, determinism,
conservation, and oracle equivalence.

These are the same checks the test suite enforces, packaged so a user can
point them at an arbitrary configuration (``mergesim validate``) and see
integrator or geometry problems surfaced instead of silently corrupted
results.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .dynamics import equilibrium_velocity, step_world
from .engine import CollisionError, run_simulation
from .strategies import MIN_PREDICTION_VELOCITY, order_velocity_based
from .traffic import ScenarioConfig, init_main_loop
from .world import CarLists, Road, RoadNetwork, VehicleState, World, build_car_lists, distance_to_point

__all__ = [
    "SuiteResult",
    "constant_velocity_crossing_order",
    "random_ordering_instance",
    "equilibrium_suite",
    "ring_partition_suite",
    "determinism_suite",
    "conservation_suite",
    "ordering_oracle_suite",
    "run_all",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


def constant_velocity_crossing_order(lists: CarLists, world: World) -> list[int]:
    """Brute-force merge-order oracle.

    Advance every listed car toward the merge-section start at constant
    velocity.  A car can never cross before the car ahead of it on the same
    road, so each road's crossing times are the running maximum of its raw
    arrival times.  Sort by (crossing time, main-road-first); Python's sort
    is stable, so same-road order survives exact ties.
    """
    net = world.network
    keyed: list[tuple[float, int, int]] = []
    for rank, ids in enumerate((lists.main_list, lists.ramp_list)):
        blocked = -np.inf
        for cid in ids:
            car = world.car(cid)
            dist = distance_to_point(car, net.merge_start, net)
            raw = dist / max(car.velocity, MIN_PREDICTION_VELOCITY) if dist > 0 else 0.0
            blocked = max(blocked, raw)
            keyed.append((blocked, rank, cid))
    keyed.sort(key=lambda k: (k[0], k[1]))
    return [cid for _, _, cid in keyed]


def random_ordering_instance(
    rng: random.Random, network: RoadNetwork
) -> tuple[CarLists, World]:
    """A random snapshot of at most five cars approaching the section start."""
    world = World(network)
    n_total = rng.randint(1, 5)
    n_main = rng.randint(0, n_total)
    ramp_reach = network.ramp_merge_start

    positions = sorted(rng.uniform(8.0, min(390.0, network.loop_length - 10)) for _ in range(n_main))
    main_cars = [
        VehicleState(
            id=i,
            road=Road.MAIN,
            position=(network.merge_start - d) % network.loop_length,
            velocity=rng.uniform(0.0, 33.0),
        )
        for i, d in enumerate(positions)
    ]
    # Ring order = ascending loop position = farthest-from-start first.
    world.add_main_cars(main_cars[::-1])
    for j in range(n_total - n_main):
        pos = rng.uniform(1.0, max(2.0, ramp_reach - 1.0))
        world.add_ramp_car(
            VehicleState(
                id=100 + j, road=Road.RAMP, position=pos, velocity=rng.uniform(0.0, 33.0)
            )
        )
    lists = build_car_lists(world, neighbor_limit=8, neighbor_range=400.0)
    return lists, world


# ── suites ────────────────────────────────────────────────────────────


def equilibrium_suite(config: ScenarioConfig) -> SuiteResult:
    """Free-flow convergence, platoon stationarity, and stop approach.

    All three use the configured timestep, so an unstable integrator setup
    (for example a huge dt) fails here instead of hiding inside results.
    """
    name = "equilibrium"
    idm = config.idm
    net = config.network
    dt = config.dt
    try:
        # Single car converges to the desired velocity and stays there.
        world = World(net)
        world.add_main_cars(
            [VehicleState(id=0, road=Road.MAIN, position=0.0, velocity=0.0,
                          length=config.vehicle_length)]
        )
        v0 = idm.desired_velocity
        for _ in range(int(round(300.0 / dt))):
            world = step_world(world, dt, idm)
        for _ in range(int(round(60.0 / dt))):
            world = step_world(world, dt, idm)
            if abs(float(world.main_vel[0]) - v0) > 1e-3 * v0:
                return SuiteResult(
                    name, False,
                    f"free-flow velocity {float(world.main_vel[0]):.4f} strayed from {v0:.4f}",
                )

        # Homogeneous ring platoon at the equilibrium gap stays stationary.
        n, length = 20, config.vehicle_length
        spacing = net.loop_length / n
        gap = spacing - length
        v_eq = equilibrium_velocity(gap, idm)
        world = World(net)
        world.add_main_cars(
            [VehicleState(id=i, road=Road.MAIN, position=i * spacing, velocity=v_eq,
                          length=length) for i in range(n)]
        )
        worst = 0.0
        for _ in range(int(round(60.0 / dt))):
            world = step_world(world, dt, idm)
            worst = max(worst, float(np.max(np.abs(world.main_acc))))
        if worst >= 1e-6:
            return SuiteResult(name, False, f"platoon drifted: max |a| = {worst:.3e}")

        # A car approaching the section end must settle without overshooting.
        world = World(net)
        start = max(net.ramp_length - 300.0, 1.0)
        world.add_ramp_car(
            VehicleState(id=0, road=Road.RAMP, position=start,
                         velocity=idm.desired_velocity, length=config.vehicle_length)
        )
        for _ in range(int(round(120.0 / dt))):
            world = step_world(world, dt, idm)
            gap = net.ramp_length - float(world.ramp_pos[0])
            if gap <= 1e-9:
                return SuiteResult(
                    name, False, "stop approach overshot the section end"
                )
        if gap > 2 * idm.min_gap:
            return SuiteResult(
                name, False, f"stop approach stalled {gap:.2f} m short"
            )
        return SuiteResult(name, True, "converged, stationary, and stop-safe")
    except (ValueError, CollisionError) as exc:
        return SuiteResult(name, False, str(exc))


def ring_partition_suite(config: ScenarioConfig) -> SuiteResult:
    """Gaps plus body lengths of the initial population tile the loop."""
    name = "ring-partition"
    try:
        world = World(config.network)
        world.add_main_cars(
            init_main_loop(config.main_density, config.network, config.idm,
                           config.vehicle_length)
        )
        if world.n_main == 0:
            return SuiteResult(name, True, "empty loop (vacuous)")
        total = float(np.sum(world.main_gaps() + world.main_len))
        err = abs(total - config.network.loop_length)
        tol = 1e-6 * config.network.loop_length
        if err > tol:
            return SuiteResult(name, False, f"partition off by {err:.3e} m")
        return SuiteResult(name, True, f"partition error {err:.3e} m")
    except ValueError as exc:
        return SuiteResult(name, False, str(exc))


def determinism_suite(config: ScenarioConfig) -> SuiteResult:
    """Two identical short runs must agree field-for-field."""
    name = "determinism"
    short = config.with_(duration=min(config.duration, 60.0))
    try:
        a = run_simulation(short)
        b = run_simulation(short)
    except CollisionError as exc:
        return SuiteResult(name, False, str(exc))
    if a.frames != b.frames or a.events != b.events:
        return SuiteResult(name, False, "replays diverged")
    return SuiteResult(name, True, f"{len(a.frames)} frames identical across replays")


def conservation_suite(config: ScenarioConfig) -> SuiteResult:
    """No car appears or disappears; flow identity holds on every frame."""
    name = "conservation"
    short = config.with_(duration=min(config.duration, 120.0))
    try:
        sim_result = run_simulation(short)
    except CollisionError as exc:
        return SuiteResult(name, False, str(exc))
    n0 = int(round(short.main_density * short.network.loop_length / 1000.0))
    for f in sim_result.frames:
        if f.n_main != n0 + f.merged_total:
            return SuiteResult(
                name, False, f"t={f.t}: {f.n_main} main cars vs {n0} + {f.merged_total} merged"
            )
        if f.flow != f.density * f.mean_velocity:
            return SuiteResult(name, False, f"t={f.t}: flow identity broken")
    entered = len(sim_result.events)
    last = sim_result.frames[-1]
    if entered != last.n_ramp + last.merged_total:
        return SuiteResult(
            name, False,
            f"{entered} entries vs {last.n_ramp} on ramp + {last.merged_total} merged",
        )
    return SuiteResult(name, True, f"{len(sim_result.frames)} frames conserved")


def ordering_oracle_suite(config: ScenarioConfig, instances: int = 200) -> SuiteResult:
    """Velocity ordering equals the brute-force crossing-time oracle."""
    name = "ordering-oracle"
    rng = random.Random(config.seed ^ 0x5EED)
    for k in range(instances):
        lists, world = random_ordering_instance(rng, config.network)
        got = order_velocity_based(lists, world).out_list
        want = constant_velocity_crossing_order(lists, world)
        if got != want:
            return SuiteResult(name, False, f"instance {k}: {got} != oracle {want}")
    return SuiteResult(name, True, f"{instances} random instances matched")


def run_all(config: ScenarioConfig) -> list[SuiteResult]:
    return [
        equilibrium_suite(config),
        ring_partition_suite(config),
        determinism_suite(config),
        conservation_suite(config),
        ordering_oracle_suite(config),
    ]
