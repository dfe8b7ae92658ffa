"""Simulation engine: the per-step pipeline tying all modules together.

Step pipeline, in order: admit due ramp arrivals; fire decision events for
ramp cars that crossed their decision point; compute every car's command
from the frozen snapshot (car-following defaults, then strategy overrides);
integrate simultaneously; execute feasible lateral transfers; check the
no-collision invariant; sample metrics.

The run is deterministic: identical configs produce bit-identical frames,
events, and summaries.  Any collision aborts the run with the offending
pair and timestamp; it is an invariant breach, never silently repaired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import compute_idm_commands, idm_acceleration, integrate
from .metrics import HARD_DECEL_THRESHOLD, MetricsFrame, RunSummary, summarize
from .strategies import (
    MAX_CONCURRENT_YIELDS,
    YIELD_DECEL_LIMIT,
    GapAssignment,
    MergePlan,
    StrategyKind,
    assign_gap_at_decision_point,
    enforce_order_on_main,
    execute_merge,
    order_distance_based,
    order_velocity_based,
    proactive_accel_command,
    sliding_decision_offset,
)
from .traffic import ArrivalSchedule, ScenarioConfig, SensorModel, init_main_loop, spawn_ramp_car, substream
from .world import World, build_car_lists, wrap_position

__all__ = ["CollisionError", "RampEvent", "RunResult", "Simulation", "run_simulation"]


class CollisionError(RuntimeError):
    """Two cars overlapped: the safety invariant is broken, the run aborts."""

    def __init__(self, t: float, follower_id: int, leader_id: int):
        self.t = t
        self.follower_id = follower_id
        self.leader_id = leader_id
        leader = "the merge-section end" if leader_id < 0 else f"car {leader_id}"
        super().__init__(f"collision at t={t:.2f}s: car {follower_id} into {leader}")


@dataclass
class RampEvent:
    """Lifecycle record of one ramp car."""

    car_id: int
    spawn_t: float
    entry_v: float
    decision_t: float | None = None
    merge_t: float | None = None
    merge_v: float | None = None


@dataclass
class RunResult:
    config: ScenarioConfig
    frames: list[MetricsFrame]
    events: list[RampEvent]
    summary: RunSummary
    merge_times: list[float]
    passings: list[tuple[float, int, str]] = field(default_factory=list)

    def realized_order(self) -> list[int]:
        """Car ids in the order they passed the merge-section start
        (main-road crossings) or completed their merge (ramp cars)."""
        return [cid for _, cid, _ in sorted(self.passings, key=lambda p: p[0])]


class Simulation:
    """One scenario run.  Build, then call :meth:`run`."""

    def __init__(self, config: ScenarioConfig, record_commands: bool = False):
        self.config = config
        self.world = World(config.network)
        self.world.add_main_cars(
            init_main_loop(
                config.main_density, config.network, config.idm, config.vehicle_length
            )
        )
        self.initial_main_count = self.world.n_main
        self.schedule = ArrivalSchedule(config)
        self.perceive = SensorModel(config.sensor_noise_pct, substream(config.seed, "sensors"))
        self.t = 0.0
        self._step = 0
        self._next_id = self.world.n_main
        self.assignments: dict[int, GapAssignment] = {}
        self.events: dict[int, RampEvent] = {}
        self.merge_times: list[float] = []
        self.frames: list[MetricsFrame] = []
        self.passings: list[tuple[float, int, str]] = []
        self._abs_accel_sum = 0.0
        self._accel_weight = 0.0
        self._hard_decel_events = 0
        self._record_commands = record_commands
        self.command_log: list[tuple[float, list[float]]] = []
        self._frame_every = max(1, round(config.metrics_interval / config.dt))
        self._prev_main_gaps = self.world.main_gaps()
        self._prev_ramp_gaps = self.world.ramp_gaps()
        self._prev_virtual_gaps = self._virtual_gaps()

    # ── helpers ───────────────────────────────────────────────────────

    def _virtual_gaps(self) -> np.ndarray:
        return self.config.network.ramp_length - self.world.ramp_pos

    def _refresh_gap_cache(self) -> None:
        self._prev_main_gaps = self.world.main_gaps()
        self._prev_ramp_gaps = self.world.ramp_gaps()
        self._prev_virtual_gaps = self._virtual_gaps()

    def _decision_threshold(self) -> float | None:
        """Distance to the section start at which undecided cars decide."""
        strategy = self.config.strategy
        if strategy is StrategyKind.PRIORITY:
            return None
        lead = strategy.decision_lead(self.config.network)
        if strategy is StrategyKind.PROACTIVE_VELOCITY and self.config.sliding_decision:
            mean_v = float(np.mean(self.world.main_vel)) if self.world.n_main else 0.0
            lead = sliding_decision_offset(mean_v, self.config.network, self.config.idm)
        return lead

    def current_plan(self) -> MergePlan:
        """Materialize the out-list for the current snapshot (inspection)."""
        lists = build_car_lists(
            self.world, self.config.neighbor_limit, self.config.neighbor_range
        )
        if self.config.strategy is StrategyKind.DISTANCE_BASED:
            plan = order_distance_based(lists, self.world, self.t, self.perceive)
        else:
            plan = order_velocity_based(lists, self.world, self.t, self.perceive)
        plan.gap_assignment = dict(self.assignments)
        return plan

    # ── pipeline phases ───────────────────────────────────────────────

    def _admit_arrivals(self) -> None:
        self.schedule.poll(self.t)
        car = spawn_ramp_car(self.world, self.schedule, self.config, self._next_id)
        if car is not None:
            self.events[car.id] = RampEvent(
                car_id=car.id, spawn_t=self.t, entry_v=car.velocity
            )
            self._next_id += 1
            self._refresh_gap_cache()

    def _expire_stale_assignments(self) -> None:
        """Drop assignments whose slot has physically passed the car.

        When the designated follower has overtaken the ramp car's loop
        projection the planned gap no longer exists; the car re-decides at
        the next decision pass with current traffic.
        """
        net = self.config.network
        half = net.loop_length / 2
        stale: list[int] = []
        for cid, assignment in self.assignments.items():
            if assignment.follower_id is None:
                continue
            try:
                ridx = self.world.ramp_index(cid)
                fidx = self.world.main_index(assignment.follower_id)
            except KeyError:
                continue
            own_dist = net.ramp_merge_start - float(self.world.ramp_pos[ridx])
            proj = wrap_position(net.merge_start - own_dist, net.loop_length)
            arc_back = (proj - float(self.world.main_pos[fidx])) % net.loop_length
            if arc_back > half:  # follower is ahead of the projection
                stale.append(cid)
        for cid in stale:
            del self.assignments[cid]

    def _fire_decisions(self) -> None:
        threshold = self._decision_threshold()
        if threshold is None or self.world.n_ramp == 0:
            return
        self._expire_stale_assignments()
        net = self.config.network
        dist = net.ramp_merge_start - self.world.ramp_pos
        due = [
            int(cid)
            for cid, d in zip(self.world.ramp_ids[::-1], dist[::-1])
            if d <= threshold and int(cid) not in self.assignments
        ]
        if not due:
            return
        lists = build_car_lists(
            self.world, self.config.neighbor_limit, self.config.neighbor_range
        )
        for cid in due:
            car = self.world.car(cid)
            if self.config.strategy is StrategyKind.DISTANCE_BASED:
                assignment = self._assign_by_distance_rank(cid, lists)
            else:
                assignment = assign_gap_at_decision_point(
                    car, lists, self.world, self.config.idm, self.perceive
                )
            self.assignments[cid] = assignment
            if self.events[cid].decision_t is None:
                self.events[cid].decision_t = self.t

    def _assign_by_distance_rank(self, car_id: int, lists) -> GapAssignment:
        """Distance-based slot: the main cars adjacent in the distance order."""
        plan = order_distance_based(lists, self.world, self.t, self.perceive)
        main_set = set(lists.main_list)
        idx = plan.out_list.index(car_id)
        leader = next(
            (cid for cid in reversed(plan.out_list[:idx]) if cid in main_set), None
        )
        follower = next(
            (cid for cid in plan.out_list[idx + 1:] if cid in main_set), None
        )
        return GapAssignment(leader_id=leader, follower_id=follower)

    def _compute_commands(self) -> tuple[np.ndarray, np.ndarray]:
        config = self.config
        main_cmd, ramp_cmd = compute_idm_commands(self.world, config.idm, config.dt)
        if config.strategy is StrategyKind.PRIORITY or not self.assignments:
            return main_cmd, ramp_cmd

        # Phase-2 speed adjustment for decided, unmerged ramp cars, applied
        # while approaching the merge section; inside it the safety law and
        # the gap tests take over.  The safety-filtered default command
        # stays the ceiling.
        ramp_merge_start = config.network.ramp_merge_start
        for cid, assignment in self.assignments.items():
            try:
                idx = self.world.ramp_index(cid)
            except KeyError:
                continue
            if self.world.ramp_pos[idx] >= ramp_merge_start:
                continue
            ramp_cmd[idx] = min(
                ramp_cmd[idx],
                proactive_accel_command(
                    self.world.car(cid), assignment, self.world, config.idm,
                    self.perceive, config.dt,
                ),
            )

        # Designated followers yield to the projected ramp car; planned
        # gap-opening is comfort-limited so real followers can track it,
        # and only the head of the merge queue is yielded for.
        head: dict[int, GapAssignment] = {}
        for cid in self.world.ramp_ids[::-1]:
            assignment = self.assignments.get(int(cid))
            if assignment is not None:
                head[int(cid)] = assignment
                if len(head) >= MAX_CONCURRENT_YIELDS:
                    break
        overrides = enforce_order_on_main(head, self.world, self.perceive)
        for follower_id, view in overrides.items():
            fidx = self.world.main_index(follower_id)
            candidate = idm_acceleration(float(self.world.main_vel[fidx]), view, config.idm)
            candidate = max(candidate, -YIELD_DECEL_LIMIT)
            main_cmd[fidx] = min(main_cmd[fidx], candidate)
        return main_cmd, ramp_cmd

    def _detect_collisions(
        self, main_disp: np.ndarray, ramp_disp: np.ndarray
    ) -> None:
        w = self.world
        if w.n_main > 1:
            implied = self._prev_main_gaps + np.roll(main_disp, -1) - main_disp
            bad = np.nonzero(implied <= 0)[0]
            if len(bad):
                i = int(bad[0])
                raise CollisionError(
                    self.t, int(w.main_ids[i]), int(w.main_ids[(i + 1) % w.n_main])
                )
        if w.n_ramp > 1:
            implied = self._prev_ramp_gaps[:-1] + ramp_disp[1:] - ramp_disp[:-1]
            bad = np.nonzero(implied <= 0)[0]
            if len(bad):
                i = int(bad[0])
                raise CollisionError(self.t, int(w.ramp_ids[i]), int(w.ramp_ids[i + 1]))
        if w.n_ramp:
            implied = self._prev_virtual_gaps - ramp_disp
            bad = np.nonzero(implied <= 0)[0]
            if len(bad):
                raise CollisionError(self.t, int(w.ramp_ids[int(bad[0])]), -1)

    def _execute_merges(self) -> None:
        net = self.config.network
        in_section = np.nonzero(self.world.ramp_pos >= net.ramp_merge_start)[0]
        if not len(in_section):
            return
        # Front-most first: per-road order makes that the earliest planned rank.
        merged_any = False
        for idx in sorted(in_section, reverse=True):
            cid = int(self.world.ramp_ids[idx])
            car = self.world.car(cid)
            if execute_merge(self.world, cid, self.t, self.config.idm,
                             self.config.strategy, self.config.dt):
                event = self.events[cid]
                event.merge_t = self.t
                event.merge_v = car.velocity
                self.merge_times.append(self.t)
                self.passings.append((self.t, cid, "merge"))
                self.assignments.pop(cid, None)
                merged_any = True
        if merged_any:
            self._refresh_gap_cache()

    def _record_passings(self, main_disp: np.ndarray) -> None:
        net = self.config.network
        if not self.world.n_main:
            return
        # Distances measured before integration; a car passed the section
        # start iff it was upstream by less than this step's displacement.
        dist = (net.merge_start - (self.world.main_pos - main_disp)) % net.loop_length
        crossed = (dist > 0) & (main_disp >= dist)
        for i in np.nonzero(crossed)[0]:
            self.passings.append((self.t, int(self.world.main_ids[int(i)]), "pass"))

    def _accumulate_accel(self, main_cmd: np.ndarray) -> None:
        dt = self.config.dt
        if len(main_cmd):
            self._abs_accel_sum += float(np.sum(np.abs(main_cmd))) * dt
            self._accel_weight += len(main_cmd) * dt
            self._hard_decel_events += int(np.sum(main_cmd <= HARD_DECEL_THRESHOLD))
        if self._record_commands:
            self.command_log.append((dt, [float(a) for a in main_cmd]))

    def _sample_frame(self) -> None:
        w = self.world
        mean_v = float(np.mean(w.main_vel)) if w.n_main else 0.0
        mean_abs_a = float(np.mean(np.abs(w.main_acc))) if w.n_main else 0.0
        self.frames.append(
            MetricsFrame.capture(
                t=self.t,
                loop_length=self.config.network.loop_length,
                n_main=w.n_main,
                n_ramp=w.n_ramp,
                ramp_queue=self.schedule.queue_depth,
                merged_total=len(self.merge_times),
                mean_velocity=mean_v,
                mean_abs_accel=mean_abs_a,
                hard_decel_events=self._hard_decel_events,
            )
        )

    # ── main loop ─────────────────────────────────────────────────────

    def step(self) -> None:
        dt = self.config.dt
        self._admit_arrivals()
        self._fire_decisions()
        main_cmd, ramp_cmd = self._compute_commands()
        self._accumulate_accel(main_cmd)

        v_main0, v_ramp0 = self.world.main_vel, self.world.ramp_vel
        self.world = integrate(self.world, dt, main_cmd, ramp_cmd)
        main_disp = 0.5 * (v_main0 + self.world.main_vel) * dt
        ramp_disp = 0.5 * (v_ramp0 + self.world.ramp_vel) * dt

        self._step += 1
        self.t = self._step * dt

        self._detect_collisions(main_disp, ramp_disp)
        self._record_passings(main_disp)
        self._refresh_gap_cache()
        self._execute_merges()
        if self._step % self._frame_every == 0:
            self._sample_frame()

    def run(self) -> RunResult:
        self._sample_frame()  # initial state at t = 0
        n_steps = int(round(self.config.duration / self.config.dt))
        for _ in range(n_steps):
            self.step()
        transit = [
            e.merge_t - e.spawn_t for e in self.events.values() if e.merge_t is not None
        ]
        summary = summarize(
            self.frames,
            self.merge_times,
            transit,
            self._abs_accel_sum / self._accel_weight if self._accel_weight else 0.0,
            self._hard_decel_events,
            self.config.metrics_interval,
        )
        return RunResult(
            config=self.config,
            frames=self.frames,
            events=[self.events[k] for k in sorted(self.events)],
            summary=summary,
            merge_times=self.merge_times,
            passings=self.passings,
        )


def run_simulation(config: ScenarioConfig, record_commands: bool = False) -> RunResult:
    """Convenience wrapper: build and run one scenario."""
    return Simulation(config, record_commands=record_commands).run()
