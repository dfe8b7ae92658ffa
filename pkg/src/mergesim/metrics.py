"""Evaluation metrics: latency, throughput, flow, and acceleration impact.

Latency-to-fill is the simulated time until a given cumulative number of
ramp cars has completed merging (how quickly the loop absorbs demand).
Throughput counts completed merges over a window.  Flow is the definitional
product of main-road density and space-mean velocity.  The acceleration
statistics proxy fuel consumption and passenger comfort: time-weighted mean
command magnitude over main-loop cars plus a count of hard decelerations.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right, insort
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "HARD_DECEL_THRESHOLD",
    "MetricsFrame",
    "RunSummary",
    "AccelAccumulator",
    "latency_to_fill",
    "throughput",
    "flow",
    "accel_stats",
    "summarize",
]

HARD_DECEL_THRESHOLD = -2.0  # m/s²; between comfortable braking and the clamp

FILL_LADDER = (1, 2, 5, 10, 20, 50, 100, 150, 200, 300)


@dataclass(frozen=True)
class MetricsFrame:
    """One sampling instant of the running simulation."""

    t: float
    n_main: int
    n_ramp: int
    ramp_queue: int
    merged_total: int
    density: float          # cars/m over the main loop
    mean_velocity: float    # space mean over main-loop cars, m/s
    flow: float             # cars/s, exactly density * mean_velocity
    mean_abs_accel: float   # mean |command| over main-loop cars, m/s²
    hard_decel_events: int  # cumulative

    @classmethod
    def capture(
        cls,
        t: float,
        loop_length: float,
        n_main: int,
        n_ramp: int,
        ramp_queue: int,
        merged_total: int,
        mean_velocity: float,
        mean_abs_accel: float,
        hard_decel_events: int,
    ) -> "MetricsFrame":
        density = n_main / loop_length
        return cls(
            t=t,
            n_main=n_main,
            n_ramp=n_ramp,
            ramp_queue=ramp_queue,
            merged_total=merged_total,
            density=density,
            mean_velocity=mean_velocity,
            flow=flow(n_main, loop_length, mean_velocity),
            mean_abs_accel=mean_abs_accel,
            hard_decel_events=hard_decel_events,
        )


def flow(n_main: int, loop_length: float, mean_velocity: float) -> float:
    """Traffic flow in cars/s: density times space-mean velocity."""
    if n_main == 0:
        return 0.0
    return (n_main / loop_length) * mean_velocity


def latency_to_fill(merge_times: Sequence[float], n: int) -> float | None:
    """Time at which the cumulative merge count first reaches ``n``.

    ``merge_times`` must be sorted ascending.  Returns None when the run
    never absorbed that many cars; ``n = 0`` is vacuously filled at t = 0.
    """
    if n < 0:
        raise ValueError("fill count must be nonnegative")
    if n == 0:
        return 0.0
    if n > len(merge_times):
        return None
    return merge_times[n - 1]


def throughput(merge_times: Sequence[float], t0: float, t1: float) -> int:
    """Completed merges inside the half-open window ``[t0, t1)``.

    Half-open windows make counts additive over adjacent windows.
    ``merge_times`` must be sorted ascending.
    """
    if t0 > t1:
        raise ValueError("window start must not exceed its end")
    return bisect_left(merge_times, t1) - bisect_left(merge_times, t0)


class AccelAccumulator:
    """Running acceleration-impact statistics over main-loop commands."""

    def __init__(self) -> None:
        self.weighted_abs_sum = 0.0
        self.weight = 0.0
        self.hard_decel_events = 0

    def add_step(self, dt: float, commands: Iterable[float]) -> None:
        for a in commands:
            self.weighted_abs_sum += abs(a) * dt
            self.weight += dt
            if a <= HARD_DECEL_THRESHOLD:
                self.hard_decel_events += 1

    @property
    def mean_abs(self) -> float:
        if self.weight == 0:
            return 0.0
        return self.weighted_abs_sum / self.weight


def accel_stats(command_log: Iterable[tuple[float, Sequence[float]]]) -> tuple[float, int]:
    """Aggregate a command log of ``(dt, per-car commands)`` steps.

    Returns the time-weighted mean command magnitude and the count of
    commands at or below the hard-deceleration threshold.
    """
    acc = AccelAccumulator()
    for dt, commands in command_log:
        acc.add_step(dt, commands)
    return acc.mean_abs, acc.hard_decel_events


@dataclass
class RunSummary:
    latency_to_fill: dict[int, float | None] = field(default_factory=dict)
    total_throughput: int = 0
    peak_flow: float = 0.0
    time_above_20ms: float = 0.0
    mean_abs_accel_overall: float = 0.0
    hard_decel_events: int = 0
    per_car_ramp_transit: list[float] = field(default_factory=list)
    final_mean_velocity: float = 0.0
    mean_velocity_overall: float = 0.0
    mean_flow_overall: float = 0.0
    ramp_queue_peak: int = 0

    def as_dict(self) -> dict:
        return {
            "latency_to_fill": {str(k): v for k, v in self.latency_to_fill.items()},
            "total_throughput": self.total_throughput,
            "peak_flow": self.peak_flow,
            "time_above_20ms": self.time_above_20ms,
            "mean_abs_accel_overall": self.mean_abs_accel_overall,
            "hard_decel_events": self.hard_decel_events,
            "per_car_ramp_transit": self.per_car_ramp_transit,
            "final_mean_velocity": self.final_mean_velocity,
            "mean_velocity_overall": self.mean_velocity_overall,
            "mean_flow_overall": self.mean_flow_overall,
            "ramp_queue_peak": self.ramp_queue_peak,
        }


def summarize(
    frames: Sequence[MetricsFrame],
    merge_times: Sequence[float],
    transit_times: Sequence[float],
    mean_abs_accel: float,
    hard_decel_events: int,
    metrics_interval: float,
) -> RunSummary:
    """Condense a run's frames and merge events into headline numbers."""
    ladder = {n: latency_to_fill(merge_times, n) for n in FILL_LADDER}
    summary = RunSummary(
        latency_to_fill=ladder,
        total_throughput=len(merge_times),
        mean_abs_accel_overall=mean_abs_accel,
        hard_decel_events=hard_decel_events,
        per_car_ramp_transit=list(transit_times),
    )
    if frames:
        summary.peak_flow = max(f.flow for f in frames)
        summary.time_above_20ms = metrics_interval * sum(
            1 for f in frames if f.mean_velocity > 20.0
        )
        summary.final_mean_velocity = frames[-1].mean_velocity
        summary.mean_velocity_overall = sum(f.mean_velocity for f in frames) / len(frames)
        summary.mean_flow_overall = sum(f.flow for f in frames) / len(frames)
        summary.ramp_queue_peak = max(f.ramp_queue for f in frames)
    return summary
