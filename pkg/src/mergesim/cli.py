"""Command-line interface: single runs, parameter sweeps, and validation.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments.
Unspecified keys take the canonical defaults (10 km loop, 400 m ramp,
100 km/h desired velocity, 1.5 s headway, 1 m/s² acceleration, 3 m/s²
deceleration, 2 m minimum gap, 0.1 s timestep).  All outputs are
deterministic functions of the resolved config, byte for byte.

Exit codes: 0 success, 2 configuration error, 3 collision abort,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .engine import CollisionError, RunResult, run_simulation
from .strategies import StrategyKind
from .traffic import (
    MAX_RAMP_RATE,
    MAX_SENSOR_NOISE_PCT,
    ArrivalProcess,
    ScenarioConfig,
)
from .validate import run_all
from .world import RoadNetwork

__all__ = [
    "ConfigError",
    "SweepSpec",
    "RunArtifact",
    "parse_config",
    "load_config",
    "run_scenario",
    "run_sweep",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLISION = 3
EXIT_VALIDATION = 4

FRAME_COLUMNS = (
    "t", "n_main", "n_ramp", "ramp_queue", "merged_total",
    "density", "mean_velocity", "flow", "mean_abs_accel", "hard_decel_events",
)
EVENT_COLUMNS = ("car_id", "spawn_t", "decision_t", "merge_t", "entry_v", "merge_v")

SWEEPABLE_KEYS = (
    "main_density_per_km",
    "ramp_rate_per_min",
    "decision_offset_m",
    "ramp_length_m",
)

# Fill count used for the headline latency column in sweep tables.
TABLE_FILL_COUNT = 100


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    """One-dimensional experiment: exactly one parameter varies."""

    base: ScenarioConfig
    varied_parameter: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.varied_parameter not in SWEEPABLE_KEYS:
            raise ConfigError(
                f"cannot sweep {self.varied_parameter!r}; "
                f"choose one of: {', '.join(SWEEPABLE_KEYS)}"
            )
        if not self.values:
            raise ConfigError("sweep needs at least one value")


@dataclass(frozen=True)
class RunArtifact:
    config: dict
    frames_csv: Path
    events_csv: Path
    summary_path: Path


# ── config file parsing ──────────────────────────────────────────────


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse a flat key = value config document into a scenario."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    known = {
        "loop_length_m", "ramp_length_m", "merge_section_m", "decision_offset_m",
        "main_density_per_km", "ramp_rate_per_min", "arrival_process", "strategy",
        "seed", "dt_s", "duration_s", "sensor_noise_pct", "neighbor_limit",
        "neighbor_range_m", "sliding_decision", "vehicle_length_m",
        "entry_velocity_kmh",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")

    defaults = ScenarioConfig()
    net = defaults.network
    loop = _parse_float("loop_length_m", raw["loop_length_m"]) if "loop_length_m" in raw else net.loop_length
    ramp = _parse_float("ramp_length_m", raw["ramp_length_m"]) if "ramp_length_m" in raw else net.ramp_length
    section = _parse_float("merge_section_m", raw["merge_section_m"]) if "merge_section_m" in raw else net.merge_section
    offset = _parse_float("decision_offset_m", raw["decision_offset_m"]) if "decision_offset_m" in raw else net.decision_offset

    try:
        network = RoadNetwork(
            loop_length=loop,
            ramp_length=ramp,
            merge_start=0.0,
            merge_end=section,
            decision_offset=offset,
        )
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from None

    kwargs: dict = {"network": network}
    if "main_density_per_km" in raw:
        density = _parse_float("main_density_per_km", raw["main_density_per_km"])
        if density < 0:
            raise ConfigError("main_density_per_km: must be nonnegative")
        kwargs["main_density"] = density
    if "ramp_rate_per_min" in raw:
        rate = _parse_float("ramp_rate_per_min", raw["ramp_rate_per_min"])
        if not (0 <= rate <= MAX_RAMP_RATE):
            raise ConfigError(
                f"ramp_rate_per_min: {rate} exceeds the {MAX_RAMP_RATE:.0f}/min ramp capability"
                if rate > MAX_RAMP_RATE else "ramp_rate_per_min: must be nonnegative"
            )
        kwargs["ramp_rate"] = rate
    if "arrival_process" in raw:
        value = raw["arrival_process"].lower()
        try:
            kwargs["arrival_process"] = ArrivalProcess(value)
        except ValueError:
            raise ConfigError(
                f"arrival_process: expected constant or poisson, got {raw['arrival_process']!r}"
            ) from None
    if "strategy" in raw:
        try:
            kwargs["strategy"] = StrategyKind.from_name(raw["strategy"].lower())
        except ValueError as exc:
            raise ConfigError(f"strategy: {exc}") from None
    if "seed" in raw:
        kwargs["seed"] = _parse_int("seed", raw["seed"])
    if "dt_s" in raw:
        dt = _parse_float("dt_s", raw["dt_s"])
        if dt <= 0:
            raise ConfigError("dt_s: must be positive")
        kwargs["dt"] = dt
    if "duration_s" in raw:
        duration = _parse_float("duration_s", raw["duration_s"])
        if duration < 0:
            raise ConfigError("duration_s: must be nonnegative")
        kwargs["duration"] = duration
    if "sensor_noise_pct" in raw:
        pct = _parse_float("sensor_noise_pct", raw["sensor_noise_pct"])
        if not (0 <= pct <= MAX_SENSOR_NOISE_PCT):
            raise ConfigError(
                f"sensor_noise_pct: must be within [0, {MAX_SENSOR_NOISE_PCT:.0f}]"
            )
        kwargs["sensor_noise_pct"] = pct
    if "neighbor_limit" in raw:
        limit = _parse_int("neighbor_limit", raw["neighbor_limit"])
        if limit < 1:
            raise ConfigError("neighbor_limit: must be at least 1")
        kwargs["neighbor_limit"] = limit
    if "neighbor_range_m" in raw:
        rng = _parse_float("neighbor_range_m", raw["neighbor_range_m"])
        if rng <= 0:
            raise ConfigError("neighbor_range_m: must be positive")
        kwargs["neighbor_range"] = rng
    if "sliding_decision" in raw:
        kwargs["sliding_decision"] = _parse_bool("sliding_decision", raw["sliding_decision"])
    if "vehicle_length_m" in raw:
        length = _parse_float("vehicle_length_m", raw["vehicle_length_m"])
        if length <= 0:
            raise ConfigError("vehicle_length_m: must be positive")
        kwargs["vehicle_length"] = length
    if "entry_velocity_kmh" in raw:
        kwargs["entry_velocity"] = _parse_float("entry_velocity_kmh", raw["entry_velocity_kmh"]) / 3.6

    try:
        return ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_as_dict(config: ScenarioConfig) -> dict:
    """Resolved config echo written into every summary."""
    return {
        "loop_length_m": config.network.loop_length,
        "ramp_length_m": config.network.ramp_length,
        "merge_section_m": config.network.merge_section,
        "decision_offset_m": config.network.decision_offset,
        "main_density_per_km": config.main_density,
        "ramp_rate_per_min": config.ramp_rate,
        "arrival_process": config.arrival_process.value,
        "strategy": config.strategy.value,
        "seed": config.seed,
        "dt_s": config.dt,
        "duration_s": config.duration,
        "sensor_noise_pct": config.sensor_noise_pct,
        "neighbor_limit": config.neighbor_limit,
        "neighbor_range_m": config.neighbor_range,
        "sliding_decision": config.sliding_decision,
        "vehicle_length_m": config.vehicle_length,
        "entry_velocity_kmh": config.entry_velocity * 3.6,
    }


# ── artifact writing ─────────────────────────────────────────────────


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_frames_csv(result: RunResult, path: Path) -> None:
    lines = [",".join(FRAME_COLUMNS)]
    for f in result.frames:
        lines.append(",".join(_fmt(getattr(f, col)) for col in FRAME_COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_events_csv(result: RunResult, path: Path) -> None:
    lines = [",".join(EVENT_COLUMNS)]
    for e in result.events:
        lines.append(",".join(_fmt(getattr(e, col)) for col in EVENT_COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_summary(result: RunResult, path: Path) -> None:
    payload = {
        "config": config_as_dict(result.config),
        "summary": result.summary.as_dict(),
    }
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
        encoding="utf-8", newline="\n",
    )


def write_artifacts(result: RunResult, out_dir: str | Path) -> RunArtifact:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifact = RunArtifact(
        config=config_as_dict(result.config),
        frames_csv=out / "frames.csv",
        events_csv=out / "events.csv",
        summary_path=out / "summary.json",
    )
    write_frames_csv(result, artifact.frames_csv)
    write_events_csv(result, artifact.events_csv)
    write_summary(result, artifact.summary_path)
    return artifact


def run_scenario(config: ScenarioConfig, out_dir: str | Path) -> RunArtifact:
    """Run one scenario and write frames, events, and summary under out_dir.

    Collisions propagate as :class:`CollisionError`; partial artifacts are
    not written.
    """
    return write_artifacts(run_simulation(config), out_dir)


# ── sweeps ───────────────────────────────────────────────────────────


def _apply_sweep_value(base: ScenarioConfig, key: str, value: float) -> ScenarioConfig:
    if key == "main_density_per_km":
        return base.with_(main_density=value)
    if key == "ramp_rate_per_min":
        return base.with_(ramp_rate=value)
    if key == "decision_offset_m":
        return base.with_(network=replace(base.network, decision_offset=value))
    if key == "ramp_length_m":
        net = base.network
        return base.with_(network=replace(net, ramp_length=value))
    raise ConfigError(f"cannot sweep {key!r}")


def run_sweep(spec: SweepSpec, out_dir: str | Path) -> list[dict]:
    """One run per value per strategy, all with the base seed.

    Returns the comparison rows and writes per-run artifacts plus a
    ``sweep_summary.csv`` under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for value in spec.values:
        for strategy in StrategyKind:
            config = _apply_sweep_value(spec.base, spec.varied_parameter, value)
            config = config.with_(strategy=strategy)
            cell_dir = out / f"{spec.varied_parameter}={value:g}" / strategy.value
            result = run_simulation(config)
            write_artifacts(result, cell_dir)
            rows.append(
                {
                    "varied_parameter": spec.varied_parameter,
                    "value": value,
                    "strategy": strategy.value,
                    "merged_total": result.summary.total_throughput,
                    f"latency_fill_{TABLE_FILL_COUNT}":
                        result.summary.latency_to_fill.get(TABLE_FILL_COUNT),
                    "mean_flow": result.summary.mean_flow_overall,
                    "mean_velocity": result.summary.mean_velocity_overall,
                    "mean_abs_accel": result.summary.mean_abs_accel_overall,
                }
            )
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in header))
    (out / "sweep_summary.csv").write_text(
        "\n".join(lines) + "\n", encoding="utf-8", newline="\n"
    )
    return rows


def _print_sweep_table(rows: list[dict]) -> None:
    header = list(rows[0].keys())
    widths = [max(len(h), max(len(_fmt(r[h])[:12]) for r in rows)) for h in header]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in rows:
        print("  ".join(_fmt(row[h])[:12].ljust(w) for h, w in zip(header, widths)))


# ── entry point ──────────────────────────────────────────────────────


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergesim",
        description="Ring-road on-ramp merging strategy simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--strategy", metavar="NAME",
                       help="priority | distance | velocity | proactive_velocity")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--duration-s", type=float, metavar="F", dest="duration_s")

    run_p = sub.add_parser("run", help="run one scenario and write CSV artifacts")
    add_common(run_p)
    run_p.add_argument("--out", metavar="DIR", default="out", help="output directory")

    sweep_p = sub.add_parser("sweep", help="vary one parameter across all strategies")
    add_common(sweep_p)
    sweep_p.add_argument("--out", metavar="DIR", default="out")
    sweep_p.add_argument("--vary", metavar="KEY", required=True,
                         help=" | ".join(SWEEPABLE_KEYS))
    sweep_p.add_argument("--values", metavar="LIST", required=True,
                         help="comma-separated values")

    val_p = sub.add_parser("validate", help="run the invariant suites")
    add_common(val_p)
    return parser


def _resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    config = load_config(args.config)
    if args.strategy:
        config = config.with_(strategy=StrategyKind.from_name(args.strategy))
    if args.seed is not None:
        config = config.with_(seed=args.seed)
    if args.duration_s is not None:
        config = config.with_(duration=args.duration_s)
    return config


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        try:
            artifact = run_scenario(config, args.out)
        except CollisionError as exc:
            print(f"aborted: {exc}", file=sys.stderr)
            return EXIT_COLLISION
        print(f"frames:  {artifact.frames_csv}")
        print(f"events:  {artifact.events_csv}")
        print(f"summary: {artifact.summary_path}")
        return EXIT_OK

    if args.command == "sweep":
        try:
            values = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            print("config error: --values must be comma-separated numbers", file=sys.stderr)
            return EXIT_CONFIG
        try:
            spec = SweepSpec(base=config, varied_parameter=args.vary, values=values)
            rows = run_sweep(spec, args.out)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except CollisionError as exc:
            print(f"aborted: {exc}", file=sys.stderr)
            return EXIT_COLLISION
        _print_sweep_table(rows)
        return EXIT_OK

    if args.command == "validate":
        results = run_all(config)
        ok = True
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            print(f"{status}  {r.name}: {r.detail}")
            ok = ok and r.passed
        return EXIT_OK if ok else EXIT_VALIDATION

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
