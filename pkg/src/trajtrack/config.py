"""Scenario files: strict YAML loading into typed configuration.

A scenario collects model parameters, plant perturbations, weights,
constraint bounds, loop rates, and the reference source (generator
segments or a CSV path). Unknown keys anywhere fail fast with the
section path in the message; diagonal weight entries are expanded to
full matrices on load.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .closed_loop import (
    MODE_RECEDING,
    MODE_SINGLE_SHOT,
    PLANT_IDEAL_LTV,
    PLANT_NONLINEAR,
    RunConfig,
)
from .ffmpc import ConstraintSet, StateBound
from .trajectory import ReferenceTrajectory, Segment, generate_piecewise_reference, load_reference_csv
from .tvlqr import TvlqrWeights
from .vehicle import ModelParams, PlantConfig

STATE_CHANNELS = {"s": 0, "y": 1, "theta": 2, "delta": 3, "v": 4, "alpha": 5}


class ConfigError(ValueError):
    """Malformed or incomplete scenario file."""


def _check_keys(section: Mapping[str, Any], allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {sorted(missing)}")


@dataclass(frozen=True)
class FfSettings:
    q_diag: np.ndarray
    r_diags: tuple[np.ndarray, ...]
    horizon_steps: int


@dataclass(frozen=True)
class RunSettings:
    planner_period: float
    ff_period: float
    fb_period: float
    total_duration: float
    mode: str
    plant_kind: str


@dataclass(frozen=True)
class VerifySettings:
    v0: float
    duration: float
    fine_dt: float
    alpha_amplitude: float
    alpha_period: float
    delta_amplitude: float
    delta_period: float

    def input_fn(self):
        """Commanded inputs as a function of time for the verification run."""
        from .vehicle import ControlInput

        def fn(t: float) -> ControlInput:
            return ControlInput(
                self.delta_amplitude * np.cos(2.0 * np.pi * t / self.delta_period),
                self.alpha_amplitude * np.cos(2.0 * np.pi * t / self.alpha_period),
            )

        return fn


@dataclass(frozen=True)
class Scenario:
    """Typed contents of one scenario file."""

    name: str
    model: ModelParams
    plant: PlantConfig
    constraints: ConstraintSet
    ff: FfSettings | None
    tvlqr_weights: TvlqrWeights | None
    run_settings: RunSettings | None
    segments: tuple[Segment, ...] | None
    reference_csv: Path | None
    verify: VerifySettings | None
    output_dir: Path

    def require(self, attr: str) -> Any:
        value = getattr(self, attr)
        if value is None:
            raise ConfigError(f"scenario '{self.name}' lacks the '{attr}' settings this command needs")
        return value

    def reference(self) -> ReferenceTrajectory:
        if self.segments is not None:
            return generate_piecewise_reference(self.segments, self.model)
        if self.reference_csv is not None:
            return load_reference_csv(self.reference_csv)
        raise ConfigError(f"scenario '{self.name}' defines no reference source")

    def run_config(self, seed: int | None = None, mode: str | None = None) -> RunConfig:
        ff = self.require("ff")
        rs: RunSettings = self.require("run_settings")
        plant = self.plant if seed is None else replace(self.plant, rng_seed=seed)
        return RunConfig(
            reference=self.reference(),
            model=self.model,
            plant=plant,
            ff_q_diag=ff.q_diag,
            ff_r_diags=ff.r_diags,
            constraints=self.constraints,
            tvlqr_weights=self.require("tvlqr_weights"),
            total_duration=rs.total_duration,
            planner_period=rs.planner_period,
            ff_period=rs.ff_period,
            fb_period=rs.fb_period,
            horizon_steps=ff.horizon_steps,
            mode=mode if mode is not None else rs.mode,
            plant_kind=rs.plant_kind,
        )


def _parse_model(raw: Mapping[str, Any]) -> ModelParams:
    _check_keys(raw, {"wheelbase_L", "lambda1", "lambda2", "dt", "beta"}, {"dt"}, "model")
    defaults = ModelParams()
    return ModelParams(
        wheelbase_L=float(raw.get("wheelbase_L", defaults.wheelbase_L)),
        lambda1=float(raw.get("lambda1", defaults.lambda1)),
        lambda2=float(raw.get("lambda2", defaults.lambda2)),
        dt=float(raw["dt"]),
        beta=float(raw.get("beta", defaults.beta)),
    )


def _parse_plant(raw: Mapping[str, Any]) -> PlantConfig:
    allowed = {
        "accel_min", "accel_max", "steer_noise_std", "accel_noise_std",
        "drag_coefficient", "rng_seed",
    }
    _check_keys(raw, allowed, set(), "plant")
    defaults = PlantConfig()
    return PlantConfig(
        accel_min=float(raw.get("accel_min", defaults.accel_min)),
        accel_max=float(raw.get("accel_max", defaults.accel_max)),
        steer_noise_std=float(raw.get("steer_noise_std", 0.0)),
        accel_noise_std=float(raw.get("accel_noise_std", 0.0)),
        drag_coefficient=float(raw.get("drag_coefficient", 0.0)),
        rng_seed=int(raw.get("rng_seed", 0)),
    )


def _parse_constraints(raw: Mapping[str, Any]) -> ConstraintSet:
    _check_keys(raw, {"delta_in", "alpha_in", "state_bounds"}, set(), "constraints")

    def bounds(key: str) -> tuple[float, float]:
        pair = raw.get(key)
        if pair is None:
            return -np.inf, np.inf
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"constraints.{key}: expected [lower, upper]")
        return float(pair[0]), float(pair[1])

    d_lo, d_hi = bounds("delta_in")
    a_lo, a_hi = bounds("alpha_in")
    state_bounds = []
    for i, entry in enumerate(raw.get("state_bounds", []) or []):
        where = f"constraints.state_bounds[{i}]"
        _check_keys(entry, {"channel", "lower", "upper", "steps"}, {"channel"}, where)
        channel = entry["channel"]
        if channel not in STATE_CHANNELS:
            raise ConfigError(f"{where}: unknown channel {channel!r}")
        steps = entry.get("steps")
        state_bounds.append(
            StateBound(
                channel=STATE_CHANNELS[channel],
                lower=float(entry.get("lower", -np.inf)),
                upper=float(entry.get("upper", np.inf)),
                steps=tuple(int(s) for s in steps) if steps is not None else None,
            )
        )
    return ConstraintSet(
        u_min=np.array([d_lo, a_lo]),
        u_max=np.array([d_hi, a_hi]),
        state_bounds=tuple(state_bounds),
    )


def _parse_ff(raw: Mapping[str, Any]) -> FfSettings:
    _check_keys(raw, {"q_diag", "r_diags", "horizon_steps"}, {"q_diag", "r_diags", "horizon_steps"}, "feedforward")
    q = np.asarray(raw["q_diag"], dtype=float)
    r = tuple(np.asarray(rd, dtype=float) for rd in raw["r_diags"])
    if q.shape != (6,):
        raise ConfigError("feedforward.q_diag: expected 6 entries")
    for i, rd in enumerate(r):
        if rd.shape != (2,):
            raise ConfigError(f"feedforward.r_diags[{i}]: expected 2 entries")
    return FfSettings(q, r, int(raw["horizon_steps"]))


def _parse_tvlqr(raw: Mapping[str, Any]) -> TvlqrWeights:
    _check_keys(raw, {"qbar_diag", "rbar_diag", "pbar_diag"}, {"qbar_diag", "rbar_diag"}, "tvlqr")
    qbar = np.asarray(raw["qbar_diag"], dtype=float)
    rbar = np.asarray(raw["rbar_diag"], dtype=float)
    if qbar.shape != (12,):
        raise ConfigError("tvlqr.qbar_diag: expected 12 entries")
    if rbar.shape != (2,):
        raise ConfigError("tvlqr.rbar_diag: expected 2 entries")
    pbar = raw.get("pbar_diag")
    return TvlqrWeights.from_diagonals(
        qbar, rbar, np.asarray(pbar, dtype=float) if pbar is not None else None
    )


def _parse_run(raw: Mapping[str, Any]) -> RunSettings:
    allowed = {"planner_period", "ff_period", "fb_period", "total_duration", "mode", "plant_kind"}
    _check_keys(raw, allowed, {"total_duration"}, "run")
    mode = raw.get("mode", MODE_RECEDING)
    plant_kind = raw.get("plant_kind", PLANT_NONLINEAR)
    if mode not in (MODE_SINGLE_SHOT, MODE_RECEDING):
        raise ConfigError(f"run.mode: expected '{MODE_SINGLE_SHOT}' or '{MODE_RECEDING}'")
    if plant_kind not in (PLANT_NONLINEAR, PLANT_IDEAL_LTV):
        raise ConfigError(f"run.plant_kind: expected '{PLANT_NONLINEAR}' or '{PLANT_IDEAL_LTV}'")
    return RunSettings(
        planner_period=float(raw.get("planner_period", 0.1)),
        ff_period=float(raw.get("ff_period", 0.1)),
        fb_period=float(raw.get("fb_period", 0.02)),
        total_duration=float(raw["total_duration"]),
        mode=mode,
        plant_kind=plant_kind,
    )


def _parse_reference(raw: Mapping[str, Any], base_dir: Path) -> tuple[tuple[Segment, ...] | None, Path | None]:
    _check_keys(raw, {"source", "segments", "csv_path"}, {"source"}, "reference")
    source = raw["source"]
    if source == "segments":
        entries = raw.get("segments")
        if not entries:
            raise ConfigError("reference: source 'segments' needs a segments list")
        segments = []
        for i, entry in enumerate(entries):
            where = f"reference.segments[{i}]"
            _check_keys(entry, {"duration", "speed", "steering"}, {"duration", "speed"}, where)
            segments.append(
                Segment(
                    duration=float(entry["duration"]),
                    speed=float(entry["speed"]),
                    steering=float(entry.get("steering", 0.0)),
                )
            )
        return tuple(segments), None
    if source == "csv":
        path = raw.get("csv_path")
        if not path:
            raise ConfigError("reference: source 'csv' needs csv_path")
        csv_path = Path(path)
        if not csv_path.is_absolute():
            csv_path = base_dir / csv_path
        return None, csv_path
    raise ConfigError(f"reference.source: expected 'segments' or 'csv', got {source!r}")


def _parse_verify(raw: Mapping[str, Any]) -> VerifySettings:
    allowed = {
        "v0", "duration", "fine_dt", "alpha_amplitude", "alpha_period",
        "delta_amplitude", "delta_period",
    }
    _check_keys(raw, allowed, {"duration"}, "verify")
    return VerifySettings(
        v0=float(raw.get("v0", 20.0)),
        duration=float(raw["duration"]),
        fine_dt=float(raw.get("fine_dt", 1e-4)),
        alpha_amplitude=float(raw.get("alpha_amplitude", 2.0)),
        alpha_period=float(raw.get("alpha_period", 10.0)),
        delta_amplitude=float(raw.get("delta_amplitude", 0.2)),
        delta_period=float(raw.get("delta_period", 5.0)),
    )


TOP_LEVEL_KEYS = {
    "model", "plant", "feedforward", "constraints", "tvlqr", "run",
    "reference", "verify", "output_dir",
}


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        _check_keys(raw, TOP_LEVEL_KEYS, {"model"}, "top level")
        model = _parse_model(raw["model"])
        plant = _parse_plant(raw.get("plant", {}))
        constraints = _parse_constraints(raw.get("constraints", {}))
        ff = _parse_ff(raw["feedforward"]) if "feedforward" in raw else None
        weights = _parse_tvlqr(raw["tvlqr"]) if "tvlqr" in raw else None
        run_settings = _parse_run(raw["run"]) if "run" in raw else None
        segments = csv_path = None
        if "reference" in raw:
            segments, csv_path = _parse_reference(raw["reference"], path.parent)
        verify = _parse_verify(raw["verify"]) if "verify" in raw else None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return Scenario(
        name=path.stem,
        model=model,
        plant=plant,
        constraints=constraints,
        ff=ff,
        tvlqr_weights=weights,
        run_settings=run_settings,
        segments=segments,
        reference_csv=csv_path,
        verify=verify,
        output_dir=Path(raw.get("output_dir", "out")),
    )
