"""Multi-rate closed-loop runner for the feedback-feedforward scheme.

Three nested periods drive the loop: the planner period (trajectory
optimization and gain-schedule refresh), the feedforward sample period
(the trajectory/model discretization step), and the fast feedback tick.
Between planner updates the stored feedforward sequence is consumed
sample by sample; no program is solved at the feedback rate. At every
tick the total input is the zero-order-held feedforward sample plus the
TVLQR feedback on the measured tracking error against the nominal
trajectory.

Division of labor: the trajectory optimization smooths the reference
and the TVLQR rejects disturbances. Re-plans therefore anchor to the
previous plan's predicted nominal state at the re-plan instant, never
to the measured state; feeding measurements into the planner would turn
it into a second feedback loop acting through the reference model,
whose blended lateral row deliberately underestimates the heading
sensitivity and would over-correct every cycle. Only the first plan of
a run starts from the (measured) initial state.

The plant is either the perturbed nonlinear model stepped at the tick
rate, or an ideal LTV verification plant that replays the exact model
used by the optimizer (in which case the feedforward inverts the plant
and tracking error stays at numerical noise).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ffmpc import ConstraintSet, FfWeights, InputHistory, optimize_trajectory
from .qp import Infeasible
from .trajectory import ReferenceTrajectory, augment_reference
from .tvlqr import (
    ErrorState,
    GainSchedule,
    TvlqrWeights,
    augment_dynamics,
    error_jacobian,
    feedback,
    riccati_gains,
)
from .vehicle import (
    IDX_S,
    IDX_THETA,
    IDX_V,
    IDX_Y,
    ControlInput,
    ModelParams,
    N_INPUTS,
    N_STATES,
    PlantConfig,
    VehicleState,
    linearize,
    measure,
    step_plant,
)

MODE_SINGLE_SHOT = "single-shot"
MODE_RECEDING = "receding"
PLANT_NONLINEAR = "nonlinear"
PLANT_IDEAL_LTV = "ideal-ltv"


def _is_multiple(big: float, small: float) -> bool:
    ratio = big / small
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


@dataclass(frozen=True)
class RunConfig:
    """Everything one closed-loop run needs.

    `reference` is the saved planner trajectory for the whole run. In
    single-shot mode it is optimized once at t = 0; in receding mode a
    window of `horizon_steps` (clamped near the end) is re-optimized at
    every planner period from the current measured state.
    """

    reference: ReferenceTrajectory
    model: ModelParams
    plant: PlantConfig
    ff_q_diag: np.ndarray
    ff_r_diags: tuple[np.ndarray, ...]
    constraints: ConstraintSet
    tvlqr_weights: TvlqrWeights
    total_duration: float
    planner_period: float = 0.1
    ff_period: float = 0.1
    fb_period: float = 0.02
    horizon_steps: int = 50
    mode: str = MODE_RECEDING
    plant_kind: str = PLANT_NONLINEAR
    integrator_C: np.ndarray = field(default_factory=lambda: np.eye(N_STATES))
    x0: VehicleState | None = None
    # Default tick rule holds nominal sample and gain; interpolation kills
    # the intra-sample staleness at the cost of off-schedule targets.
    interpolate_nominal: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "ff_q_diag", np.asarray(self.ff_q_diag, dtype=float))
        object.__setattr__(
            self, "ff_r_diags", tuple(np.asarray(r, dtype=float) for r in self.ff_r_diags)
        )
        object.__setattr__(self, "integrator_C", np.asarray(self.integrator_C, dtype=float))
        if self.mode not in (MODE_SINGLE_SHOT, MODE_RECEDING):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.plant_kind not in (PLANT_NONLINEAR, PLANT_IDEAL_LTV):
            raise ValueError(f"unknown plant kind {self.plant_kind!r}")
        if min(self.fb_period, self.ff_period, self.planner_period) <= 0.0:
            raise ValueError("periods must be positive")
        if not _is_multiple(self.ff_period, self.fb_period):
            raise ValueError("fb_period must divide ff_period")
        if not _is_multiple(self.planner_period, self.ff_period):
            raise ValueError("ff_period must divide planner_period")
        if abs(self.model.dt - self.ff_period) > 1e-12:
            raise ValueError("model dt must equal ff_period")
        if abs(self.reference.dt - self.ff_period) > 1e-12:
            raise ValueError("reference spacing must equal ff_period")
        if self.total_duration <= 0.0 or not _is_multiple(self.total_duration, self.fb_period):
            raise ValueError("total_duration must be a positive multiple of fb_period")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.reference.horizon * self.ff_period < self.total_duration - 1e-9:
            raise ValueError("reference does not cover total_duration")

    def publication_schedule(self) -> list[tuple[int, ReferenceTrajectory]]:
        """(tick index, reference window) pairs for every planner update."""
        ticks_per_plan = int(round(self.planner_period / self.fb_period))
        n_ticks = int(round(self.total_duration / self.fb_period))
        if self.mode == MODE_SINGLE_SHOT:
            return [(0, self.reference)]
        ff_per_plan = int(round(self.planner_period / self.ff_period))
        schedule = []
        for tick in range(0, n_ticks, ticks_per_plan):
            start = (tick // ticks_per_plan) * ff_per_plan
            horizon = min(self.horizon_steps, self.reference.horizon - start)
            schedule.append((tick, self.reference.window(start, horizon)))
        return schedule


@dataclass(frozen=True)
class RunLog:
    """Per-tick and per-planner-update records of one closed-loop run.

    `plan_wall_ms` is a wall-clock diagnostic and is deliberately kept out
    of CSV artifacts so identical seeds produce bit-identical files.
    """

    time: np.ndarray
    x_true: np.ndarray
    x_meas: np.ndarray
    x_nominal: np.ndarray
    z_tilde: np.ndarray
    u_ff: np.ndarray
    u_fb: np.ndarray
    u_total: np.ndarray
    saturated: np.ndarray
    plan_time: np.ndarray
    plan_objective: np.ndarray
    plan_iterations: np.ndarray
    plan_active: np.ndarray
    plan_wall_ms: np.ndarray

    @property
    def n_ticks(self) -> int:
        return self.time.shape[0]


@dataclass(frozen=True)
class TrackingMetrics:
    """Per-channel tracking-error summaries plus input smoothness."""

    s_max: float
    s_rms: float
    y_max: float
    y_rms: float
    theta_max: float
    theta_rms: float
    v_max: float
    v_rms: float
    input_delta_rms: float

    def as_dict(self) -> dict[str, float]:
        return {
            "s_max": self.s_max,
            "s_rms": self.s_rms,
            "y_max": self.y_max,
            "y_rms": self.y_rms,
            "theta_max": self.theta_max,
            "theta_rms": self.theta_rms,
            "v_max": self.v_max,
            "v_rms": self.v_rms,
            "input_delta_rms": self.input_delta_rms,
        }


@dataclass
class _ActivePlan:
    """The currently tracked plan plus everything the tick path reads."""

    start_tick: int
    tau_ring: np.ndarray
    u_ff: np.ndarray
    gains: GainSchedule
    ltv_A_seq: list[np.ndarray]
    B: np.ndarray


def _plan_and_gains(
    cfg: RunConfig,
    window: ReferenceTrajectory,
    x0: VehicleState,
    hist: InputHistory,
    weights_cache: dict[int, FfWeights],
    start_tick: int,
) -> tuple[_ActivePlan, tuple[float, int, int, float]]:
    n_steps = window.horizon
    if n_steps not in weights_cache:
        weights_cache[n_steps] = FfWeights.from_diagonals(
            cfg.ff_q_diag, cfg.ff_r_diags, n_steps
        )
    t_solve = time.perf_counter()
    try:
        plan = optimize_trajectory(
            window, x0, weights_cache[n_steps], cfg.constraints, cfg.model, hist
        )
    except Infeasible as exc:
        raise Infeasible(
            f"trajectory optimization infeasible at t={start_tick * cfg.fb_period:.3f}s: {exc}"
        ) from exc
    wall_ms = (time.perf_counter() - t_solve) * 1e3

    # Feedback linearization about the nominal states; reference-model
    # linearization about the augmented reference (two distinct points).
    _, B = linearize(VehicleState(), cfg.model)
    A_aug_seq = []
    for k in range(n_steps):
        A_fb = error_jacobian(VehicleState.from_array(plan.nominal.tau_ring[k]), cfg.model)
        A_aug, _ = augment_dynamics(A_fb, B, cfg.integrator_C)
        A_aug_seq.append(A_aug)
    _, B_aug = augment_dynamics(np.eye(N_STATES), B, cfg.integrator_C)
    gains = riccati_gains(A_aug_seq, B_aug, cfg.tvlqr_weights)

    tau_hat = augment_reference(window)
    ltv_A_seq = [
        linearize(VehicleState.from_array(tau_hat.tau_hat[k]), cfg.model)[0]
        for k in range(n_steps)
    ]
    active = _ActivePlan(
        start_tick=start_tick,
        tau_ring=plan.nominal.tau_ring,
        u_ff=plan.nominal.u_ff,
        gains=gains,
        ltv_A_seq=ltv_A_seq,
        B=B,
    )
    stats = (plan.objective, plan.qp_stats.iterations, plan.qp_stats.n_active, wall_ms)
    return active, stats


def run(cfg: RunConfig) -> RunLog:
    """Execute the closed loop and return the full log.

    Raises `Infeasible` (with the simulation timestamp) if any planner
    update fails; the run aborts at that point.
    """
    rng = np.random.default_rng(cfg.plant.rng_seed)
    n_ticks = int(round(cfg.total_duration / cfg.fb_period))
    ticks_per_ff = int(round(cfg.ff_period / cfg.fb_period))
    schedule = dict(cfg.publication_schedule())
    weights_cache: dict[int, FfWeights] = {}
    fb_model = cfg.model.with_dt(cfg.fb_period)
    integrator_gain = cfg.fb_period / cfg.ff_period

    if cfg.x0 is not None:
        x_true = cfg.x0
    else:
        x_true = VehicleState.from_array(augment_reference(cfg.reference).tau_hat[0])
    if cfg.plant_kind == PLANT_NONLINEAR:
        x_meas = measure(x_true, cfg.plant, rng)
    else:
        x_meas = x_true

    t_log = np.empty(n_ticks)
    x_true_log = np.empty((n_ticks, N_STATES))
    x_meas_log = np.empty((n_ticks, N_STATES))
    x_nom_log = np.empty((n_ticks, N_STATES))
    z_log = np.empty((n_ticks, 2 * N_STATES))
    u_ff_log = np.empty((n_ticks, N_INPUTS))
    u_fb_log = np.empty((n_ticks, N_INPUTS))
    u_log = np.empty((n_ticks, N_INPUTS))
    sat_log = np.zeros(n_ticks, dtype=bool)
    plan_records: list[tuple[float, float, int, int, float]] = []

    plan: _ActivePlan | None = None
    v_tilde = np.zeros(N_STATES)
    last_uff: np.ndarray | None = None

    for i in range(n_ticks):
        t = i * cfg.fb_period
        if i in schedule:
            if plan is None:
                x0_plan = x_meas
            else:
                j_prev = min(
                    (i - plan.start_tick) // ticks_per_ff, plan.u_ff.shape[0]
                )
                x0_plan = VehicleState.from_array(plan.tau_ring[j_prev])
            hist = (
                InputHistory.from_last_input(last_uff)
                if last_uff is not None
                else InputHistory.cold_start()
            )
            plan, stats = _plan_and_gains(
                cfg, schedule[i], x0_plan, hist, weights_cache, i
            )
            plan_records.append((t, *stats))
            v_tilde = np.zeros(N_STATES)  # anti-windup across re-plans

        assert plan is not None
        ticks_in = i - plan.start_tick
        j = min(ticks_in // ticks_per_ff, plan.u_ff.shape[0] - 1)
        if cfg.interpolate_nominal:
            frac = (ticks_in - j * ticks_per_ff) / ticks_per_ff
            x_hat = (1.0 - frac) * plan.tau_ring[j] + frac * plan.tau_ring[j + 1]
            K = (1.0 - frac) * plan.gains.gains[j] + frac * plan.gains.gains[
                min(j + 1, plan.u_ff.shape[0] - 1)
            ]
        else:
            x_hat = plan.tau_ring[j]
            K = plan.gains.gains[j]
        u_ff = plan.u_ff[j]
        last_uff = u_ff

        x_tilde = x_meas.as_array() - x_hat
        z = ErrorState(x_tilde, v_tilde)
        u_fb = feedback(K, z)
        u = ControlInput(u_ff[0] + u_fb.delta_in, u_ff[1] + u_fb.alpha_in)

        t_log[i] = t
        x_true_log[i] = x_true.as_array()
        x_meas_log[i] = x_meas.as_array()
        x_nom_log[i] = x_hat
        z_log[i] = z.stacked()
        u_ff_log[i] = u_ff
        u_fb_log[i] = u_fb.as_array()
        u_log[i] = u.as_array()

        if cfg.plant_kind == PLANT_NONLINEAR:
            sat_log[i] = not (cfg.plant.accel_min <= u.alpha_in <= cfg.plant.accel_max)
            x_true, x_meas = step_plant(x_true, u, fb_model, cfg.plant, rng)
        else:
            if (i + 1 - plan.start_tick) % ticks_per_ff == 0:
                x_next = plan.ltv_A_seq[j] @ x_true.as_array() + plan.B @ u.as_array()
                x_true = VehicleState.from_array(x_next)
            x_meas = x_true

        v_tilde = v_tilde + integrator_gain * (cfg.integrator_C @ x_tilde)

    if plan_records:
        pt, po, pi, pa, pw = (np.asarray(col) for col in zip(*plan_records))
    else:
        pt, po, pw = np.zeros(0), np.zeros(0), np.zeros(0)
        pi, pa = np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return RunLog(
        time=t_log,
        x_true=x_true_log,
        x_meas=x_meas_log,
        x_nominal=x_nom_log,
        z_tilde=z_log,
        u_ff=u_ff_log,
        u_fb=u_fb_log,
        u_total=u_log,
        saturated=sat_log,
        plan_time=pt,
        plan_objective=po,
        plan_iterations=pi.astype(int),
        plan_active=pa.astype(int),
        plan_wall_ms=pw,
    )


def input_smoothness(u_seq: np.ndarray) -> float:
    """RMS of the consecutive-difference norms of an input sequence."""
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.shape[0] < 2:
        return 0.0
    du = np.diff(u_seq, axis=0)
    return float(np.sqrt(np.mean(np.sum(du * du, axis=1))))


def compute_metrics(log: RunLog) -> TrackingMetrics:
    """Tracking-error summaries of a run, measured against the nominal."""
    if log.n_ticks == 0:
        raise ValueError("empty run log")
    err = log.x_true - log.x_nominal
    channels = {"s": IDX_S, "y": IDX_Y, "theta": IDX_THETA, "v": IDX_V}
    values = {}
    for name, idx in channels.items():
        col = err[:, idx]
        values[f"{name}_max"] = float(np.max(np.abs(col)))
        values[f"{name}_rms"] = float(np.sqrt(np.mean(col * col)))
    return TrackingMetrics(input_delta_rms=input_smoothness(log.u_total), **values)
