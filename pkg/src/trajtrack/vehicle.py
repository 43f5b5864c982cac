"""Kinematic bicycle model with first-order actuator lags.

State ordering is fixed everywhere as x = [s, y, theta, delta, v, alpha]:
longitudinal position, lateral position, heading, steering angle,
longitudinal speed, longitudinal acceleration. Inputs are
u = [delta_in, alpha_in], the commanded steering angle and acceleration.
Both actuators respond with first-order lags (rates lambda1, lambda2).

The module provides the continuous-time derivative, its explicit-Euler
discretization, the discrete LTV linearization about a reference state,
and a perturbed plant variant (saturation, quadratic drag, measurement
noise) used by the closed-loop simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_STATES = 6
N_INPUTS = 2

# State vector indices.
IDX_S, IDX_Y, IDX_THETA, IDX_DELTA, IDX_V, IDX_ALPHA = range(6)


@dataclass(frozen=True)
class VehicleState:
    """Vehicle state [s, y, theta, delta, v, alpha] in SI units."""

    s: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    delta: float = 0.0
    v: float = 0.0
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite vehicle state: {self}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.s, self.y, self.theta, self.delta, self.v, self.alpha]
        )

    @staticmethod
    def from_array(x: np.ndarray) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATES,):
            raise ValueError(f"expected shape ({N_STATES},), got {x.shape}")
        return VehicleState(*x)


@dataclass(frozen=True)
class ControlInput:
    """Control input [delta_in, alpha_in]: commanded steering and acceleration."""

    delta_in: float = 0.0
    alpha_in: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.delta_in) and np.isfinite(self.alpha_in)):
            raise ValueError(f"non-finite control input: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_in, self.alpha_in])

    @staticmethod
    def from_array(u: np.ndarray) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        if u.shape != (N_INPUTS,):
            raise ValueError(f"expected shape ({N_INPUTS},), got {u.shape}")
        return ControlInput(*u)


@dataclass(frozen=True)
class ModelParams:
    """Model parameters.

    wheelbase_L: wheelbase (m). lambda1/lambda2: steering/acceleration lag
    rates (1/s). dt: sample interval (s). beta: blend weight in [0, 1] used
    by the lateral row of the LTV model.
    """

    wheelbase_L: float = 2.85
    lambda1: float = 5.0
    lambda2: float = 5.0
    dt: float = 0.1
    beta: float = 0.5

    def __post_init__(self) -> None:
        if self.wheelbase_L <= 0.0:
            raise ValueError("wheelbase_L must be positive")
        if self.lambda1 <= 0.0 or self.lambda2 <= 0.0:
            raise ValueError("lag rates must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        # Keeps the discrete lag entries 1 - lambda*dt inside (0, 1).
        if self.lambda1 * self.dt >= 1.0 or self.lambda2 * self.dt >= 1.0:
            raise ValueError("lambda * dt must be < 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def with_dt(self, dt: float) -> "ModelParams":
        return ModelParams(self.wheelbase_L, self.lambda1, self.lambda2, dt, self.beta)


@dataclass(frozen=True)
class PlantConfig:
    """Perturbed-plant configuration for closed-loop testing.

    accel_min/accel_max bound the applied acceleration command (powertrain
    saturation). drag_coefficient scales a -c*v^2 term added to v-dot.
    Measurement noise (Gaussian, per-sample) is applied to the delta and
    alpha channels of the measured state. Identical seeds give identical
    noise sequences.
    """

    accel_min: float = -4.0
    accel_max: float = 2.5
    steer_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    drag_coefficient: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.accel_min < 0.0 < self.accel_max:
            raise ValueError("need accel_min < 0 < accel_max")
        if self.steer_noise_std < 0.0 or self.accel_noise_std < 0.0:
            raise ValueError("noise stds must be nonnegative")
        if self.drag_coefficient < 0.0:
            raise ValueError("drag_coefficient must be nonnegative")


def derivative(x: VehicleState, u: ControlInput, p: ModelParams) -> np.ndarray:
    """Continuous-time state derivative of the lagged bicycle model."""
    with np.errstate(invalid="ignore", over="ignore"):
        dx = np.array(
            [
                x.v * np.cos(x.theta),
                x.v * np.sin(x.theta),
                x.v / p.wheelbase_L * np.tan(x.delta),
                -p.lambda1 * x.delta + p.lambda1 * u.delta_in,
                x.alpha,
                -p.lambda2 * x.alpha + p.lambda2 * u.alpha_in,
            ]
        )
    if not np.all(np.isfinite(dx)):
        raise ValueError(
            f"non-finite derivative at delta={x.delta} (steering near +-pi/2?)"
        )
    return dx


def step_nonlinear(x: VehicleState, u: ControlInput, p: ModelParams) -> VehicleState:
    """One explicit-Euler step of the nonlinear model: x + dt * f(x, u)."""
    return VehicleState.from_array(x.as_array() + p.dt * derivative(x, u, p))


def linearize(x_ref: VehicleState, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Discrete LTV matrices (A, B) about a reference state.

    The lateral row blends the heading and speed sensitivities with weight
    beta: A[y, theta] = beta*v*dt and A[y, v] = (1-beta)*sin(theta)*dt.
    The heading row uses the small-angle v*dt/L steering entry. B is
    time-invariant with the two lag gains.
    """
    dt = p.dt
    A = np.eye(N_STATES)
    A[IDX_S, IDX_V] = np.cos(x_ref.theta) * dt
    A[IDX_Y, IDX_THETA] = p.beta * x_ref.v * dt
    A[IDX_Y, IDX_V] = (1.0 - p.beta) * np.sin(x_ref.theta) * dt
    A[IDX_THETA, IDX_DELTA] = x_ref.v * dt / p.wheelbase_L
    A[IDX_DELTA, IDX_DELTA] = 1.0 - p.lambda1 * dt
    A[IDX_V, IDX_ALPHA] = dt
    A[IDX_ALPHA, IDX_ALPHA] = 1.0 - p.lambda2 * dt
    B = np.zeros((N_STATES, N_INPUTS))
    B[IDX_DELTA, 0] = p.lambda1 * dt
    B[IDX_ALPHA, 1] = p.lambda2 * dt
    return A, B


def measure(x: VehicleState, cfg: PlantConfig, rng: np.random.Generator) -> VehicleState:
    """Noisy measurement of a state: Gaussian noise on delta and alpha."""
    z = x.as_array()
    z[IDX_DELTA] += cfg.steer_noise_std * rng.standard_normal()
    z[IDX_ALPHA] += cfg.accel_noise_std * rng.standard_normal()
    return VehicleState.from_array(z)


def step_plant(
    x: VehicleState,
    u: ControlInput,
    p: ModelParams,
    cfg: PlantConfig,
    rng: np.random.Generator,
) -> tuple[VehicleState, VehicleState]:
    """One perturbed-plant step: saturation, quadratic drag, measurement noise.

    Returns (true next state, measured next state). Saturation of the
    acceleration command is silent; it is the disturbance under test.
    """
    alpha_in = min(max(u.alpha_in, cfg.accel_min), cfg.accel_max)
    dx = derivative(x, ControlInput(u.delta_in, alpha_in), p)
    dx[IDX_V] -= cfg.drag_coefficient * x.v * abs(x.v)
    x_next = VehicleState.from_array(x.as_array() + p.dt * dx)
    return x_next, measure(x_next, cfg, rng)


def rollout_nonlinear(x0, input_fn, p: ModelParams, n_steps: int) -> np.ndarray:
    """Euler rollout of the nonlinear model; returns (n_steps+1, 6) states.

    input_fn(t) gives the control at time t; inputs are held over each step.
    """
    states = np.empty((n_steps + 1, N_STATES))
    states[0] = np.asarray(x0, dtype=float)
    x = VehicleState.from_array(states[0])
    for k in range(n_steps):
        x = step_nonlinear(x, input_fn(k * p.dt), p)
        states[k + 1] = x.as_array()
    return states


def rollout_fine(x0, input_fn, p: ModelParams, duration: float, dt_fine: float = 1e-4) -> np.ndarray:
    """Fine-step Euler integration baseline, sampled back at the coarse dt.

    Integrates with step dt_fine (inputs evaluated at each fine step) and
    returns states at the coarse sample times, shape (n_coarse+1, 6).
    """
    n_coarse = int(round(duration / p.dt))
    substeps = int(round(p.dt / dt_fine))
    p_fine = p.with_dt(p.dt / substeps)
    out = np.empty((n_coarse + 1, N_STATES))
    out[0] = np.asarray(x0, dtype=float)
    x = VehicleState.from_array(out[0])
    for k in range(n_coarse):
        for j in range(substeps):
            t = k * p.dt + j * p_fine.dt
            x = step_nonlinear(x, input_fn(t), p_fine)
        out[k + 1] = x.as_array()
    return out


def rollout_ltv(x0, input_fn, p: ModelParams, ref_states: np.ndarray) -> np.ndarray:
    """LTV rollout with A(t) refreshed from the given reference states.

    ref_states has shape (n_steps+1, 6); step k linearizes about row k.
    """
    ref_states = np.asarray(ref_states, dtype=float)
    n_steps = ref_states.shape[0] - 1
    states = np.empty((n_steps + 1, N_STATES))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(n_steps):
        A, B = linearize(VehicleState.from_array(ref_states[k]), p)
        u = input_fn(k * p.dt)
        states[k + 1] = A @ states[k] + B @ u.as_array()
    return states
