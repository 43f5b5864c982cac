"""Finite-horizon time-varying LQR on the augmented tracking error.

The error state stacks the raw tracking error with a running integrator
of it (12 dimensions total). Gains come from the standard backward
Riccati recursion over the linearized error dynamics along the nominal
trajectory; the resulting schedule is an immutable value the closed-loop
runner reads tick by tick.

Unlike the feedforward model, the error Jacobian here is the exact
derivative of the Euler-discretized nonlinear map (no blend weight, full
trigonometric terms), evaluated at nominal states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import qp
from .vehicle import (
    IDX_ALPHA,
    IDX_DELTA,
    IDX_S,
    IDX_THETA,
    IDX_V,
    IDX_Y,
    ControlInput,
    ModelParams,
    N_INPUTS,
    N_STATES,
    VehicleState,
)

N_AUG = 2 * N_STATES


class SingularInnerMatrix(RuntimeError):
    """R + B'PB lost invertibility; impossible for valid weights."""


@dataclass(frozen=True)
class ErrorState:
    """Tracking error and its integrator, stacked to 12 dimensions."""

    x_tilde: np.ndarray
    v_tilde: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x_tilde, dtype=float).reshape(N_STATES)
        v = np.asarray(self.v_tilde, dtype=float).reshape(N_STATES)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("error state must be finite")
        object.__setattr__(self, "x_tilde", x)
        object.__setattr__(self, "v_tilde", v)

    @staticmethod
    def at_start(x_tilde: np.ndarray) -> "ErrorState":
        """Error state at trajectory start: integrator zeroed."""
        return ErrorState(x_tilde, np.zeros(N_STATES))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x_tilde, self.v_tilde])


@dataclass(frozen=True)
class TvlqrWeights:
    """Stage weight Qbar (PSD), input weight Rbar (PD), terminal Pbar (PD)."""

    Qbar: np.ndarray
    Rbar: np.ndarray
    Pbar: np.ndarray

    def __post_init__(self) -> None:
        Qbar = np.asarray(self.Qbar, dtype=float)
        Rbar = np.asarray(self.Rbar, dtype=float)
        Pbar = np.asarray(self.Pbar, dtype=float)
        object.__setattr__(self, "Qbar", Qbar)
        object.__setattr__(self, "Rbar", Rbar)
        object.__setattr__(self, "Pbar", Pbar)
        if Qbar.shape != (N_AUG, N_AUG) or Pbar.shape != (N_AUG, N_AUG):
            raise ValueError(f"Qbar and Pbar must be ({N_AUG}, {N_AUG})")
        if Rbar.shape != (N_INPUTS, N_INPUTS):
            raise ValueError(f"Rbar must be ({N_INPUTS}, {N_INPUTS})")
        for name, M in (("Qbar", Qbar), ("Rbar", Rbar), ("Pbar", Pbar)):
            if np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, float(np.max(np.abs(M)))):
                raise ValueError(f"{name} must be symmetric")
        if np.min(np.linalg.eigvalsh(Qbar)) < -1e-9:
            raise ValueError("Qbar must be positive semidefinite")
        if not qp.check_strict_convexity(Rbar):
            raise ValueError("Rbar must be positive definite")
        if not qp.check_strict_convexity(Pbar):
            raise ValueError("Pbar must be positive definite")

    @staticmethod
    def from_diagonals(
        qbar_diag: Sequence[float],
        rbar_diag: Sequence[float],
        pbar_diag: Sequence[float] | None = None,
    ) -> "TvlqrWeights":
        """Diagonal weights; Pbar defaults to Qbar + 1e-6 I to stay PD."""
        Qbar = np.diag(np.asarray(qbar_diag, dtype=float))
        Rbar = np.diag(np.asarray(rbar_diag, dtype=float))
        if pbar_diag is None:
            Pbar = Qbar + 1e-6 * np.eye(N_AUG)
        else:
            Pbar = np.diag(np.asarray(pbar_diag, dtype=float))
        return TvlqrWeights(Qbar, Rbar, Pbar)


@dataclass(frozen=True)
class GainSchedule:
    """Time-indexed feedback gains and cost-to-go matrices."""

    gains: np.ndarray
    cost_to_go: np.ndarray

    @property
    def horizon(self) -> int:
        return self.gains.shape[0]


def error_jacobian(x_hat: VehicleState, p: ModelParams) -> np.ndarray:
    """Exact Jacobian of the Euler-discretized nonlinear step w.r.t. state.

    The lateral row carries v cos(theta) dt on the heading column and the
    heading row (v/L) sec^2(delta) dt on the steering column; compare the
    blended reference-model linearization, which this deliberately is not.
    """
    if abs(x_hat.delta) >= np.pi / 2:
        raise ValueError(f"steering angle {x_hat.delta} outside (-pi/2, pi/2)")
    dt = p.dt
    sin_t, cos_t = np.sin(x_hat.theta), np.cos(x_hat.theta)
    A = np.eye(N_STATES)
    A[IDX_S, IDX_THETA] = -x_hat.v * sin_t * dt
    A[IDX_S, IDX_V] = cos_t * dt
    A[IDX_Y, IDX_THETA] = x_hat.v * cos_t * dt
    A[IDX_Y, IDX_V] = sin_t * dt
    A[IDX_THETA, IDX_DELTA] = x_hat.v / (p.wheelbase_L * np.cos(x_hat.delta) ** 2) * dt
    A[IDX_THETA, IDX_V] = np.tan(x_hat.delta) / p.wheelbase_L * dt
    A[IDX_DELTA, IDX_DELTA] = 1.0 - p.lambda1 * dt
    A[IDX_V, IDX_ALPHA] = dt
    A[IDX_ALPHA, IDX_ALPHA] = 1.0 - p.lambda2 * dt
    return A


def augment_dynamics(
    A_fb: np.ndarray, B: np.ndarray, C: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stack integrator rows: A_aug = [[A_fb, 0], [C, I]], B_aug = [B; 0]."""
    A_fb = np.asarray(A_fb, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (N_STATES, N_STATES):
        raise ValueError(f"C must be ({N_STATES}, {N_STATES})")
    A_aug = np.block(
        [[A_fb, np.zeros((N_STATES, N_STATES))], [C, np.eye(N_STATES)]]
    )
    B_aug = np.vstack([B, np.zeros((N_STATES, N_INPUTS))])
    return A_aug, B_aug


def riccati_gains(
    A_aug_seq: Sequence[np.ndarray],
    B_aug: np.ndarray,
    w: TvlqrWeights,
) -> GainSchedule:
    """Backward Riccati recursion over the horizon.

    P(N) = Pbar; K(k) = (Rbar + B'P(k+1)B)^-1 B'P(k+1)A(k);
    P(k) = Qbar + A(k)'P(k+1)(A(k) - B K(k)), symmetrized each step.
    """
    n = len(A_aug_seq)
    B_aug = np.asarray(B_aug, dtype=float)
    gains = np.empty((n, N_INPUTS, N_AUG))
    cost_to_go = np.empty((n + 1, N_AUG, N_AUG))
    cost_to_go[n] = w.Pbar
    for k in range(n - 1, -1, -1):
        A = np.asarray(A_aug_seq[k], dtype=float)
        P_next = cost_to_go[k + 1]
        PB = P_next @ B_aug
        inner = w.Rbar + B_aug.T @ PB
        try:
            K = np.linalg.solve(inner, PB.T @ A)
        except np.linalg.LinAlgError as exc:
            raise SingularInnerMatrix(f"at step {k}") from exc
        P = w.Qbar + A.T @ P_next @ (A - B_aug @ K)
        cost_to_go[k] = 0.5 * (P + P.T)
        gains[k] = K
    return GainSchedule(gains, cost_to_go)


def feedback(K: np.ndarray, z_tilde: ErrorState | np.ndarray) -> ControlInput:
    """Feedback input u_fb = -K z."""
    z = z_tilde.stacked() if isinstance(z_tilde, ErrorState) else np.asarray(z_tilde, dtype=float)
    u = -np.asarray(K, dtype=float) @ z
    return ControlInput(*u)
