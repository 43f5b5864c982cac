"""Reference and nominal trajectory containers plus the scenario generator.

A planner reference carries [s, y, theta, v] rows at a uniform spacing.
Augmentation embeds those rows into the full 6-state space with the lag
states (delta, alpha) at their zero equilibrium. The generator stands in
for the motion planner: it forward-simulates the lag-free kinematics under
piecewise-constant speed/steering segments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .vehicle import (
    IDX_ALPHA,
    IDX_DELTA,
    IDX_S,
    IDX_THETA,
    IDX_V,
    IDX_Y,
    N_STATES,
    ModelParams,
)

# Planner state columns [s, y, theta, v] and where they land in the full state.
N_REF_FIELDS = 4
REF_TO_STATE = (IDX_S, IDX_Y, IDX_THETA, IDX_V)

CSV_HEADER = ("t", "s", "y", "theta", "v")


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Planner output: N+1 states [s, y, theta, v] spaced dt apart."""

    states: np.ndarray
    dt: float
    start_index: int = 0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if states.ndim != 2 or states.shape[1] != N_REF_FIELDS:
            raise ValueError(f"reference states must be (N+1, {N_REF_FIELDS})")
        if states.shape[0] < 2:
            raise ValueError("reference needs at least two states")
        if not np.all(np.isfinite(states)):
            raise ValueError("reference states must be finite")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    def times(self) -> np.ndarray:
        n = self.states.shape[0]
        return (self.start_index + np.arange(n)) * self.dt

    def window(self, start: int, horizon: int) -> "ReferenceTrajectory":
        """Sub-reference of `horizon` steps starting at sample `start`."""
        stop = start + horizon + 1
        if start < 0 or stop > self.states.shape[0]:
            raise ValueError(f"window [{start}, {stop}) outside reference")
        return ReferenceTrajectory(
            self.states[start:stop], self.dt, self.start_index + start
        )


@dataclass(frozen=True)
class AugmentedReference:
    """Reference embedded in the full state space, lag states at equilibrium."""

    tau_hat: np.ndarray

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau_hat, dtype=float)
        object.__setattr__(self, "tau_hat", tau)
        if tau.ndim != 2 or tau.shape[1] != N_STATES:
            raise ValueError(f"augmented states must be (N+1, {N_STATES})")

    @property
    def horizon(self) -> int:
        return self.tau_hat.shape[0] - 1

    def stacked(self) -> np.ndarray:
        """Row-stacked vector of dimension 6*(N+1)."""
        return self.tau_hat.reshape(-1)

    def project(self) -> np.ndarray:
        """Back-projection onto the planner fields [s, y, theta, v]."""
        return self.tau_hat[:, list(REF_TO_STATE)].copy()


@dataclass(frozen=True)
class NominalTrajectory:
    """Optimized state sequence and the feedforward inputs that realize it."""

    tau_ring: np.ndarray
    u_ff: np.ndarray

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau_ring, dtype=float)
        u = np.asarray(self.u_ff, dtype=float)
        object.__setattr__(self, "tau_ring", tau)
        object.__setattr__(self, "u_ff", u)
        if tau.ndim != 2 or tau.shape[1] != N_STATES:
            raise ValueError("tau_ring must be (N+1, 6)")
        if u.ndim != 2 or u.shape[1] != 2 or u.shape[0] != tau.shape[0] - 1:
            raise ValueError("u_ff must be (N, 2) with N = len(tau_ring) - 1")

    @property
    def horizon(self) -> int:
        return self.u_ff.shape[0]


def augment_reference(ref: ReferenceTrajectory) -> AugmentedReference:
    """Embed planner states in the full state space (delta = alpha = 0)."""
    n = ref.states.shape[0]
    tau = np.zeros((n, N_STATES))
    tau[:, list(REF_TO_STATE)] = ref.states
    return AugmentedReference(tau)


@dataclass(frozen=True)
class Segment:
    """One piecewise-constant reference segment."""

    duration: float
    speed: float
    steering: float


def generate_piecewise_reference(
    segments: Sequence[Segment | tuple[float, float, float]],
    p: ModelParams,
) -> ReferenceTrajectory:
    """Forward-simulate lag-free kinematics under piecewise-constant commands.

    Within a segment, speed and steering are held at the segment values
    (no actuator lag); pose advances by Euler steps of p.dt. Commands jump
    only at segment starts, so position and heading stay continuous.
    Durations must be positive multiples of dt.
    """
    segs = [s if isinstance(s, Segment) else Segment(*s) for s in segments]
    if not segs:
        raise ValueError("need at least one segment")
    steps_per_seg = []
    for seg in segs:
        n = seg.duration / p.dt
        if seg.duration <= 0.0 or abs(n - round(n)) > 1e-9:
            raise ValueError(f"segment duration {seg.duration} not a multiple of dt={p.dt}")
        steps_per_seg.append(int(round(n)))

    n_total = sum(steps_per_seg)
    states = np.empty((n_total + 1, N_REF_FIELDS))
    s = y = theta = 0.0
    k = 0
    for seg, n_steps in zip(segs, steps_per_seg):
        for _ in range(n_steps):
            states[k] = (s, y, theta, seg.speed)
            s += p.dt * seg.speed * np.cos(theta)
            y += p.dt * seg.speed * np.sin(theta)
            theta += p.dt * seg.speed / p.wheelbase_L * np.tan(seg.steering)
            k += 1
    states[k] = (s, y, theta, segs[-1].speed)
    return ReferenceTrajectory(states, p.dt)


def reference_derived_inputs(ref: ReferenceTrajectory, p: ModelParams) -> np.ndarray:
    """Inputs [delta_in, alpha_in] backed out of the reference, lag ignored.

    From the lag-free discrete model: delta(k) = (theta(k+1) - theta(k)) * L
    / (v(k) * dt) and alpha(k) = (v(k+1) - v(k)) / dt. This is the raw,
    typically jumpy, input trace the optimization smooths. Steps with
    |v| below 1e-6 get zero steering.
    """
    theta = ref.states[:, 2]
    v = ref.states[:, 3]
    vk = v[:-1]
    moving = np.abs(vk) > 1e-6
    safe_v = np.where(moving, vk, 1.0)
    delta = np.where(moving, np.diff(theta) * p.wheelbase_L / (safe_v * ref.dt), 0.0)
    alpha = np.diff(v) / ref.dt
    return np.column_stack([delta, alpha])


def save_reference_csv(ref: ReferenceTrajectory, path: str | Path) -> None:
    """Write a reference as CSV with columns t, s, y, theta, v."""
    times = ref.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t, row in zip(times, ref.states):
            writer.writerow([f"{t:.12g}"] + [f"{val:.12g}" for val in row])


def load_reference_csv(path: str | Path) -> ReferenceTrajectory:
    """Read a reference from CSV (columns t, s, y, theta, v)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(CSV_HEADER):
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: reference needs at least two rows")
    data = np.asarray(rows)
    times = data[:, 0]
    spacing = np.diff(times)
    dt = spacing[0]
    if dt <= 0.0 or not np.allclose(spacing, dt, rtol=0.0, atol=1e-9):
        raise ValueError(f"{path}: time column must be uniformly spaced")
    start_index = int(round(times[0] / dt))
    return ReferenceTrajectory(data[:, 1:], dt, start_index)
