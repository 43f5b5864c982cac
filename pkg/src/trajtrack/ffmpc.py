"""Feedforward trajectory optimization as a strictly convex QP.

The LTV dynamics are condensed over the horizon into batch matrices so
the stacked input sequence is the only decision variable. The cost adds
input-difference penalties (up to order M, with stored history supplying
the boundary terms) to a tracking term, which keeps the Hessian positive
definite whenever the zeroth-order input weight is. Box bounds on the
inputs and optional linear state bounds become polyhedral inequality
rows on the same variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qp
from .trajectory import AugmentedReference, NominalTrajectory, ReferenceTrajectory, augment_reference
from .vehicle import ControlInput, ModelParams, N_INPUTS, N_STATES, VehicleState, linearize


@dataclass(frozen=True)
class CondensedDynamics:
    """Batch form of the horizon dynamics: tau = bigA x0 + bigB U."""

    bigA: np.ndarray
    bigB: np.ndarray

    @property
    def horizon(self) -> int:
        return self.bigB.shape[1] // N_INPUTS


def condense(A_seq: Sequence[np.ndarray], B: np.ndarray) -> CondensedDynamics:
    """Stack N one-step transitions into block matrices over the horizon.

    Row block k of bigA is A(t+k-1)...A(t), identity for k = 0. Block
    (k, j) of bigB is A(t+k-1)...A(t+j+1) B for j < k, zero otherwise,
    making bigB block lower-triangular with a zero top row block.
    """
    n = len(A_seq)
    if n < 1:
        raise ValueError("need at least one transition matrix")
    B = np.asarray(B, dtype=float)
    if B.shape != (N_STATES, N_INPUTS):
        raise ValueError(f"B must be ({N_STATES}, {N_INPUTS})")
    bigA = np.zeros(((n + 1) * N_STATES, N_STATES))
    bigB = np.zeros(((n + 1) * N_STATES, n * N_INPUTS))
    bigA[:N_STATES] = np.eye(N_STATES)
    for k in range(1, n + 1):
        A = np.asarray(A_seq[k - 1], dtype=float)
        if A.shape != (N_STATES, N_STATES):
            raise ValueError(f"A_seq[{k - 1}] must be ({N_STATES}, {N_STATES})")
        rows = slice(k * N_STATES, (k + 1) * N_STATES)
        prev = slice((k - 1) * N_STATES, k * N_STATES)
        bigA[rows] = A @ bigA[prev]
        bigB[rows] = A @ bigB[prev]
        bigB[rows, (k - 1) * N_INPUTS : k * N_INPUTS] = B
    return CondensedDynamics(bigA, bigB)


def difference_matrix(n_steps: int) -> np.ndarray:
    """Block-bidiagonal first-difference operator on a stacked input sequence."""
    if n_steps < 1:
        raise ValueError("horizon must be at least 1")
    dim = n_steps * N_INPUTS
    return np.eye(dim) - np.eye(dim, k=-N_INPUTS)


@dataclass(frozen=True)
class FfWeights:
    """Tracking weight Q and input-difference weights R_0..R_M.

    Q is positive semidefinite over the stacked state sequence; every R_i
    is positive definite over the stacked input sequence. Strict convexity
    of the assembled cost needs only R_0, so Q may carry zero diagonal
    entries.
    """

    Q: np.ndarray
    R: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        Q = np.asarray(self.Q, dtype=float)
        R = tuple(np.asarray(Ri, dtype=float) for Ri in self.R)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        if not R:
            raise ValueError("need at least R_0")
        dim_u = R[0].shape[0]
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12 * max(1.0, float(np.max(np.abs(Q), initial=0.0))):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-9:
            raise ValueError("Q must be positive semidefinite")
        for i, Ri in enumerate(R):
            if Ri.shape != (dim_u, dim_u):
                raise ValueError(f"R_{i} must be ({dim_u}, {dim_u})")
            if not qp.check_strict_convexity(Ri):
                raise ValueError(f"R_{i} must be positive definite")

    @property
    def max_difference_order(self) -> int:
        return len(self.R) - 1

    @staticmethod
    def from_diagonals(
        q_diag: Sequence[float],
        r_diags: Sequence[Sequence[float]],
        horizon: int,
    ) -> "FfWeights":
        """Replicate per-step diagonal weights across the horizon blocks."""
        q_diag = np.asarray(q_diag, dtype=float)
        if q_diag.shape != (N_STATES,):
            raise ValueError(f"q_diag must have {N_STATES} entries")
        if np.any(q_diag < 0.0):
            raise ValueError("q_diag entries must be nonnegative")
        Q = np.diag(np.tile(q_diag, horizon + 1))
        R = []
        for r_diag in r_diags:
            r_diag = np.asarray(r_diag, dtype=float)
            if r_diag.shape != (N_INPUTS,):
                raise ValueError(f"each r_diag must have {N_INPUTS} entries")
            if np.any(r_diag <= 0.0):
                raise ValueError("r_diag entries must be positive")
            R.append(np.diag(np.tile(r_diag, horizon)))
        return FfWeights(Q, tuple(R))


@dataclass(frozen=True)
class InputHistory:
    """Past feedforward inputs, oldest first, used for difference boundaries.

    Order-i penalties need i past inputs; when fewer are stored the missing
    older entries are treated as zero (cold start).
    """

    prev_inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, N_INPUTS)))

    def __post_init__(self) -> None:
        arr = np.asarray(self.prev_inputs, dtype=float).reshape(-1, N_INPUTS)
        object.__setattr__(self, "prev_inputs", arr)

    @staticmethod
    def cold_start() -> "InputHistory":
        return InputHistory(np.zeros((0, N_INPUTS)))

    @staticmethod
    def from_last_input(u: np.ndarray | ControlInput) -> "InputHistory":
        u = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
        return InputHistory(u.reshape(1, N_INPUTS))

    def boundary_vectors(self, order: int, horizon: int) -> list[np.ndarray]:
        """V_0..V_{order-1}: each carries minus the i-th difference of the
        stored history at the sample before the horizon, in its first block.
        """
        padded = np.zeros((max(order, 1), N_INPUTS))
        take = min(order, self.prev_inputs.shape[0])
        if take:
            padded[-take:] = self.prev_inputs[-take:]
        vectors = []
        diffs = padded  # row -1 is the most recent past input
        for i in range(order):
            v = np.zeros(horizon * N_INPUTS)
            v[:N_INPUTS] = -diffs[-1]
            vectors.append(v)
            diffs = np.diff(diffs, axis=0, prepend=np.zeros((1, N_INPUTS)))
        return vectors


def build_cost(
    cd: CondensedDynamics,
    x0: VehicleState | np.ndarray,
    tau_hat: AugmentedReference,
    w: FfWeights,
    hist: InputHistory,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Assemble (H, F, Y) with J(U) = U'HU + 2F'U + Y.

    H = R_0 + sum_i (E^i)' R_i E^i + bigB' Q bigB; F collects the history
    boundary terms and the tracking residual bigA x0 - tau_hat against
    bigB; Y absorbs all input-independent terms (including the fixed
    initial-state tracking deviation).
    """
    n_steps = cd.horizon
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    tau = tau_hat.stacked()
    if tau.shape[0] != cd.bigA.shape[0]:
        raise ValueError("reference horizon does not match condensed dynamics")
    if w.Q.shape[0] != tau.shape[0] or w.R[0].shape[0] != n_steps * N_INPUTS:
        raise ValueError("weight dimensions do not match the horizon")

    order = w.max_difference_order
    E = difference_matrix(n_steps)
    residual = cd.bigA @ x0 - tau
    QB = w.Q @ cd.bigB

    H = w.R[0] + cd.bigB.T @ QB
    F = cd.bigB.T @ (w.Q @ residual)
    Y = float(residual @ w.Q @ residual)

    V = hist.boundary_vectors(order, n_steps)
    E_pow = np.eye(n_steps * N_INPUTS)
    powers = [E_pow]
    for _ in range(order):
        powers.append(E @ powers[-1])
    for i in range(1, order + 1):
        Ei = powers[i]
        # W_i = sum_j E^j V_{i-j-1}: accumulated boundary terms of order i
        Wi = np.zeros(n_steps * N_INPUTS)
        for j in range(i):
            Wi += powers[j] @ V[i - j - 1]
        RiEi = w.R[i] @ Ei
        H = H + Ei.T @ RiEi
        F = F + RiEi.T @ Wi
        Y += float(Wi @ w.R[i] @ Wi)
    return H, F, Y


@dataclass(frozen=True)
class StateBound:
    """Linear box bound on one state channel, all steps or selected ones."""

    channel: int
    lower: float = -np.inf
    upper: float = np.inf
    steps: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.channel < N_STATES:
            raise ValueError(f"state channel must be in [0, {N_STATES})")
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")


@dataclass(frozen=True)
class ConstraintSet:
    """Input box bounds per channel plus optional state bounds.

    Infinite entries drop the corresponding rows, so a fully infinite set
    yields an unconstrained program.
    """

    u_min: np.ndarray = field(default_factory=lambda: np.full(N_INPUTS, -np.inf))
    u_max: np.ndarray = field(default_factory=lambda: np.full(N_INPUTS, np.inf))
    state_bounds: tuple[StateBound, ...] = ()

    def __post_init__(self) -> None:
        u_min = np.asarray(self.u_min, dtype=float).reshape(N_INPUTS)
        u_max = np.asarray(self.u_max, dtype=float).reshape(N_INPUTS)
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)
        object.__setattr__(self, "state_bounds", tuple(self.state_bounds))
        if np.any(u_min >= u_max):
            raise ValueError("need u_min < u_max per channel")

    @staticmethod
    def unbounded() -> "ConstraintSet":
        return ConstraintSet()


def build_constraints(
    cs: ConstraintSet,
    cd: CondensedDynamics,
    x0: VehicleState | np.ndarray,
    n_steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Polyhedral rows G_I U <= h over the stacked input sequence.

    Input bounds become +-identity selector rows (uppers for every step and
    channel, then lowers). State bounds select rows of bigB, with the
    right-hand side shifted by the matching rows of bigA x0.
    """
    if cd.horizon != n_steps:
        raise ValueError("horizon mismatch")
    x0 = x0.as_array() if isinstance(x0, VehicleState) else np.asarray(x0, dtype=float)
    dim = n_steps * N_INPUTS
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    for k in range(n_steps):
        for c in range(N_INPUTS):
            if np.isfinite(cs.u_max[c]):
                e = np.zeros(dim)
                e[k * N_INPUTS + c] = 1.0
                rows.append(e)
                rhs.append(cs.u_max[c])
    for k in range(n_steps):
        for c in range(N_INPUTS):
            if np.isfinite(cs.u_min[c]):
                e = np.zeros(dim)
                e[k * N_INPUTS + c] = -1.0
                rows.append(e)
                rhs.append(-cs.u_min[c])

    for bound in cs.state_bounds:
        steps = bound.steps if bound.steps is not None else tuple(range(n_steps + 1))
        for k in steps:
            if not 0 <= k <= n_steps:
                raise ValueError(f"state-bound step {k} outside horizon")
            row = cd.bigB[k * N_STATES + bound.channel]
            offset = float(cd.bigA[k * N_STATES + bound.channel] @ x0)
            if np.isfinite(bound.upper):
                rows.append(row.copy())
                rhs.append(bound.upper - offset)
            if np.isfinite(bound.lower):
                rows.append(-row)
                rhs.append(offset - bound.lower)

    if not rows:
        return np.zeros((0, dim)), np.zeros(0)
    return np.vstack(rows), np.asarray(rhs)


@dataclass(frozen=True)
class SolveStats:
    """Feedforward QP diagnostics."""

    iterations: int
    n_active: int
    stationarity: float
    primal_violation: float
    comp_slack: float


@dataclass(frozen=True)
class FeedforwardPlan:
    """Optimized nominal trajectory with its feedforward input sequence."""

    nominal: NominalTrajectory
    u_ff_star_first: ControlInput
    objective: float
    qp_stats: SolveStats


def assemble_qp(
    ref: ReferenceTrajectory,
    x0: VehicleState,
    w: FfWeights,
    cs: ConstraintSet,
    p: ModelParams,
    hist: InputHistory,
) -> tuple[qp.QuadraticProgram, CondensedDynamics]:
    """Linearize about the augmented reference, condense, and build the QP.

    The assembled cost J = U'HU + 2F'U + Y maps onto the solver's
    1/2 x'Hx + F'x + Y convention by doubling H and F, leaving both the
    minimizer and the objective value unchanged.
    """
    tau_hat = augment_reference(ref)
    n_steps = ref.horizon
    A_seq = []
    B = None
    for k in range(n_steps):
        A_k, B = linearize(VehicleState.from_array(tau_hat.tau_hat[k]), p)
        A_seq.append(A_k)
    cd = condense(A_seq, B)
    H, F, Y = build_cost(cd, x0, tau_hat, w, hist)
    G_I, h = build_constraints(cs, cd, x0, n_steps)
    program = qp.QuadraticProgram(H=2.0 * H, F=2.0 * F, Y=Y, G_I=G_I, h=h)
    return program, cd


def optimize_trajectory(
    ref: ReferenceTrajectory,
    x0: VehicleState,
    w: FfWeights,
    cs: ConstraintSet,
    p: ModelParams,
    hist: InputHistory | None = None,
    initial_active: tuple[int, ...] | None = None,
) -> FeedforwardPlan:
    """Solve the feedforward QP and reconstruct the nominal trajectory.

    Raises `qp.Infeasible` when state bounds conflict; a valid weight set
    can never trip the strict-convexity check.
    """
    hist = hist if hist is not None else InputHistory.cold_start()
    program, cd = assemble_qp(ref, x0, w, cs, p, hist)
    sol = qp.solve(program, initial_active=initial_active)
    u_star = sol.x_star
    tau_ring = (cd.bigA @ x0.as_array() + cd.bigB @ u_star).reshape(-1, N_STATES)
    nominal = NominalTrajectory(tau_ring, u_star.reshape(-1, N_INPUTS))
    stat, primal, comp = qp.kkt_residual(program, sol)
    stats = SolveStats(
        iterations=sol.iterations,
        n_active=len(sol.active_set),
        stationarity=stat,
        primal_violation=primal,
        comp_slack=comp,
    )
    return FeedforwardPlan(
        nominal=nominal,
        u_ff_star_first=ControlInput(*nominal.u_ff[0]),
        objective=sol.objective,
        qp_stats=stats,
    )
