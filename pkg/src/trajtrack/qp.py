"""Strictly convex quadratic programming.

Programs are minimize 1/2 x'Hx + F'x + Y subject to G_I x <= h and
optionally G_E x = b, with H symmetric positive definite. Positive
definiteness plus a convex feasible set gives a unique global optimum,
which is what makes the solve reproducible and solver-invariant; the
dual active-set method below exploits it (the unconstrained minimum is
always dual-feasible, so no feasibility phase is needed).

`kkt_residual` provides an independent optimality certificate for any
candidate solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

PD_TOL = 1e-10
KKT_TOL = 1e-8


class QpError(RuntimeError):
    """Base class for solver failures."""


class NotStrictlyConvex(QpError):
    """Hessian failed the positive-definiteness check."""


class Infeasible(QpError):
    """No point satisfies the constraints."""


class IterationLimit(QpError):
    """Active-set iteration budget exhausted."""


@dataclass(frozen=True)
class QuadraticProgram:
    """Data of min 1/2 x'Hx + F'x + Y s.t. G_I x <= h (and G_E x = b)."""

    H: np.ndarray
    F: np.ndarray
    Y: float = 0.0
    G_I: np.ndarray | None = None
    h: np.ndarray | None = None
    G_E: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self) -> None:
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        F = np.asarray(self.F, dtype=float).reshape(-1)
        n = F.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be ({n}, {n}), got {H.shape}")
        scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("H must be symmetric to 1e-12")
        G_I = self.G_I if self.G_I is not None else np.zeros((0, n))
        G_I = np.asarray(G_I, dtype=float).reshape(-1, n)
        h = self.h if self.h is not None else np.zeros(0)
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.shape[0] != G_I.shape[0]:
            raise ValueError("G_I and h row counts differ")
        if self.G_E is not None or self.b is not None:
            G_E = np.asarray(self.G_E, dtype=float).reshape(-1, n)
            b = np.asarray(self.b, dtype=float).reshape(-1)
            if b.shape[0] != G_E.shape[0]:
                raise ValueError("G_E and b row counts differ")
        else:
            G_E, b = np.zeros((0, n)), np.zeros(0)
        for name, arr in (("H", H), ("F", F), ("G_I", G_I), ("h", h), ("G_E", G_E), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G_I", G_I)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "G_E", G_E)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.G_I.shape[0]

    @property
    def n_eq(self) -> int:
        return self.G_E.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.F @ x + self.Y)


@dataclass(frozen=True)
class QpSolution:
    """Optimal point with multipliers and diagnostics."""

    x_star: np.ndarray
    objective: float
    active_set: tuple[int, ...]
    dual_ineq: np.ndarray
    iterations: int
    dual_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))


def check_strict_convexity(H: np.ndarray, pd_tol: float = PD_TOL) -> bool:
    """True iff symmetric H factors with all Cholesky pivots above pd_tol."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * scale:
        raise ValueError("H must be symmetric")
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(L) ** 2 > pd_tol))


def solve(
    qp: QuadraticProgram,
    initial_active: tuple[int, ...] | list[int] | None = None,
    max_iterations: int | None = None,
) -> QpSolution:
    """Dual active-set solve of a strictly convex QP.

    Starts from the (equality-constrained) unconstrained minimum, which is
    dual feasible, and adds the most violated inequality each outer step
    (ties broken toward the lowest constraint index). Inner steps move in
    the primal-dual direction that keeps the working set's KKT conditions
    exact, dropping blocking constraints whose multipliers would turn
    negative. Terminates at the unique optimum, or raises `Infeasible`
    when the dual is unbounded.

    `initial_active` warm-starts the working set with inequality indices;
    an unusable guess (dependent rows) silently falls back to a cold start.
    """
    if not check_strict_convexity(qp.H):
        raise NotStrictlyConvex("Hessian is not positive definite to tolerance")
    n, m, p = qp.n, qp.n_ineq, qp.n_eq
    if max_iterations is None:
        max_iterations = 50 * (n + m + p)
    chol = cho_factor(qp.H, lower=True)
    feas_tol = 1e-9 * max(1.0, float(np.max(np.abs(qp.h), initial=0.0)),
                          float(np.max(np.abs(qp.b), initial=0.0)))

    def solve_working_set(active: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Optimum of the problem with equalities plus `active` held tight."""
        N = np.vstack([qp.G_E, qp.G_I[active]])
        rhs = np.concatenate([qp.b, qp.h[active]])
        x_free = -cho_solve(chol, qp.F)
        if N.shape[0] == 0:
            return x_free, np.zeros(0), np.zeros(0)
        HNt = cho_solve(chol, N.T)
        S = N @ HNt
        mults = np.linalg.solve(S, N @ x_free - rhs)
        x = x_free - HNt @ mults
        return x, mults[:p], mults[p:]

    # Initial dual-feasible iterate: equality-constrained minimum, warm
    # inequalities added then purged of negative multipliers.
    active: list[int] = []
    if initial_active:
        active = sorted({int(i) for i in initial_active if 0 <= int(i) < m})
    while True:
        try:
            x, nu, lam = solve_working_set(active)
        except np.linalg.LinAlgError as exc:
            if active:
                active = []  # dependent warm-start rows: cold start
                continue
            raise QpError("equality constraints are linearly dependent") from exc
        if lam.size and np.min(lam) < 0.0:
            active.pop(int(np.argmin(lam)))
            continue
        break
    lam = list(lam)

    iterations = 0
    while True:
        viol = qp.G_I @ x - qp.h if m else np.zeros(0)
        if m == 0 or np.max(viol) <= feas_tol:
            break
        p_idx = int(np.argmax(viol))
        g = qp.G_I[p_idx]
        lam_p = 0.0

        while True:
            iterations += 1
            if iterations > max_iterations:
                raise IterationLimit(
                    f"no convergence in {max_iterations} iterations "
                    f"(violation {np.max(qp.G_I @ x - qp.h):.3e}, "
                    f"{len(active)} active)"
                )
            N = np.vstack([qp.G_E, qp.G_I[active]])
            Hg = cho_solve(chol, g)
            if N.shape[0]:
                HNt = cho_solve(chol, N.T)
                d_m = np.linalg.solve(N @ HNt, -(N @ Hg))
                d_x = -(Hg + HNt @ d_m)
            else:
                d_m = np.zeros(0)
                d_x = -Hg
            d_lam = d_m[p:]
            # rate = g.d_x = -d_x'Hd_x <= 0; zero iff g in span of working rows
            rate = float(g @ d_x)
            v = float(g @ x - qp.h[p_idx])

            t_full = v / -rate if rate < -1e-13 else np.inf
            t_block = np.inf
            block_j = -1
            for j, dl in enumerate(d_lam):
                if dl < -1e-13:
                    tj = -lam[j] / dl
                    if tj < t_block:
                        t_block, block_j = tj, j
            if not np.isfinite(t_full) and not np.isfinite(t_block):
                raise Infeasible(
                    f"constraint {p_idx} cannot be satisfied "
                    f"(violation {v:.3e}, dual unbounded)"
                )
            t = min(t_full, t_block)
            x = x + t * d_x
            nu = nu + t * d_m[:p]
            for j in range(len(lam)):
                lam[j] += t * d_lam[j]
            lam_p += t
            if t_full <= t_block:
                active.append(p_idx)
                lam.append(lam_p)
                break
            active.pop(block_j)
            lam.pop(block_j)

    order = np.argsort(active, kind="stable")
    active_sorted = tuple(int(active[i]) for i in order)
    dual = np.zeros(m)
    for i, lm in zip(active, lam):
        dual[i] = max(lm, 0.0)
    return QpSolution(
        x_star=x,
        objective=qp.objective(x),
        active_set=active_sorted,
        dual_ineq=dual,
        iterations=iterations,
        dual_eq=np.asarray(nu, dtype=float),
    )


def kkt_residual(qp: QuadraticProgram, sol: QpSolution) -> tuple[float, float, float]:
    """Infinity-norm KKT residuals: (stationarity, primal violation, comp slack)."""
    x = np.asarray(sol.x_star, dtype=float)
    lam = np.asarray(sol.dual_ineq, dtype=float)
    grad = qp.H @ x + qp.F
    if qp.n_ineq:
        grad = grad + qp.G_I.T @ lam
    if qp.n_eq:
        nu = np.asarray(sol.dual_eq, dtype=float)
        grad = grad + qp.G_E.T @ nu
    stationarity = float(np.max(np.abs(grad), initial=0.0))
    primal = 0.0
    comp = 0.0
    if qp.n_ineq:
        slack = qp.G_I @ x - qp.h
        primal = float(np.max(np.maximum(slack, 0.0), initial=0.0))
        comp = float(np.max(np.abs(lam * slack), initial=0.0))
    if qp.n_eq:
        primal = max(primal, float(np.max(np.abs(qp.G_E @ x - qp.b), initial=0.0)))
    return stationarity, primal, comp


def format_qp_text(qp: QuadraticProgram) -> str:
    """Plain-text matrix dump, hand-checkable against external solvers."""
    lines = [
        "# minimize 1/2 x'Hx + F'x + Y  subject to  G_I x <= h" +
        (", G_E x = b" if qp.n_eq else ""),
        f"n {qp.n}",
        f"m {qp.n_ineq}",
        f"p {qp.n_eq}",
        f"Y {qp.Y:.12g}",
    ]

    def block(name: str, arr: np.ndarray) -> None:
        lines.append(name)
        for row in np.atleast_2d(arr):
            lines.append(" ".join(f"{v:.12g}" for v in row))

    block("H", qp.H)
    block("F", qp.F)
    if qp.n_ineq:
        block("G_I", qp.G_I)
        block("h", qp.h)
    if qp.n_eq:
        block("G_E", qp.G_E)
        block("b", qp.b)
    return "\n".join(lines) + "\n"


def save_qp_text(qp: QuadraticProgram, path: str | Path) -> None:
    Path(path).write_text(format_qp_text(qp))
