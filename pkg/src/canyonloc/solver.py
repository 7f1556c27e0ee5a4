"""Box-constrained Levenberg-Marquardt for small dense least-squares problems.

The solver minimizes sum(r(x)^2) with damped Gauss-Newton steps, Marquardt
diagonal scaling (so uniform residual re-weighting does not change the
iterates), gain-ratio damping adaptation, and projection of trial points onto
the bounds. Trial steps are only accepted on a strict cost decrease, so the
accepted-cost trace is non-increasing by construction; the trace is kept on
the result for verification.

Problems here have a handful of parameters and a few dozen residuals, so the
normal equations are solved with a scalar Cholesky factorization instead of
LAPACK calls; that keeps a full solve in the tens of microseconds, which
matters for Monte Carlo sweeps running hundreds of thousands of solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constants import TOL


class InvalidStartError(RuntimeError):
    """The residual is non-finite at the starting point."""


@dataclass
class ResidualProblem:
    """Residual vector function, optional analytic Jacobian, and a box.

    fun(x) and jac(x) receive a float ndarray of shape (n,) and return a
    residual vector (m,) and Jacobian (m, n) respectively; m >= n for a
    well-posed solve.
    """

    fun: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def clip(self, x: np.ndarray) -> np.ndarray:
        if self.lower is None and self.upper is None:
            return x
        return np.clip(x, self.lower, self.upper)


@dataclass
class SolveResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    termination: str  # gradient_tol | step_tol | max_iter | numerical
    cost_trace: list[float] = field(default_factory=list)


def numeric_jacobian(problem: ResidualProblem, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with step 1e-6 * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    r0 = np.asarray(problem.fun(x), dtype=float)
    J = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(problem.fun(xp)) - np.asarray(problem.fun(xm))) / (2.0 * h)
    return J


def _cholesky_solve4(A: list[list[float]], b: list[float]) -> Optional[list[float]]:
    """Unrolled Cholesky solve for the 4x4 normal equations of the hot path."""
    a00, a01, a02, a03 = A[0]
    a11, a12, a13 = A[1][1], A[1][2], A[1][3]
    a22, a23 = A[2][2], A[2][3]
    a33 = A[3][3]
    if not (a00 > 0.0 and math.isfinite(a00)):
        return None
    l00 = math.sqrt(a00)
    l10 = a01 / l00
    l20 = a02 / l00
    l30 = a03 / l00
    s = a11 - l10 * l10
    if not (s > 0.0 and math.isfinite(s)):
        return None
    l11 = math.sqrt(s)
    l21 = (a12 - l20 * l10) / l11
    l31 = (a13 - l30 * l10) / l11
    s = a22 - l20 * l20 - l21 * l21
    if not (s > 0.0 and math.isfinite(s)):
        return None
    l22 = math.sqrt(s)
    l32 = (a23 - l30 * l20 - l31 * l21) / l22
    s = a33 - l30 * l30 - l31 * l31 - l32 * l32
    if not (s > 0.0 and math.isfinite(s)):
        return None
    l33 = math.sqrt(s)
    y0 = b[0] / l00
    y1 = (b[1] - l10 * y0) / l11
    y2 = (b[2] - l20 * y0 - l21 * y1) / l22
    y3 = (b[3] - l30 * y0 - l31 * y1 - l32 * y2) / l33
    x3 = y3 / l33
    x2 = (y2 - l32 * x3) / l22
    x1 = (y1 - l21 * x2 - l31 * x3) / l11
    x0 = (y0 - l10 * x1 - l20 * x2 - l30 * x3) / l00
    return [x0, x1, x2, x3]


def _cholesky_solve(A: list[list[float]], b: list[float]) -> Optional[list[float]]:
    """Solve A x = b for a small SPD matrix; None if A is not positive."""
    n = len(b)
    if n == 4:
        return _cholesky_solve4(A, b)
    L = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = A[i][j] - sum(L[i][k] * L[j][k] for k in range(j))
            if i == j:
                if s <= 0.0 or not math.isfinite(s):
                    return None
                L[i][i] = math.sqrt(s)
            else:
                L[i][j] = s / L[j][j]
    y = [0.0] * n
    for i in range(n):
        y[i] = (b[i] - sum(L[i][k] * y[k] for k in range(i))) / L[i][i]
    x = [0.0] * n
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - sum(L[k][i] * x[k] for k in range(i + 1, n))) / L[i][i]
    return x


def _damped_step(
    A: list[list[float]],
    g: list[float],
    diag: list[float],
    lam: float,
    x: list[float],
    lo: list[float],
    hi: list[float],
) -> Optional[list[float]]:
    """One damped Gauss-Newton step honoring active bounds.

    Solves (A + lam diag) d = -g; coordinates the step would push out of the
    box are pinned to the face and the reduced system is re-solved, so
    progress along a face is a proper damped step in the face subspace
    rather than a clipped full-space step.
    """
    n = len(g)
    free = list(range(n))
    for _ in range(n):
        M = [[A[i][j] for j in free] for i in free]
        for k, i in enumerate(free):
            M[k][k] += lam * diag[i]
        d_free = _cholesky_solve(M, [-g[i] for i in free])
        if d_free is None:
            return None
        delta = [0.0] * n
        for k, i in enumerate(free):
            delta[i] = d_free[k]
        blocked = [
            i
            for i in free
            if (x[i] <= lo[i] and delta[i] < 0.0) or (x[i] >= hi[i] and delta[i] > 0.0)
        ]
        if not blocked:
            return delta
        free = [i for i in free if i not in blocked]
        if not free:
            return [0.0] * n
    return delta


def solve(
    problem: ResidualProblem,
    x0: np.ndarray,
    max_iter: int = TOL.solver_max_iter,
    gradient_tol: float = TOL.solver_gradient,
    step_tol: float = TOL.solver_step,
) -> SolveResult:
    """Run LM from x0 (projected onto the box if needed).

    Raises InvalidStartError when the residual at the start is non-finite
    (e.g. a geometrically infeasible hypothesis). Non-finite residuals at
    trial points are treated as rejected steps, which keeps iterates inside
    the feasible region. Termination: gradient norm below gradient_tol,
    accepted (or best rejected) step below step_tol relative to |x|, or the
    iteration cap (converged=False).
    """
    x = problem.clip(np.asarray(x0, dtype=float).copy())
    n = x.size
    lower = problem.lower if problem.lower is not None else np.full(n, -np.inf)
    upper = problem.upper if problem.upper is not None else np.full(n, np.inf)
    lo = [float(v) for v in np.broadcast_to(lower, (n,))]
    hi = [float(v) for v in np.broadcast_to(upper, (n,))]

    r = np.asarray(problem.fun(x), dtype=float)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise InvalidStartError("residual is non-finite at the starting point")
    trace = [cost]
    jac = problem.jac if problem.jac is not None else (lambda xx: numeric_jacobian(problem, xx))

    xl = [float(v) for v in x]
    lam = 1e-4
    nu = 2.0
    iterations = 0
    converged = False
    termination = "max_iter"

    for iterations in range(1, max_iter + 1):
        J = np.asarray(jac(x), dtype=float)
        g = (J.T @ r).tolist()
        gmax = max(abs(v) for v in g)
        if not math.isfinite(gmax):
            termination = "numerical"
            break
        if 2.0 * gmax < gradient_tol:
            converged = True
            termination = "gradient_tol"
            break
        A = (J.T @ J).tolist()
        diag = [A[i][i] if A[i][i] > 0.0 else 1.0 for i in range(n)]
        xnorm = math.sqrt(sum(v * v for v in xl))

        accepted = False
        step_converged = False
        while lam < 1e15:
            delta = _damped_step(A, g, diag, lam, xl, lo, hi)
            if delta is None:
                lam *= 10.0
                nu = 2.0
                continue
            x_new_l = [min(max(xl[i] + delta[i], lo[i]), hi[i]) for i in range(n)]
            step = math.sqrt(sum((x_new_l[i] - xl[i]) ** 2 for i in range(n)))
            small = step <= step_tol * (xnorm + step_tol)
            x_new = np.array(x_new_l)
            r_new = np.asarray(problem.fun(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new < cost:
                # Nielsen gain ratio: actual vs predicted decrease.
                predicted = sum(
                    d * (lam * di * d - gi) for d, di, gi in zip(delta, diag, g)
                )
                gain = (cost - cost_new) / predicted if predicted > 0.0 else 1.0
                lam = max(lam * max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3), 1e-15)
                nu = 2.0
                x, xl, r, cost = x_new, x_new_l, r_new, cost_new
                trace.append(cost)
                accepted = True
                step_converged = small
                break
            if small:
                step_converged = True
                break
            lam *= nu
            nu *= 2.0
        else:
            step_converged = True  # damping exhausted: no resolvable step left

        if step_converged or not accepted:
            converged = True
            termination = "step_tol"
            break

    return SolveResult(
        x=x,
        cost=cost,
        iterations=iterations,
        converged=converged,
        termination=termination,
        cost_trace=trace,
    )
