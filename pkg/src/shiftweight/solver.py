"""Constrained optimization routines used by the importance estimators.

Two problems are covered:

* a quadratic program over the intersection of a box ``0 <= w <= B`` and a
  sum slab ``|sum(w) - s| <= s * eps``, solved by projected gradient
  descent with a backtracking (Armijo) line search; the projection onto
  box-and-slab is computed with Dykstra's alternating method, and

* concave log-likelihood ascent over ``alpha >= 0`` with the linear
  equality ``sum_i sum_k alpha_k basis_tr[i, k] = n_tr``, where feasibility
  is restored after each gradient step by clipping to the nonnegative
  orthant and rescaling onto the equality constraint.

Both solvers are deterministic: no randomized restarts, no tie-breaking
randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShiftWeightError

__all__ = [
    "QpProblem",
    "SolverReport",
    "NotConvergedError",
    "NonPsdError",
    "InfeasibleError",
    "DegenerateBasisError",
    "project_box_slab",
    "solve_box_sum_qp",
    "kliep_ascent",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
_ARMIJO = 1e-4
_BACKTRACK = 0.5
_MIN_STEP = 1e-20


class NotConvergedError(ShiftWeightError):
    """Solver hit its iteration budget before reaching tolerance."""


class NonPsdError(ShiftWeightError):
    """QP Hessian has an eigenvalue below the -1e-8 tolerance."""


class InfeasibleError(ShiftWeightError):
    """Box and slab constraints have empty intersection."""


class DegenerateBasisError(ShiftWeightError):
    """A likelihood term has no support: some test row (or the equality
    constraint) sees only zero basis values, so its log is -inf."""


@dataclass(frozen=True)
class QpProblem:
    """minimize 0.5 w'Hw - c'w  s.t.  0 <= w <= upper,  |sum w - s| <= s*eps."""

    H: np.ndarray
    c: np.ndarray
    upper: float
    sum_target: float
    sum_slack: float

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64).ravel()
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "c", c)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != c.shape[0]:
            raise ShiftWeightError(
                f"H is {H.shape} but c has length {c.shape[0]}"
            )
        asym = np.abs(H - H.T).max(initial=0.0)
        if asym > 1e-10 * max(1.0, np.abs(H).max(initial=0.0)):
            raise ShiftWeightError(f"H is asymmetric (max |H - H'| = {asym:.3e})")
        if not self.upper > 0:
            raise ShiftWeightError("upper bound must be positive")
        if not self.sum_target > 0:
            raise ShiftWeightError("sum target must be positive")
        if self.sum_slack < 0:
            raise ShiftWeightError("sum slack must be >= 0")


@dataclass(frozen=True)
class SolverReport:
    solution: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    kkt_residual: float

    def __post_init__(self):
        object.__setattr__(
            self, "solution", np.asarray(self.solution, dtype=np.float64)
        )
        object.__setattr__(
            self, "objective_trace", np.asarray(self.objective_trace, dtype=np.float64)
        )


def _project_slab(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    total = v.sum()
    if total < lo:
        return v + (lo - total) / v.shape[0]
    if total > hi:
        return v - (total - hi) / v.shape[0]
    return v


def project_box_slab(
    v: np.ndarray,
    upper: float,
    sum_target: float,
    sum_slack: float,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= upper} n {|sum w - s| <= s*eps}.

    Uses Dykstra's alternating projections, which (unlike plain alternating
    projection) converges to the true nearest point of the intersection.
    Iteration stops when the iterate moves less than ``tol`` in the
    infinity norm and violates neither constraint by more than ``tol``.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    n = v.shape[0]
    lo = sum_target * (1.0 - sum_slack)
    hi = sum_target * (1.0 + sum_slack)
    if lo > n * upper:
        raise InfeasibleError(
            f"slab needs sum >= {lo:g} but the box caps it at {n * upper:g}"
        )
    x = v.copy()
    p = np.zeros(n)
    q = np.zeros(n)
    for _ in range(max_iter):
        y = np.clip(x + p, 0.0, upper)
        p = x + p - y
        x_new = _project_slab(y + q, lo, hi)
        q = y + q - x_new
        moved = np.abs(x_new - x).max(initial=0.0)
        x = x_new
        box_violation = max(
            0.0, float(-x.min(initial=0.0)), float(x.max(initial=0.0) - upper)
        )
        total = x.sum()
        slab_violation = max(0.0, lo - total, total - hi)
        if moved <= tol and box_violation <= tol and slab_violation <= tol:
            return x
    raise NotConvergedError("Dykstra projection failed to reach fixed point")


def solve_box_sum_qp(
    problem: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    check_psd: bool = True,
) -> SolverReport:
    """Projected gradient descent for the box-and-slab QP.

    Each iteration backtracks the step from 1.0 (halving, Armijo constant
    1e-4) along the projection arc; the objective trace is therefore
    non-increasing.  Convergence is declared when the unit-step projected
    gradient ``w - P(w - grad f(w))`` has 2-norm <= ``tol``.  A report with
    ``converged=False`` is returned when the iteration budget runs out;
    no exception is raised for that case.
    """
    H, c = problem.H, problem.c
    if check_psd:
        min_eig = float(np.linalg.eigvalsh(H).min())
        if min_eig < -1e-8:
            raise NonPsdError(f"smallest eigenvalue {min_eig:.3e} < -1e-8")

    def objective(w):
        return 0.5 * float(w @ (H @ w)) - float(problem.c @ w)

    def project(w):
        return project_box_slab(
            w, problem.upper, problem.sum_target, problem.sum_slack
        )

    w = project(np.ones_like(c))
    obj = objective(w)
    trace = [obj]
    residual = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = H @ w - c
        w_unit = project(w - grad)
        residual = float(np.linalg.norm(w - w_unit))
        if residual <= tol:
            converged = True
            break
        step = 1.0
        w_new, obj_new = w_unit, objective(w_unit)
        while obj_new > obj + _ARMIJO * float(grad @ (w_new - w)):
            step *= _BACKTRACK
            if step < _MIN_STEP:
                w_new = None
                break
            w_new = project(w - step * grad)
            obj_new = objective(w_new)
        if w_new is None:
            break  # no descent at float precision; residual reported as-is
        w, obj = w_new, obj_new
        trace.append(obj)
    return SolverReport(
        solution=w,
        objective_trace=np.array(trace),
        iterations=iterations,
        converged=converged,
        kkt_residual=residual,
    )


def kliep_ascent(
    basis_tr: np.ndarray,
    basis_te: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, SolverReport]:
    """Maximize sum_j log(basis_te @ alpha)_j over the feasible set
    {alpha >= 0, sum(basis_tr @ alpha) = n_tr}.

    After every gradient step the iterate is clipped to alpha >= 0 and
    rescaled by n_tr / sum(basis_tr @ alpha), which restores the equality
    constraint exactly.  Steps backtrack from 1.0 until the objective does
    not decrease (Armijo constant 1e-4 on the realized displacement), so
    the objective trace is non-decreasing.  Ascent stops when the relative
    objective change of an accepted step falls below ``tol``.
    """
    basis_tr = np.asarray(basis_tr, dtype=np.float64)
    basis_te = np.asarray(basis_te, dtype=np.float64)
    if basis_tr.ndim != 2 or basis_te.ndim != 2 or basis_tr.shape[1] != basis_te.shape[1]:
        raise ShiftWeightError(
            f"basis shapes {basis_tr.shape} and {basis_te.shape} are incompatible"
        )
    if basis_tr.min(initial=0.0) < 0 or basis_te.min(initial=0.0) < 0:
        raise ShiftWeightError("basis values must be nonnegative")
    if np.any(basis_te.max(axis=1) <= 0.0):
        raise DegenerateBasisError(
            "some test row has zero value under every basis function"
        )
    n_tr = basis_tr.shape[0]
    constraint_coef = basis_tr.sum(axis=0)  # sum over train rows, per basis
    total = constraint_coef.sum()
    if total <= 0.0:
        raise DegenerateBasisError("basis functions vanish on all training rows")

    def rescale(alpha):
        mass = float(constraint_coef @ alpha)
        if mass <= 0.0:
            return None
        return alpha * (n_tr / mass)

    def objective(alpha):
        vals = basis_te @ alpha
        if vals.min(initial=np.inf) <= 0.0:
            return -np.inf
        return float(np.log(vals).sum())

    alpha = rescale(np.ones(basis_tr.shape[1]))
    obj = objective(alpha)
    if not np.isfinite(obj):
        raise DegenerateBasisError(
            "initial feasible point has zero likelihood on some test row"
        )
    trace = [obj]
    converged = False
    rel_change = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad = basis_te.T @ (1.0 / (basis_te @ alpha))
        step = 1.0
        accepted = None
        while step >= _MIN_STEP:
            candidate = rescale(np.maximum(alpha + step * grad, 0.0))
            if candidate is not None:
                obj_new = objective(candidate)
                gain = _ARMIJO * max(float(grad @ (candidate - alpha)), 0.0)
                if obj_new >= obj + gain and np.isfinite(obj_new):
                    accepted = (candidate, obj_new)
                    break
            step *= _BACKTRACK
        if accepted is None:
            converged = True  # no feasible improving step exists
            rel_change = 0.0
            break
        alpha_new, obj_new = accepted
        rel_change = (obj_new - obj) / max(1.0, abs(obj))
        alpha, obj = alpha_new, obj_new
        trace.append(obj)
        if rel_change <= tol:
            converged = True
            break
    report = SolverReport(
        solution=alpha,
        objective_trace=np.array(trace),
        iterations=iterations,
        converged=converged,
        kkt_residual=float(rel_change),
    )
    return alpha, report
