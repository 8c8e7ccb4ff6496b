"""Shared numeric kernels: dual bisection, ball-constrained concave ascent, SVD.

Complex gradients use the Wirtinger convention: the gradient of a real
function f(x) is df/dx* = (df/dRe x + j df/dIm x) / 2, so the gradient of
||x||^2 is x and the first-order change of f along d is 2 Re(g^H d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class BisectionSpec:
    lower: float = 0.0
    upper: float = 1.0
    tol: float = 1e-8
    max_iters: int = 200
    max_doublings: int = 60

    def __post_init__(self):
        if self.lower < 0 or not self.lower < self.upper:
            raise ValueError("need 0 <= lower < upper")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol and max_iters must be positive")


@dataclass(frozen=True)
class PgSolverSpec:
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    grad_tol: float = 1e-6
    max_iters: int = 500
    armijo: float = 1e-4

    def __post_init__(self):
        if self.step_init <= 0 or self.grad_tol <= 0 or self.max_iters < 1:
            raise ValueError("step_init, grad_tol and max_iters must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")


def bisect_dual(eval_power: Callable[[float], float], p_max: float,
                spec: BisectionSpec = BisectionSpec()) -> float:
    """Smallest dual value nu >= 0 whose solution meets the power budget.

    ``eval_power`` must be non-increasing in nu. Returns 0 when the budget is
    slack at nu = 0; otherwise a nu on the feasible side with
    |eval_power(nu) - p_max| <= tol * p_max.
    """
    if eval_power(spec.lower) <= p_max:
        return spec.lower
    lo, hi = spec.lower, spec.upper
    for _ in range(spec.max_doublings):
        if eval_power(hi) <= p_max:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ConvergenceError(f"could not bracket dual variable below {hi:g}")
    p_hi = eval_power(hi)
    for _ in range(spec.max_iters):
        if p_max - p_hi <= spec.tol * p_max:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        p_mid = eval_power(mid)
        if p_mid > p_max:
            lo = mid
        else:
            hi, p_hi = mid, p_mid
    return hi


def project_ball(x: np.ndarray, radius2: float) -> np.ndarray:
    norm2 = float(np.vdot(x, x).real)
    if norm2 <= radius2:
        return x
    return x * math.sqrt(radius2 / norm2)


@dataclass
class PgResult:
    x: np.ndarray
    objective: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def maximize_concave_ball(objective: Callable[[np.ndarray], float],
                          gradient: Callable[[np.ndarray], np.ndarray],
                          radius2: float,
                          start: np.ndarray,
                          spec: PgSolverSpec = PgSolverSpec()) -> PgResult:
    """Projected-gradient ascent on {x : ||x||^2 <= radius2}.

    Steps use a Barzilai-Borwein guess (``step_init`` on the first iteration)
    followed by Armijo backtracking, so accepted iterates never lose
    objective. ``objective`` may return -inf to veto a trial point.
    """
    x = project_ball(np.asarray(start, dtype=complex), radius2)
    fx = float(objective(x))
    if not math.isfinite(fx):
        raise NumericError("objective is not finite at the starting point")
    trace = [fx]
    g = gradient(x)
    step = spec.step_init
    converged = False
    it = 0
    for it in range(1, spec.max_iters + 1):
        if not np.all(np.isfinite(g)):
            raise NumericError("gradient is not finite")
        mapping = project_ball(x + g, radius2) - x
        if np.linalg.norm(mapping) <= spec.grad_tol * (1.0 + abs(fx)):
            converged = True
            it -= 1
            break
        t = step
        accepted = False
        while t > 1e-300:
            x_new = project_ball(x + t * g, radius2)
            f_new = float(objective(x_new))
            if math.isnan(f_new):
                raise NumericError("objective returned NaN")
            if f_new >= fx + spec.armijo * 2.0 * float(np.vdot(g, x_new - x).real):
                accepted = True
                break
            t *= spec.backtrack_factor
        if not accepted or f_new < fx:
            # no representable ascent step left
            converged = True
            break
        g_new = gradient(x_new)
        s = x_new - x
        curv = -float(np.vdot(s, g_new - g).real)
        step = float(np.vdot(s, s).real) / curv if curv > 0 else 2.0 * t
        step = min(max(step, 1e-12), 1e12)
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
    return PgResult(x=x, objective=fx, trace=trace, iterations=it, converged=converged)


def svd(matrix: np.ndarray):
    """Thin SVD returning (U, singular values descending, V) with matrix = U diag(s) V^H."""
    matrix = np.asarray(matrix)
    # any inf or nan survives the sum
    if not math.isfinite(abs(matrix.sum())):
        raise NumericError("svd input contains non-finite entries")
    u, s, vh = np.linalg.svd(matrix, full_matrices=False)
    return u, s, vh.conj().T


class RidgeBallSolver:
    """Solve (A + (ridge + nu) I) X = B with the smallest nu >= 0 giving ||X||_F^2 <= p_max.

    ``A`` is Hermitian positive semidefinite. One eigendecomposition serves
    every trial nu. Directions with a zero total diagonal contribute nothing
    (pseudo-inverse), which covers the penalty-free fully digital case.
    """

    def __init__(self, a_herm: np.ndarray, rhs: np.ndarray, ridge: float):
        lam, q = np.linalg.eigh(a_herm)
        lam[lam < 0.0] = 0.0
        coef = q.conj().T @ rhs
        self._setup(lam, q, coef, (coef.real ** 2 + coef.imag ** 2).sum(axis=1), ridge)

    @classmethod
    def from_spectrum(cls, lam, q, coef, row_energy, ridge: float) -> "RidgeBallSolver":
        """Build from an eigendecomposition already at hand (negative eigenvalues clipped)."""
        solver = cls.__new__(cls)
        solver._setup(lam, q, coef, row_energy, ridge)
        return solver

    def _setup(self, lam, q, coef, row_energy, ridge):
        self.lam = lam
        self.q = q
        self.coef = coef
        self.row_energy = row_energy
        self.ridge = ridge
        self._zero = 1e-12 * max(float(lam[-1]) if lam.size else 0.0, ridge, 1.0)
        # plain floats: the root search evaluates power() several times on tiny arrays
        self._terms = list(zip(row_energy.tolist(), (lam + ridge).tolist()))

    def power(self, nu: float) -> float:
        zero = self._zero
        total = 0.0
        for energy, d in self._terms:
            d += nu
            if d > zero:
                total += energy / (d * d)
        return total

    def _power_and_slope(self, nu: float):
        zero = self._zero
        total = slope = 0.0
        for energy, d in self._terms:
            d += nu
            if d > zero:
                term = energy / (d * d)
                total += term
                slope -= 2.0 * term / d
        return total, slope

    def dual(self, p_max: float, spec: BisectionSpec = BisectionSpec(), start: float | None = None) -> float:
        """Same contract as ``bisect_dual(self.power, p_max, spec)``.

        Newton steps on 1/sqrt(power), which is close to linear in nu, with
        the bracket kept for a bisection fallback. ``start`` seeds the
        iteration when the budget binds (the dual of a nearby problem).
        """
        lo = spec.lower
        p, slope = self._power_and_slope(lo)
        if p <= p_max:
            return lo
        tol = spec.tol * p_max
        target = 1.0 / math.sqrt(p_max)
        hi = math.inf
        nu = lo
        if start is not None and start > lo:
            nu = start
            p, slope = self._power_and_slope(nu)
        for _ in range(spec.max_iters):
            if p > p_max:
                lo = nu
            else:
                hi = nu
                if p_max - p <= tol:
                    return nu
            if slope >= 0.0 or p <= 0.0:
                break
            if 0.0 < p - p_max <= 0.5 * tol:
                # root is within a first-order step: land just past it
                cand = nu + 2.0 * (p - p_max) / -slope
            else:
                cand = nu + (target - p ** -0.5) / (-0.5 * p ** -1.5 * slope)
            if not lo < cand < hi:
                cand = 0.5 * (lo + hi) if math.isfinite(hi) else max(2.0 * lo, spec.upper)
            if cand == nu:
                break
            nu = cand
            p, slope = self._power_and_slope(nu)
        return bisect_dual(self.power, p_max, spec)

    def solution(self, nu: float) -> np.ndarray:
        d = self.lam + (self.ridge + nu)
        inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > self._zero)
        return self.q @ (inv[:, None] * self.coef)

    def solve(self, p_max: float, spec: BisectionSpec = BisectionSpec()):
        nu = self.dual(p_max, spec)
        return self.solution(nu), nu


def solve_ridge_ball(a_herm: np.ndarray, rhs: np.ndarray, ridge: float, p_max: float,
                     spec: BisectionSpec = BisectionSpec()):
    """Same result as ``RidgeBallSolver(a_herm, rhs, ridge).solve(p_max, spec)``.

    With a positive ridge the nu = 0 system is positive definite, so one
    linear solve settles the common case of a slack budget; the
    eigendecomposition is built only when the budget binds.
    """
    if ridge > 0 and spec.lower == 0:
        shifted = a_herm + ridge * np.eye(a_herm.shape[0])
        x = np.linalg.solve(shifted, rhs)
        if float(np.vdot(x, x).real) <= p_max:
            return x, 0.0
    return RidgeBallSolver(a_herm, rhs, ridge).solve(p_max, spec)


def solve_ridge_ball_batch(a_herm: np.ndarray, rhs: np.ndarray, ridge, p_max: float,
                           spec: BisectionSpec = BisectionSpec(), start=None):
    """``RidgeBallSolver(a[b], rhs[b], ridge[b]).solve(p_max, spec)`` for a stack of problems.

    ``a_herm`` is (B, n, n), ``rhs`` is (B, n, m) and ``ridge`` is a scalar or
    length-B array. The eigendecompositions and the final solves are
    stacked; the scalar root searches run on plain floats, which beats
    array arithmetic at these sizes. ``start`` optionally seeds each root
    search. Returns the (B, n, m) solutions and the B duals.
    """
    lam, q = np.linalg.eigh(a_herm)
    lam[lam < 0.0] = 0.0
    coef = q.conj().swapaxes(-1, -2) @ rhs
    energy = (coef.real ** 2 + coef.imag ** 2).sum(axis=-1)
    ridges = np.broadcast_to(np.asarray(ridge, dtype=float), lam.shape[:1]).tolist()
    starts = [None] * len(ridges) if start is None else np.asarray(start, dtype=float).tolist()
    nu = np.array([RidgeBallSolver.from_spectrum(lam[b], q[b], coef[b], energy[b], ridges[b]).dual(
        p_max, spec, starts[b]) for b in range(len(ridges))])
    base = lam + np.asarray(ridges)[:, None]
    zero = 1e-12 * np.maximum(np.maximum(lam[:, -1], ridges), 1.0)[:, None]
    d = base + nu[:, None]
    inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > zero)
    return q @ (inv[..., None] * coef), nu
