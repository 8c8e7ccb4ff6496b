"""Brute-force references: feasible-set enumeration, exhaustive RC search, numeric gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import NumericError
from .rc_cod import InnerSolver, solve_many
from .system_model import ExtendedChannel, RcSelection, SystemConfig, apply_selection

ENUMERATION_CAP = 100_000
_CHUNK = 64  # selections solved per batch


class EnumerationLimitError(RuntimeError):
    pass


@dataclass
class OracleReport:
    best_value: float
    best_selection: RcSelection | None
    evaluated_count: int
    values: list = field(default_factory=list)


def feasible_count(n_em: int, n_t: int, d_min: int) -> int:
    """Number of n_t-subsets of 1..n_em with consecutive gaps of at least d_min."""
    free = n_em - (n_t - 1) * (d_min - 1)
    if n_t < 0 or free < n_t:
        return 0
    return math.comb(free, n_t)


def enumerate_feasible(config: SystemConfig, cap: int = ENUMERATION_CAP) -> list[RcSelection]:
    """Every feasible selection once, in lexicographic order of the index sets."""
    n_em, n_t, d = config.n_em, config.n_t, config.d_min
    total = feasible_count(n_em, n_t, d)
    if total > cap:
        raise EnumerationLimitError(f"{total} feasible selections exceed the cap of {cap}")
    out: list[RcSelection] = []

    def extend(prefix: list[int], start: int):
        remaining = n_t - len(prefix)
        if remaining == 0:
            out.append(RcSelection.from_indices(prefix, n_em))
            return
        # the last index must leave room for the remaining ones at spacing d
        last_start = n_em - (remaining - 1) * d
        for i in range(start, last_start + 1):
            prefix.append(i)
            extend(prefix, i + d)
            prefix.pop()

    extend([], 1)
    return out


def exhaustive_rc_opt(channel: ExtendedChannel | np.ndarray, config: SystemConfig,
                      inner_solver: InnerSolver, cap: int = ENUMERATION_CAP) -> OracleReport:
    """Run ``inner_solver`` on every feasible selection; ties keep the lexicographically first."""
    best_value, best_sel = -math.inf, None
    values = []
    selections = enumerate_feasible(config, cap)
    for start in range(0, len(selections), _CHUNK):
        chunk = selections[start:start + _CHUNK]
        for sel, (_, rep) in zip(chunk, solve_many(inner_solver, [apply_selection(channel, s) for s in chunk])):
            value = float(rep.value)
            values.append(value)
            if value > best_value:
                best_value, best_sel = value, sel
    return OracleReport(best_value=best_value, best_selection=best_sel,
                        evaluated_count=len(selections), values=values)


def finite_difference_gradient(objective: Callable[[np.ndarray], float], point, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a real function of a complex array.

    Returns df/dx* = (df/dRe x + j df/dIm x) / 2, so ||x||^2 gives x back.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=complex)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        parts = []
        for direction in (step, 1j * step):
            orig = flat_x[i]
            flat_x[i] = orig + direction
            f_plus = float(objective(x))
            flat_x[i] = orig - direction
            f_minus = float(objective(x))
            flat_x[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(f"objective not finite near coordinate {i}")
            parts.append((f_plus - f_minus) / (2.0 * step))
        flat_g[i] = 0.5 * (parts[0] + 1j * parts[1])
    return grad
