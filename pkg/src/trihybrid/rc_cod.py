"""Coordinate-descent RC selection over a pluggable inner beamforming solver.

One coordinate (a position in the sorted index set) is revisited per
iteration: every feasible replacement of that index is solved and the best
one is kept if it strictly beats the incumbent. The search stops once a full
cycle of coordinates leaves the selection unchanged.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ee_solvers import EeOptions, solve_ee_dqtfp, solve_ee_ldtfp
from .metrics import BeamformerSet, PowerModel
from .pdd import SeOptions, solve_se, solve_se_batch
from .report import SolveReport
from .system_model import (ConfigurationError, ExtendedChannel, RcSelection, SystemConfig, apply_selection,
                           check_feasible, fpa_baseline_selection)

# Maps an effective channel (n_t x K) to the beamformers found for it and a
# report whose ``value`` is the objective being maximized. A solver may also
# offer ``batch(list_of_channels)`` returning the same pairs in order, which
# the searches use to solve a whole testing set at once.
InnerSolver = Callable[[np.ndarray], "tuple[BeamformerSet | None, SolveReport]"]


def solve_many(inner_solver: InnerSolver, channels: list) -> list:
    """``[inner_solver(h) for h in channels]``, batched when the solver supports it."""
    if not channels:
        return []
    batch = getattr(inner_solver, "batch", None)
    if batch is not None:
        return list(batch(channels))
    return [inner_solver(h) for h in channels]


@dataclass(frozen=True)
class CodOptions:
    max_sweeps: int = 5
    # "gain" ranks the spaced candidate grid by channel gain; "fpa" starts on the fixed grid
    init: str = "gain"

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.init not in ("gain", "fpa"):
            raise ValueError(f"unknown init {self.init!r}; expected 'gain' or 'fpa'")


@dataclass
class CodState:
    current: RcSelection
    cached_value: float
    p: int = 0
    history: list = field(default_factory=list)


def candidate_indices(config: SystemConfig) -> list[int]:
    d = config.d_min
    return [(n - 1) * d + 1 for n in range(1, math.ceil(config.n_em / d) + 1)]


def init_selection(channel: ExtendedChannel | np.ndarray, config: SystemConfig) -> RcSelection:
    """Pick the n_t strongest points of the D_min-spaced candidate grid.

    Strength is the sum over users of |h_bar| at that point; ties go to the
    lower index.
    """
    cands = candidate_indices(config)
    if len(cands) < config.n_t:
        raise ConfigurationError(
            f"only {len(cands)} spaced candidates for {config.n_t} ports (n_em={config.n_em}, d_min={config.d_min})")
    h_bar = channel.h_bar if isinstance(channel, ExtendedChannel) else np.asarray(channel)
    gains = np.abs(h_bar[np.asarray(cands) - 1, :]).sum(axis=1)
    order = sorted(range(len(cands)), key=lambda n: (-gains[n], n))
    return RcSelection.from_indices([cands[n] for n in order[:config.n_t]], config.n_em)


def build_testing_set(current: RcSelection, m: int, config: SystemConfig) -> list[RcSelection]:
    """The incumbent followed by every feasible swap of its m-th index (1-based), by ascending new index."""
    idx = list(current.index_set)
    if not 1 <= m <= len(idx):
        raise ValueError(f"coordinate m={m} outside 1..{len(idx)}")
    out = [current]
    seen = {current}
    others = set(idx[:m - 1] + idx[m:])
    for n in range(1, config.n_em + 1):
        if n in others:
            continue
        sel = RcSelection.from_indices(sorted(others | {n}), config.n_em)
        if sel in seen or not check_feasible(sel.r, config):
            continue
        seen.add(sel)
        out.append(sel)
    return out


def run_cod(channel: ExtendedChannel | np.ndarray, config: SystemConfig, inner_solver: InnerSolver,
            opts: CodOptions = CodOptions(), initial: RcSelection | None = None):
    """Coordinate descent over RC selections.

    ``initial`` overrides ``opts.init``. Returns the best selection, its
    beamformers and the inner report for it; ``report.extra`` carries the
    monotone ``cod_trace`` (value before the first and after every
    iteration), ``cod_iterations``, ``cod_evaluations`` and
    ``cod_converged``. ``report.converged`` is false if either the search hit
    its cap or the inner solve of the returned selection did not converge.
    """
    t0 = time.perf_counter()
    if initial is None:
        initial = fpa_baseline_selection(config) if opts.init == "fpa" else init_selection(channel, config)
    verdict = check_feasible(initial.r, config)
    if not verdict:
        raise ConfigurationError(f"initial selection {initial.index_set} is infeasible: {verdict.violated}")

    # the inner solver is deterministic, so every selection is solved at most once
    memo: dict[RcSelection, tuple] = {}

    def evaluate_all(selections):
        fresh = [sel for sel in dict.fromkeys(selections) if sel not in memo]
        solved = solve_many(inner_solver, [apply_selection(channel, sel) for sel in fresh])
        for sel, (bf, rep) in zip(fresh, solved):
            memo[sel] = (float(rep.value), bf, rep)
        return [memo[sel][0] for sel in selections]

    def evaluate(sel: RcSelection):
        evaluate_all([sel])
        return memo[sel]

    state = CodState(current=initial, cached_value=evaluate(initial)[0])
    state.history.append((initial, state.cached_value))
    trace = [state.cached_value]
    selections = [initial]  # selections[p] is the incumbent after iteration p
    cap = opts.max_sweeps * config.n_t
    converged = False
    while state.p < cap:
        state.p += 1
        m = (state.p - 1) % config.n_t + 1
        best_sel, best_val = state.current, state.cached_value
        swaps = build_testing_set(state.current, m, config)[1:]
        for sel, value in zip(swaps, evaluate_all(swaps)):
            if value > best_val:
                best_sel, best_val = sel, value
        state.current, state.cached_value = best_sel, best_val
        state.history.append((best_sel, best_val))
        trace.append(best_val)
        selections.append(best_sel)
        if state.p >= config.n_t + 1 and selections[state.p] == selections[state.p - config.n_t]:
            converged = True
            break

    _, bf, inner_report = memo[state.current]
    report = copy.copy(inner_report)
    report.extra = dict(inner_report.extra)
    report.extra.update(cod_trace=trace, cod_iterations=state.p, cod_evaluations=len(memo),
                        cod_converged=converged, inner_converged=inner_report.converged,
                        cod_wall_time_ms=(time.perf_counter() - t0) * 1e3)
    report.converged = converged and inner_report.converged
    return state.current, bf, report


@dataclass(frozen=True)
class SeInnerSolver:
    """SE maximization as an inner solver, with a batched form for testing sets."""
    config: SystemConfig
    pm: PowerModel | None = None
    opts: SeOptions = SeOptions()

    def __call__(self, h_eff):
        return solve_se(h_eff, self.config, self.pm, self.opts)

    def batch(self, channels):
        return solve_se_batch(channels, self.config, self.pm, self.opts)


def se_inner_solver(config: SystemConfig, pm: PowerModel | None = None,
                    opts: SeOptions = SeOptions()) -> InnerSolver:
    return SeInnerSolver(config, pm, opts)


def ee_inner_solver(config: SystemConfig, pm: PowerModel = PowerModel(), method: str = "ldtfp",
                    opts=None) -> InnerSolver:
    solver = {"ldtfp": solve_ee_ldtfp, "dqtfp": solve_ee_dqtfp}.get(method.lower())
    if solver is None:
        raise ValueError(f"unknown EE method {method!r}")
    opts = EeOptions() if opts is None else opts

    def solve(h_eff):
        return solver(h_eff, config, pm, opts)
    return solve
