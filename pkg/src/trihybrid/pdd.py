"""WMMSE-based penalty dual decomposition for hybrid beamforming at fixed RCs.

The auxiliary precoder F (n_t x K) is tied to the hybrid product F_RF F_BB
by the penalty (1/2mu) ||F - F_RF F_BB||_F^2. The stacked vector f = vec(F)
puts user k's column in block k, so the block-diagonal systems of the
closed-form F update separate per column and share one n_t x n_t matrix.
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import (BeamformerSet, PowerModel, energy_efficiency, fro2, sinr_per_user, spectral_efficiency,
                      total_power)
from .numerics import BisectionSpec, NumericError, RidgeBallSolver, solve_ridge_ball_batch, svd
from .report import SolveReport
from .system_model import Structure, SystemConfig

LN2 = math.log(2.0)


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class SeOptions:
    inner_tol: float = 1e-4
    inner_max: int = 100
    outer_tol: float = 1e-4
    outer_max: int = 15
    mu_init: float = 1.0
    mu_factor: float = 0.5
    residual_tol: float = 1e-4  # relative to sqrt(p_max)
    fill_power: bool = False
    track_objective: bool = False
    bisection: BisectionSpec = field(default_factory=BisectionSpec)

    def __post_init__(self):
        if not 0 < self.mu_factor < 1:
            raise ValueError("mu_factor must lie in (0, 1)")
        if self.mu_init <= 0:
            raise ValueError("mu_init must be positive")


# ---------------------------------------------------------------- shared blocks

def init_beamformers(h_eff: np.ndarray, config: SystemConfig,
                     structure: Structure | None = None) -> BeamformerSet:
    """Maximum-ratio start: F along H at full power, F_RF from the channel phases."""
    structure = config.structure if structure is None else Structure.parse(structure)
    h_eff = np.asarray(h_eff, dtype=complex)
    h_norm = np.linalg.norm(h_eff)
    if h_norm == 0:
        raise DegenerateInputError("effective channel is all zero")
    n_t, k = h_eff.shape
    f_aux = math.sqrt(config.p_max) / h_norm * h_eff
    if structure is Structure.FULLY_DIGITAL:
        return BeamformerSet(np.eye(n_t), f_aux.copy(), f_aux, structure)
    if structure is Structure.FULLY_CONNECTED:
        f_rf = np.exp(1j * np.angle(h_eff))
    else:
        n_s = n_t // k
        f_rf = np.zeros((n_t, k), dtype=complex)
        for j in range(k):
            rows = slice(j * n_s, (j + 1) * n_s)
            f_rf[rows, j] = np.exp(1j * np.angle(h_eff[rows, j]))
    f_bb = math.sqrt(config.p_max) / np.linalg.norm(f_rf) * np.eye(k, dtype=complex)
    return BeamformerSet(f_rf, f_bb, f_aux, structure)


@functools.lru_cache(maxsize=64)
def block_mask(n_t: int, k: int) -> np.ndarray:
    """0/1 pattern of the partially connected analog matrix (N_s x 1 blocks on the diagonal)."""
    mask = np.kron(np.eye(k), np.ones((n_t // k, 1)))
    mask.setflags(write=False)
    return mask


def update_f_rf(f_aux: np.ndarray, f_bb: np.ndarray, structure: Structure) -> np.ndarray:
    """Phase-only analog update: exact per block for PC, the usual heuristic for FC."""
    target = f_aux @ f_bb.conj().T
    if structure is Structure.FULLY_CONNECTED:
        return np.exp(1j * np.angle(target))
    if structure is Structure.PARTIALLY_CONNECTED:
        return block_mask(*target.shape) * np.exp(1j * np.angle(target))
    raise ValueError("fully digital structure has no analog stage")


def update_f_bb(f_aux: np.ndarray, f_rf: np.ndarray, structure: Structure) -> np.ndarray:
    if structure is Structure.PARTIALLY_CONNECTED:
        gram = f_rf.conj().T @ f_rf
        return np.linalg.solve(gram, f_rf.conj().T @ f_aux)
    if structure is Structure.FULLY_CONNECTED:
        u, _, v = svd(f_aux.conj().T @ f_rf)
        f_bb = v @ u.conj().T
        return f_bb * math.sqrt(fro2(f_aux) / fro2(f_rf @ f_bb))
    raise ValueError("fully digital structure has no digital/analog split")


def split_hybrid(f_aux: np.ndarray, f_bb: np.ndarray, structure: Structure):
    """One F_RF then F_BB pass toward ``f_aux``."""
    f_rf = update_f_rf(f_aux, f_bb, structure)
    return f_rf, update_f_bb(f_aux, f_rf, structure)


def repair_power(bf: BeamformerSet, p_max: float, fill: bool = False) -> BeamformerSet:
    """Scale the digital stage so ||F_RF F_BB||^2 <= p_max (== p_max with ``fill``)."""
    pt = fro2(bf.precoder)
    if pt == 0 or (pt <= p_max and not fill):
        return bf
    scale = math.sqrt(p_max / pt)
    return BeamformerSet(bf.f_rf, bf.f_bb * scale, bf.f_aux, bf.structure)


# ---------------------------------------------------------------- WMMSE blocks

def update_u(h_eff: np.ndarray, f_aux: np.ndarray, noise_power: float) -> np.ndarray:
    gains = h_eff.conj().T @ f_aux  # gains[k, i] = h_k^H f_i
    denom = np.sum(np.abs(gains) ** 2, axis=1) + noise_power
    return np.conj(np.diag(gains)) / denom


def mse(h_eff: np.ndarray, f_aux: np.ndarray, u: np.ndarray, noise_power: float) -> np.ndarray:
    gains = h_eff.conj().T @ f_aux
    total = np.sum(np.abs(gains) ** 2, axis=1) + noise_power
    return np.abs(u) ** 2 * total + 1.0 - 2.0 * np.real(u * np.diag(gains))


def update_w(e_values) -> np.ndarray:
    e_values = np.asarray(e_values, dtype=float)
    if np.any(e_values <= 0):
        raise ValueError("MSE values must be positive")
    return 1.0 / (e_values * LN2)


def update_f_aux(h_eff: np.ndarray, bf: BeamformerSet, u: np.ndarray, w: np.ndarray,
                 mu: float | None, p_max: float,
                 bisection: BisectionSpec = BisectionSpec(), return_nu: bool = False):
    """Closed-form F minimizing the weighted MSE plus penalty inside the power ball.

    ``mu=None`` drops the penalty term (plain WMMSE).
    """
    ridge = 0.0 if mu is None else 1.0 / (2.0 * mu)
    f_new, nu = _f_step(h_eff, h_eff.conj().T, u, w, ridge, bf.precoder, p_max, bisection)
    return (f_new, nu) if return_nu else f_new


def _f_step(h_eff, h_herm, u, w, ridge, precoder, p_max, bisection):
    weight = w * (u.real ** 2 + u.imag ** 2)
    a = (h_eff * weight) @ h_herm
    rhs = h_eff * (w * u.conj())
    if ridge:
        rhs = rhs + ridge * precoder
    # rate maximization nearly always spends the whole budget, so go straight to the dual search
    return RidgeBallSolver(a, rhs, ridge).solve(p_max, bisection)


def penalized_objective(h_eff, bf: BeamformerSet, u, w, mu: float | None, noise_power: float) -> float:
    """L1: sum_k (w_k e_k - log2 w_k) + (1/2mu) ||F - F_RF F_BB||^2."""
    e = mse(h_eff, bf.f_aux, u, noise_power)
    value = float(np.sum(w * e - np.log2(w)))
    if mu is not None:
        value += fro2(bf.f_aux - bf.precoder) / (2.0 * mu)
    return value


def budget_rate(h_eff, precoder, noise_power: float, p_max: float, h_herm=None):
    """(SE, transmit power) of ``precoder`` after scaling it down into the budget.

    Scaling F by c scales every |h^H f|^2 by c^2, which is the same as
    dividing the noise by c^2, so no scaled copy is formed.
    """
    pt = fro2(precoder)
    if pt > p_max:
        noise_power = noise_power * pt / p_max
        pt = p_max
    gains = (h_eff.conj().T if h_herm is None else h_herm) @ precoder
    g2 = (gains * gains.conj()).real
    sig = g2.diagonal()
    return float(np.log2(1.0 + sig / (g2.sum(axis=1) - sig + noise_power)).sum()), pt


def hybrid_se(h_eff, bf: BeamformerSet, config: SystemConfig) -> float:
    return budget_rate(h_eff, bf.precoder, config.noise_power, config.p_max)[0]


def _u_and_mse(h_herm, f_aux, noise_power):
    """update_u and mse at that u from one gain product (takes H^H)."""
    gains = h_herm @ f_aux
    g2 = (gains * gains.conj()).real
    total = g2.sum(axis=1) + noise_power
    return gains.diagonal().conj() / total, 1.0 - g2.diagonal() / total


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-12)


def solve_se(h_eff: np.ndarray, config: SystemConfig, pm: PowerModel | None = None,
             opts: SeOptions = SeOptions(), structure: Structure | None = None):
    """Sum-SE maximization at fixed RC selection.

    Returns the repaired beamformers and a report whose ``trace`` carries the
    SE of the hybrid precoder after each inner iteration.
    """
    return solve_se_batch([h_eff], config, pm, opts, structure)[0]


def _stack_init(channels, config, structure):
    inits = [init_beamformers(h, config, structure) for h in channels]
    return (np.stack([bf.f_rf for bf in inits]), np.stack([bf.f_bb for bf in inits]),
            np.stack([bf.f_aux for bf in inits]))


def _batch_fro2(x: np.ndarray) -> np.ndarray:
    return (x.real ** 2 + x.imag ** 2).sum(axis=(1, 2))


def _batch_rate(h_herm, precoder, noise_power, p_max):
    """budget_rate over a stack of precoders."""
    pt = _batch_fro2(precoder)
    noise = noise_power * np.maximum(pt / p_max, 1.0)
    gains = h_herm @ precoder
    g2 = (gains * gains.conj()).real
    sig = np.diagonal(g2, axis1=1, axis2=2)
    return np.log2(1.0 + sig / (g2.sum(axis=2) - sig + noise[:, None])).sum(axis=1)


def _batch_f_bb(f_aux, f_rf, structure):
    """update_f_bb over a stack."""
    rf_herm = f_rf.conj().swapaxes(1, 2)
    if structure is Structure.PARTIALLY_CONNECTED:
        return np.linalg.solve(rf_herm @ f_rf, rf_herm @ f_aux)
    cross = f_aux.conj().swapaxes(1, 2) @ f_rf
    if not np.isfinite(cross).all():
        raise NumericError("svd input contains non-finite entries")
    u, _, vh = np.linalg.svd(cross, full_matrices=False)
    f_bb = vh.conj().swapaxes(1, 2) @ u.conj().swapaxes(1, 2)
    scale = np.sqrt(_batch_fro2(f_aux) / _batch_fro2(f_rf @ f_bb))
    return f_bb * scale[:, None, None]


def solve_se_batch(channels, config: SystemConfig, pm: PowerModel | None = None,
                   opts: SeOptions = SeOptions(), structure: Structure | None = None):
    """``solve_se`` on several effective channels at once.

    Every channel follows its own iteration, penalty schedule and stopping
    decisions; the channels only share the array operations, which removes
    most of the per-call overhead when many small problems are solved (the
    testing sets of coordinate descent). Returns a list of
    (beamformers, report) in input order; each report's wall time is its
    share of the batch.
    """
    t0 = time.perf_counter()
    structure = config.structure if structure is None else Structure.parse(structure)
    h_all = np.stack([np.asarray(c, dtype=complex) for c in channels])
    n_batch = h_all.shape[0]
    sigma2, p_max = config.noise_power, config.p_max
    digital = structure is Structure.FULLY_DIGITAL
    res_tol = opts.residual_tol * math.sqrt(p_max)
    inner_cap = opts.inner_max * opts.outer_max if digital else opts.inner_max
    mask = block_mask(*h_all.shape[1:]) if structure is Structure.PARTIALLY_CONNECTED else None
    track = opts.track_objective

    f_rf, f_bb, f_aux = _stack_init(h_all, config, structure)
    h_herm = h_all.conj().swapaxes(1, 2)
    precoder = f_aux.copy() if digital else f_rf @ f_bb
    se_start = _batch_rate(h_herm, precoder, sigma2, p_max)
    # working state of the unfinished problems, compacted whenever one finishes
    st = dict(ids=np.arange(n_batch), h=h_all, hh=h_herm, f_rf=f_rf, f_bb=f_bb, f_aux=f_aux,
              precoder=precoder, mu=np.full(n_batch, opts.mu_init), nu=np.zeros(n_batch),
              se_prev=np.full(n_batch, np.nan), se_outer=se_start.copy(), best_se=se_start.copy(),
              inner=np.zeros(n_batch, dtype=int), outer=np.ones(n_batch, dtype=int))
    best = [None] * n_batch  # None keeps the starting point
    out_state = [None] * n_batch
    out_outer = np.ones(n_batch, dtype=int)
    converged = np.zeros(n_batch, dtype=bool)
    trace_rows, residual_rows = [], []
    objective_traces = [[] for _ in range(n_batch)]
    last_w = [None] * n_batch

    def objective(b, u, w, mu_b, rf, bb, aux):
        return penalized_objective(h_all[b], BeamformerSet(rf, bb, aux, structure), u, w, mu_b, sigma2)

    while st["ids"].size:
        ids, h, hh = st["ids"], st["h"], st["hh"]
        gains = hh @ st["f_aux"]
        g2 = (gains * gains.conj()).real
        total = g2.sum(axis=2) + sigma2
        u = np.diagonal(gains, axis1=1, axis2=2).conj() / total
        w = update_w(1.0 - np.diagonal(g2, axis1=1, axis2=2) / total)
        weight = w * (u.real ** 2 + u.imag ** 2)
        a_mat = (h * weight[:, None, :]) @ hh
        rhs = h * (w * u.conj())[:, None, :]
        if digital:
            ridge = 0.0
        else:
            ridge = 0.5 / st["mu"]
            rhs += ridge[:, None, None] * st["precoder"]
        new_aux, st["nu"] = solve_ridge_ball_batch(a_mat, rhs, ridge, p_max, opts.bisection, start=st["nu"])
        if track:
            mus = [None if digital else float(m) for m in st["mu"]]
            steps = [[] for _ in ids]
            for j, b in enumerate(ids):
                old = (st["f_rf"][j], st["f_bb"][j], st["f_aux"][j])
                if last_w[b] is not None:
                    steps[j].append(("u", objective(b, u[j], last_w[b], mus[j], *old)))
                steps[j].append(("w", objective(b, u[j], w[j], mus[j], *old)))
                last_w[b] = w[j]
        st["f_aux"] = new_aux
        if digital:
            st["f_bb"] = st["precoder"] = new_aux
        else:
            new_rf = np.exp(1j * np.angle(new_aux @ st["f_bb"].conj().swapaxes(1, 2)))
            if mask is not None:
                new_rf *= mask
            if track:
                for j, b in enumerate(ids):
                    steps[j].append(("f", objective(b, u[j], w[j], mus[j], st["f_rf"][j], st["f_bb"][j], new_aux[j])))
                    steps[j].append(("f_rf", objective(b, u[j], w[j], mus[j], new_rf[j], st["f_bb"][j], new_aux[j])))
            st["f_rf"] = new_rf
            st["f_bb"] = _batch_f_bb(new_aux, new_rf, structure)
            st["precoder"] = new_rf @ st["f_bb"]
        if track:
            for j, b in enumerate(ids):
                steps[j].append(("f" if digital else "f_bb",
                                 objective(b, u[j], w[j], mus[j], st["f_rf"][j], st["f_bb"][j], new_aux[j])))
                objective_traces[b].append({"mu": mus[j], "steps": steps[j]})

        se = _batch_rate(hh, st["precoder"], sigma2, p_max)
        residual = np.sqrt(_batch_fro2(new_aux - st["precoder"]))
        trace_rows.append((ids, se))
        residual_rows.append((ids, residual))
        improved = np.flatnonzero(se > st["best_se"])
        for j in improved:
            best[ids[j]] = (st["f_rf"][j].copy(), st["f_bb"][j].copy(), new_aux[j].copy())
        st["best_se"] = np.maximum(se, st["best_se"])

        se_prev = st["se_prev"]
        with np.errstate(invalid="ignore"):
            inner_done = np.abs(se - se_prev) <= opts.inner_tol * np.maximum(np.abs(se_prev), 1e-12)
        st["se_prev"] = se
        st["inner"] += 1
        end_inner = inner_done | (st["inner"] >= inner_cap)
        if digital:
            done_ok = inner_done
            finished = end_inner
        else:
            se_outer = st["se_outer"]
            done_ok = (end_inner & (residual <= res_tol)
                       & (np.abs(se - se_outer) <= opts.outer_tol * np.maximum(np.abs(se_outer), 1e-12)))
            finished = done_ok | (end_inner & (st["outer"] >= opts.outer_max))
            advance = end_inner & ~finished
            if advance.any():
                st["se_outer"] = np.where(advance, se, se_outer)
                st["mu"] = np.where(advance, st["mu"] * opts.mu_factor, st["mu"])
                st["outer"] = st["outer"] + advance
                st["se_prev"] = np.where(advance, np.nan, st["se_prev"])
                st["inner"] = np.where(advance, 0, st["inner"])
                for b in ids[advance]:
                    last_w[b] = None
        if finished.any():
            for j in np.flatnonzero(finished):
                b = ids[j]
                converged[b] = done_ok[j]
                out_outer[b] = st["outer"][j]
                out_state[b] = (st["f_rf"][j], st["f_bb"][j], st["f_aux"][j])
            keep = ~finished
            st = {key: value[keep] for key, value in st.items()}

    traces = [[] for _ in range(n_batch)]
    residual_traces = [[] for _ in range(n_batch)]
    for rows, dest in ((trace_rows, traces), (residual_rows, residual_traces)):
        for ids, values in rows:
            for b, v in zip(ids.tolist(), values.tolist()):
                dest[b].append(v)

    share_ms = (time.perf_counter() - t0) * 1e3 / n_batch
    results = []
    for b in range(n_batch):
        # an unconverged run falls back to its best iterate (the start if nothing beat it)
        if converged[b]:
            final = BeamformerSet(*out_state[b], structure)
        elif best[b] is None:
            final = init_beamformers(h_all[b], config, structure)
        else:
            final = BeamformerSet(*best[b], structure)
        final = repair_power(final, p_max, fill=opts.fill_power)
        sinr = sinr_per_user(h_all[b], final.precoder, sigma2)
        se_b = spectral_efficiency(sinr)
        pt = fro2(final.precoder)
        report = SolveReport(objective="SE", value=se_b, se=se_b, pt=pt, trace=traces[b],
                             penalty_residual=final.penalty_residual(), iterations=len(traces[b]),
                             outer_iterations=int(out_outer[b]), converged=bool(converged[b]))
        if pm is not None:
            report.p_total = total_power(pt, config, pm, structure)
            report.ee = energy_efficiency(se_b, report.p_total)
        report.extra["residual_trace"] = residual_traces[b]
        if track:
            report.extra["objective_trace"] = objective_traces[b]
        report.wall_time_ms = share_ms
        results.append((final, report))
    return results
