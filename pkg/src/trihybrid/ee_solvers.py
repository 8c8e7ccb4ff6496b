"""Energy-efficiency maximization at fixed RC selection.

Two fractional-programming routes share the penalty-split skeleton of the SE
solver:

* DQTFP: a quadratic transform on the EE ratio (auxiliary ``rho``) and on
  every SINR (auxiliaries ``tau``); the F step is a concave maximization over
  the power ball solved by projected gradient.
* LDTFP: Dinkelbach's transform on the EE ratio (``omega``), a Lagrange dual
  transform pulling the SINRs out of the logarithms (``t``), then a quadratic
  transform (``z``); every step is closed form.

All EE values reported are recomputed from the final power-repaired hybrid
precoder, never taken from a surrogate.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import (BeamformerSet, PowerModel, circuit_power, energy_efficiency, fro2, sinr_per_user,
                      spectral_efficiency, total_power)
from .numerics import BisectionSpec, PgSolverSpec, maximize_concave_ball, solve_ridge_ball
from .pdd import LN2, budget_rate, init_beamformers, repair_power, update_f_bb, update_f_rf
from .report import SolveReport
from .system_model import Structure, SystemConfig


@dataclass(frozen=True)
class EeOptions:
    inner_tol: float = 1e-4
    inner_max: int = 100
    outer_tol: float = 1e-4
    outer_max: int = 15
    mu_init: float = 1.0
    mu_factor: float = 0.5
    residual_tol: float = 1e-4  # relative to sqrt(p_max)
    # LDTFP: True uses the Dinkelbach numerator sum(log2(1 + sinr)) in the omega
    # update; False uses sum(1 + sinr), which settles at a lower EE.
    dinkelbach_log_numerator: bool = True
    # DQTFP: multiply the fractional part of the F objective by the initial total
    # power so it is in SE units like the penalty; without this the penalty
    # swamps the EE-scaled surrogate and F never leaves its start.
    dqtfp_penalty_in_se_units: bool = True
    track_objective: bool = False
    bisection: BisectionSpec = field(default_factory=BisectionSpec)
    pg: PgSolverSpec = field(default_factory=PgSolverSpec)

    def __post_init__(self):
        if not 0 < self.mu_factor < 1:
            raise ValueError("mu_factor must lie in (0, 1)")
        if self.mu_init <= 0:
            raise ValueError("mu_init must be positive")


def _gains(h_eff, f_aux):
    return h_eff.conj().T @ f_aux  # [k, i] = h_k^H f_i


def interference_plus_noise(h_eff, f_aux, noise_power):
    g2 = np.abs(_gains(h_eff, f_aux)) ** 2
    return g2.sum(axis=1) - np.diag(g2) + noise_power


def aux_sinr(h_eff, f_aux, noise_power):
    return sinr_per_user(h_eff, f_aux, noise_power)


# ---------------------------------------------------------------- DQTFP blocks

def update_rho(se: float, pt: float, pm: PowerModel, config: SystemConfig,
               structure: Structure | None = None) -> float:
    denom = pt / pm.eta_pa + circuit_power(config, pm, structure)
    return math.sqrt(max(se, 0.0)) / denom


def update_tau(h_eff, f_aux, noise_power) -> np.ndarray:
    gains = _gains(h_eff, f_aux)
    g2 = np.abs(gains) ** 2
    return np.diag(gains) / (g2.sum(axis=1) - np.diag(g2) + noise_power)


def qt_sinr_surrogate(h_eff, f_aux, tau, noise_power) -> np.ndarray:
    """g_k(f) = 2 Re(tau_k^* h_k^H f_k) - |tau_k|^2 (interference_k + noise)."""
    gains = _gains(h_eff, f_aux)
    g2 = np.abs(gains) ** 2
    ipn = g2.sum(axis=1) - np.diag(g2) + noise_power
    return 2.0 * np.real(np.conj(tau) * np.diag(gains)) - np.abs(tau) ** 2 * ipn


class DqtfpFObjective:
    """The F-subproblem objective over the power ball and its conjugate gradient.

    Returns -inf where a log argument or the SE surrogate turns nonpositive.
    ``penalty_weight`` multiplies ||F - F_tilde||^2 (zero for fully digital);
    ``scale`` multiplies the fractional part, so scale = P_ref expresses it in
    SE units without moving the maximizer of the rescaled problem.
    """

    def __init__(self, h_eff, f_tilde, rho, tau, noise_power, eta_pa, p_c, penalty_weight, scale=1.0):
        self.h = h_eff
        self.f_tilde = f_tilde
        self.rho = rho
        self.tau = np.asarray(tau)
        self.tau2 = np.abs(self.tau) ** 2
        self.sigma2 = noise_power
        self.eta = eta_pa
        self.p_c = p_c
        self.pen = penalty_weight
        self.scale = scale

    def _surrogate(self, f):
        gains = _gains(self.h, f)
        g2 = gains.real ** 2 + gains.imag ** 2
        diag = gains.diagonal()
        ipn = g2.sum(axis=1) - g2.diagonal() + self.sigma2
        g = 2.0 * (self.tau.conj() * diag).real - self.tau2 * ipn
        return gains, g

    def __call__(self, f) -> float:
        _, g = self._surrogate(f)
        if np.any(1.0 + g <= 0):
            return -math.inf
        s = float(np.sum(np.log2(1.0 + g)))
        if s < 0:
            return -math.inf
        value = self.scale * (2.0 * self.rho * math.sqrt(s) - self.rho ** 2 * (fro2(f) / self.eta + self.p_c))
        if self.pen:
            value -= self.pen * fro2(f - self.f_tilde)
        return value

    def gradient(self, f) -> np.ndarray:
        gains, g = self._surrogate(f)
        s = float(np.sum(np.log2(1.0 + g)))
        a = 1.0 / ((1.0 + g) * LN2)
        m = -(a * self.tau2)[:, None] * gains
        np.fill_diagonal(m, a * self.tau)
        ds = self.h @ m
        grad = -(self.rho ** 2 / self.eta) * f
        if s > 0:
            grad = grad + (self.rho / math.sqrt(s)) * ds
        grad *= self.scale
        if self.pen:
            grad = grad - self.pen * (f - self.f_tilde)
        return grad


def dqtfp_update_f(h_eff, bf: BeamformerSet, rho, tau, penalty_weight, p_max, pm: PowerModel,
                   config: SystemConfig, pg: PgSolverSpec = PgSolverSpec(), structure=None, scale=1.0):
    """Maximize the DQTFP F-subproblem from the current F; returns the PG result."""
    p_c = circuit_power(config, pm, structure if structure is not None else bf.structure)
    obj = DqtfpFObjective(h_eff, bf.precoder, rho, tau, config.noise_power, pm.eta_pa, p_c, penalty_weight, scale)
    return maximize_concave_ball(obj, obj.gradient, p_max, bf.f_aux, pg)


# ---------------------------------------------------------------- LDTFP blocks

def update_omega(se_linearized: float, pt: float, pm: PowerModel, config: SystemConfig,
                 structure: Structure | None = None) -> float:
    return se_linearized / (pt / pm.eta_pa + circuit_power(config, pm, structure))


def update_t(h_eff, f_aux, noise_power) -> np.ndarray:
    gains = _gains(h_eff, f_aux)
    g2 = np.abs(gains) ** 2
    sig = np.diag(g2)
    return sig / (g2.sum(axis=1) - sig + noise_power)


def update_z(h_eff, f_aux, t, noise_power) -> np.ndarray:
    gains = _gains(h_eff, f_aux)
    total = np.sum(np.abs(gains) ** 2, axis=1) + noise_power
    return np.sqrt(np.asarray(t) + 1.0) * np.diag(gains) / (LN2 * total)


def lagrange_dual_value(t, sinr) -> float:
    """L_t(t, lambda_hat) with lambda_hat_k = 1 / ((1 + sinr_k) ln 2)."""
    t = np.asarray(t, dtype=float)
    sinr = np.asarray(sinr, dtype=float)
    return float(np.sum(np.log2(1.0 + t) - t / LN2 + (t + 1.0) * sinr / ((1.0 + sinr) * LN2)))


def ldtfp_update_f(h_eff, bf: BeamformerSet, omega, t, z, penalty_weight, p_max, pm: PowerModel,
                   bisection: BisectionSpec = BisectionSpec(), return_nu: bool = False):
    """F = Psi^{-1} q with the dual value for the power ball found by bisection.

    ``penalty_weight`` is 1/(2 mu); zero drops the penalty (fully digital).
    """
    f_new, nu = _ldtfp_f_step(h_eff, h_eff.conj().T, omega, t, z, penalty_weight, bf.precoder, p_max, pm,
                              bisection)
    return (f_new, nu) if return_nu else f_new


def _ldtfp_f_step(h_eff, h_herm, omega, t, z, penalty_weight, precoder, p_max, pm, bisection):
    z = np.asarray(z)
    a = LN2 * (h_eff * (z.real ** 2 + z.imag ** 2)) @ h_herm
    rhs = h_eff * (np.sqrt(np.asarray(t) + 1.0) * z)
    ridge = omega / pm.eta_pa + penalty_weight
    if penalty_weight:
        rhs = rhs + penalty_weight * precoder
    return solve_ridge_ball(a, rhs, ridge, p_max, bisection)


def ldtfp_objective(h_eff, f_aux, f_tilde, omega, t, z, penalty_weight, noise_power, pm, p_c) -> float:
    """G_lq, the objective the LDTFP block updates ascend."""
    gains = _gains(h_eff, f_aux)
    total = np.sum(np.abs(gains) ** 2, axis=1) + noise_power
    t = np.asarray(t)
    z = np.asarray(z)
    value = np.sum(np.log2(1.0 + t) - t / LN2 + 2.0 * np.sqrt(t + 1.0) * np.real(np.conj(z) * np.diag(gains))
                   - np.abs(z) ** 2 * LN2 * total)
    value -= omega * (fro2(f_aux) / pm.eta_pa + p_c)
    value -= penalty_weight * fro2(f_aux - f_tilde)
    return float(value)


# ---------------------------------------------------------------- drivers

def _rel_change(new, old):
    return abs(new - old) / max(abs(old), 1e-300)


def _solve_ee(method: str, h_eff, config: SystemConfig, pm: PowerModel, opts: EeOptions, structure):
    t0 = time.perf_counter()
    structure = config.structure if structure is None else Structure.parse(structure)
    h_eff = np.asarray(h_eff, dtype=complex)
    sigma2 = config.noise_power
    digital = structure is Structure.FULLY_DIGITAL
    p_c = circuit_power(config, pm, structure)
    bf = init_beamformers(h_eff, config, structure)
    mu = None if digital else opts.mu_init
    frac_scale = 1.0
    if method == "dqtfp" and opts.dqtfp_penalty_in_se_units:
        frac_scale = total_power(fro2(bf.f_aux), config, pm, structure)
    res_tol = opts.residual_tol * math.sqrt(config.p_max)

    trace, residuals, obj_trace = [], [], []
    h_herm = h_eff.conj().T
    p_max = config.p_max
    f_rf, f_bb, f_aux = bf.f_rf, bf.f_bb, bf.f_aux
    precoder = bf.precoder

    def hybrid_ee(prec):
        se, pt = budget_rate(h_eff, prec, sigma2, p_max, h_herm)
        return se / (pt / pm.eta_pa + p_c)

    ee_prev_outer = hybrid_ee(precoder)
    init_ee = ee_prev_outer
    best = (ee_prev_outer, None)  # None keeps the starting point
    iterations = 0
    pg_iterations = 0
    converged = False
    outer = 0
    track = opts.track_objective
    for outer in range(1, opts.outer_max + 1):
        pen = 0.0 if digital else 1.0 / (2.0 * mu)
        ee_prev = None
        inner_converged = False
        inner_cap = opts.inner_max * opts.outer_max if digital else opts.inner_max
        for _ in range(inner_cap):
            iterations += 1
            steps = []
            pt_aux = fro2(f_aux)
            if method == "dqtfp":
                tau = update_tau(h_eff, f_aux, sigma2)
                se_aux = spectral_efficiency(aux_sinr(h_eff, f_aux, sigma2))
                rho = update_rho(se_aux, pt_aux, pm, config, structure)
                obj = DqtfpFObjective(h_eff, precoder, rho, tau, sigma2, pm.eta_pa, p_c, pen, frac_scale)
                if track:
                    steps.append(("rho_tau", obj(f_aux)))
                result = maximize_concave_ball(obj, obj.gradient, p_max, f_aux, opts.pg)
                pg_iterations += result.iterations
                f_new = result.x
                if track:
                    steps.append(("f", obj(f_new)))
            else:
                # t and z from one gain matrix (same values as update_t / update_z)
                gains = h_herm @ f_aux
                g2 = gains.real ** 2 + gains.imag ** 2
                sig = g2.diagonal()
                total = g2.sum(axis=1) + sigma2
                t = sig / (total - sig)
                if opts.dinkelbach_log_numerator:
                    numerator = float(np.log2(1.0 + t).sum())
                else:
                    numerator = float((1.0 + t).sum())
                omega = numerator / (pt_aux / pm.eta_pa + p_c)
                z = np.sqrt(t + 1.0) * gains.diagonal() / (LN2 * total)
                f_new, _ = _ldtfp_f_step(h_eff, h_herm, omega, t, z, pen, precoder, p_max, pm, opts.bisection)
                if track:
                    steps.append(("f", ldtfp_objective(h_eff, f_new, precoder, omega, t, z, pen,
                                                       sigma2, pm, p_c)))
            f_aux = f_new
            if digital:
                f_bb = precoder = f_aux
            else:
                f_rf = update_f_rf(f_aux, f_bb, structure)
                if track and method == "dqtfp":
                    obj_rf = DqtfpFObjective(h_eff, f_rf @ f_bb, rho, tau, sigma2, pm.eta_pa, p_c, pen, frac_scale)
                    steps.append(("f_rf", obj_rf(f_aux)))
                f_bb = update_f_bb(f_aux, f_rf, structure)
                precoder = f_rf @ f_bb
                if track and method == "dqtfp":
                    obj_bb = DqtfpFObjective(h_eff, precoder, rho, tau, sigma2, pm.eta_pa, p_c, pen, frac_scale)
                    steps.append(("f_bb", obj_bb(f_aux)))
            if track:
                obj_trace.append({"mu": mu, "steps": steps})
            ee = hybrid_ee(precoder)
            trace.append(ee)
            residuals.append(math.sqrt(fro2(f_aux - precoder)))
            if ee > best[0]:
                best = (ee, (f_rf, f_bb, f_aux))
            if ee_prev is not None and _rel_change(ee, ee_prev) <= opts.inner_tol:
                inner_converged = True
                break
            ee_prev = ee
        if digital:
            converged = inner_converged
            break
        ee_outer = trace[-1]
        if _rel_change(ee_outer, ee_prev_outer) <= opts.outer_tol and residuals[-1] <= res_tol:
            converged = True
            break
        ee_prev_outer = ee_outer
        mu *= opts.mu_factor

    if converged:
        bf = BeamformerSet(f_rf, f_bb, f_aux, structure)
    elif best[1] is not None:
        bf = BeamformerSet(*best[1], structure)
    final = repair_power(bf, config.p_max)
    pt = fro2(final.precoder)
    se = spectral_efficiency(sinr_per_user(h_eff, final.precoder, sigma2))
    p_total = total_power(pt, config, pm, structure)
    ee = energy_efficiency(se, p_total)
    wall = (time.perf_counter() - t0) * 1e3
    report = SolveReport(objective="EE", value=ee, se=se, pt=pt, p_total=p_total, ee=ee, trace=trace,
                         penalty_residual=final.penalty_residual(), iterations=iterations,
                         outer_iterations=outer, converged=converged, wall_time_ms=wall)
    report.extra.update(method=method, initial_ee=init_ee, residual_trace=residuals,
                        ms_per_iteration=wall / max(iterations, 1))
    if method == "dqtfp":
        report.extra["pg_iterations"] = pg_iterations
    if opts.track_objective:
        report.extra["objective_trace"] = obj_trace
    return final, report


def solve_ee_dqtfp(h_eff, config: SystemConfig, pm: PowerModel = PowerModel(),
                   opts: EeOptions = EeOptions(), structure: Structure | None = None):
    return _solve_ee("dqtfp", h_eff, config, pm, opts, structure)


def solve_ee_ldtfp(h_eff, config: SystemConfig, pm: PowerModel = PowerModel(),
                   opts: EeOptions = EeOptions(), structure: Structure | None = None):
    return _solve_ee("ldtfp", h_eff, config, pm, opts, structure)
