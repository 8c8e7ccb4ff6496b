import math

import numpy as np
import pytest

from conftest import crandn
from trihybrid.ee_solvers import (DqtfpFObjective, EeOptions, aux_sinr, dqtfp_update_f, lagrange_dual_value,
                                  ldtfp_objective, ldtfp_update_f, qt_sinr_surrogate, solve_ee_dqtfp, solve_ee_ldtfp,
                                  update_omega, update_rho, update_t, update_tau, update_z)
from trihybrid.metrics import (BeamformerSet, PowerModel, check_structure, circuit_power, energy_efficiency,
                               sinr_per_user, spectral_efficiency, total_power, transmit_power)
from trihybrid.numerics import BisectionSpec
from trihybrid.oracles import finite_difference_gradient
from trihybrid.pdd import LN2
from trihybrid.system_model import Structure, SystemConfig

PM = PowerModel()
FC = SystemConfig(n_em=80, n_t=8, n_rf=4, k_users=4, structure="fc")
PC = FC.replace(structure="pc")
SINGLE = SystemConfig(n_em=10, n_t=2, n_rf=1, k_users=1, d_p=0.25, structure="fd")
ONE = np.array([[1.0 + 0j]])


def instance(seed, n_t=8, k=4):
    rng = np.random.default_rng(seed)
    return rng, crandn(rng, n_t, k) * math.sqrt(10.0), crandn(rng, n_t, k) * 5.0


# ------------------------------------------------------------ auxiliaries

def test_update_rho_examples():
    pm = PowerModel(eta_pa=1.0, p_lo=0.25, p_rf=0.125, p_dac=0.125, p_ps=0.125)
    cfg = SystemConfig(n_em=4, n_t=2, n_rf=1, k_users=1, d_p=0.5, structure="pc")
    p_c = circuit_power(cfg, pm)
    assert update_rho(4.0, 2.0 - p_c, pm, cfg) == pytest.approx(1.0, abs=1e-15)
    assert update_rho(0.0, 1.0, PM, FC) == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_quadratic_transform_identity(seed):
    a, b = np.random.default_rng(seed).uniform(0.01, 50.0, 2)
    pm = PowerModel(eta_pa=1.0)
    pt = b  # denominator = pt + P_C; fold P_C into B
    denom = pt + circuit_power(FC, pm)
    rho = update_rho(a, pt, pm, FC)
    assert abs(2 * rho * math.sqrt(a) - rho ** 2 * denom - a / denom) <= 1e-12 * max(1.0, a / denom)


def test_update_tau_examples():
    assert update_tau(ONE, ONE, 1.0) == pytest.approx([1.0])
    assert np.all(update_tau(np.ones((2, 2)), np.zeros((2, 2)), 1.0) == 0)


@pytest.mark.parametrize("seed", range(20))
def test_update_tau_is_stationary(seed):
    _, h, f = instance(seed)
    tau = update_tau(h, f, 1.0)
    for k in range(4):
        def g_k(x, k=k):
            trial = tau.copy()
            trial[k] = x[0]
            return qt_sinr_surrogate(h, f, trial, 1.0)[k]
        grad = finite_difference_gradient(g_k, np.array([tau[k]]))
        assert abs(grad[0]) <= 1e-6 * (1 + abs(g_k(np.array([tau[k]]))))
    # at tau_hat the surrogate equals the SINR
    assert np.allclose(qt_sinr_surrogate(h, f, tau, 1.0), aux_sinr(h, f, 1.0), rtol=1e-12)


def test_update_omega_examples():
    pm = PowerModel(eta_pa=0.5, p_lo=0.2, p_rf=0.1, p_dac=0.1, p_ps=0.2)
    cfg = SystemConfig(n_em=8, n_t=2, n_rf=2, k_users=2, d_p=0.5, structure="pc")
    p_c = circuit_power(cfg, pm)
    assert update_omega(2.0, (2.0 - p_c) * pm.eta_pa, pm, cfg) == pytest.approx(1.0, abs=1e-14)
    assert update_omega(cfg.k_users, 0.0, pm, cfg) == pytest.approx(cfg.k_users / p_c)


@pytest.mark.parametrize("seed", range(10))
def test_update_omega_is_energy_efficiency_of_numerator(seed):
    _, h, f = instance(seed)
    se = spectral_efficiency(aux_sinr(h, f, 1.0))
    pt = float(np.sum(np.abs(f) ** 2))
    assert abs(update_omega(se, pt, PM, FC) - energy_efficiency(se, total_power(pt, FC, PM))) <= 1e-12 * se


def test_update_t_examples(rng):
    assert update_t(ONE, ONE, 1.0) == pytest.approx([1.0])
    assert np.all(update_t(np.ones((2, 2)), np.zeros((2, 2)), 1.0) == 0)


@pytest.mark.parametrize("seed", range(100))
def test_update_t_equals_sinr_and_dual_identity(seed):
    _, h, f = instance(seed)
    t = update_t(h, f, 1.0)
    sinr = sinr_per_user(h, f, 1.0)
    assert np.max(np.abs(t - sinr)) <= 1e-12 * max(1.0, np.max(sinr))
    assert abs(lagrange_dual_value(t, sinr) - spectral_efficiency(sinr)) <= 1e-12 * max(1.0, spectral_efficiency(sinr))


def test_update_z_examples():
    assert np.all(update_z(np.ones((2, 2)), np.zeros((2, 2)), [1.0, 1.0], 1.0) == 0)
    assert update_z(ONE, ONE, [1.0], 1.0) == pytest.approx([math.sqrt(2) / (2 * LN2)])


def _g_lq_without_f_terms(h, f, t, z):
    return ldtfp_objective(h, f, f, 0.0, t, z, 0.0, 1.0, PM, 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_update_z_is_stationary(seed):
    _, h, f = instance(seed)
    t = update_t(h, f, 1.0)
    z = update_z(h, f, t, 1.0)
    obj = lambda x: _g_lq_without_f_terms(h, f, t, x)  # noqa: E731
    grad = finite_difference_gradient(obj, z)
    assert np.linalg.norm(grad) <= 1e-6 * (1 + abs(obj(z)))
    # at z_hat the quadratic transform returns the log-sum it replaced
    assert obj(z) == pytest.approx(spectral_efficiency(sinr_per_user(h, f, 1.0)), rel=1e-10)


# ---------------------------------------------------------------- F steps

def _bf(rng, cfg, scale=1.0):
    f_rf = np.exp(1j * rng.uniform(0, 2 * np.pi, (cfg.n_t, cfg.k_users)))
    f_bb = crandn(rng, cfg.k_users, cfg.k_users)
    f_bb *= scale / np.linalg.norm(f_rf @ f_bb)
    return BeamformerSet(f_rf, f_bb, f_rf @ f_bb, cfg.structure)


def test_dqtfp_f_step_without_ratio_returns_target(rng):
    bf = _bf(rng, FC, scale=10.0)
    h = crandn(rng, 8, 4)
    start = BeamformerSet(bf.f_rf, bf.f_bb, crandn(rng, 8, 4), bf.structure)
    res = dqtfp_update_f(h, start, 0.0, np.zeros(4), 0.5, FC.p_max, PM, FC)
    assert np.linalg.norm(res.x - bf.precoder) <= 1e-6 * np.linalg.norm(bf.precoder)


@pytest.mark.parametrize("seed", range(5))
def test_dqtfp_f_step_matches_scalar_grid(seed):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(n_em=4, n_t=1, n_rf=1, k_users=1, d_p=0.5, structure="fd", p_max=50.0, noise_power=1.0)
    h = crandn(rng, 1, 1) * 0.5
    f0 = np.array([[0.5 + 0j]])
    bf = BeamformerSet(np.eye(1), f0, f0, cfg.structure)
    tau = update_tau(h, f0, 1.0)
    p_c = circuit_power(cfg, PM)
    rho = update_rho(spectral_efficiency(aux_sinr(h, f0, 1.0)), 0.25, PM, cfg)
    res = dqtfp_update_f(h, bf, rho, tau, 0.0, cfg.p_max, PM, cfg, scale=100.0)
    obj = DqtfpFObjective(h, f0, rho, tau, 1.0, PM.eta_pa, p_c, 0.0, 100.0)
    # the optimum phase aligns f with tau h; search magnitude on a dense grid
    phase = np.exp(1j * np.angle(np.conj(tau[0]) * np.conj(h[0, 0]))) ** -1
    radii = np.linspace(0, math.sqrt(cfg.p_max), 200_001)
    best = max(obj(np.array([[r * phase]])) for r in radii[::100])
    r0 = radii[::100][int(np.argmax([obj(np.array([[r * phase]])) for r in radii[::100]]))]
    fine = radii[np.abs(radii - r0) <= math.sqrt(cfg.p_max) / 1000]
    best = max(best, max(obj(np.array([[r * phase]])) for r in fine))
    assert abs(res.objective - best) <= 1e-4 * abs(best)
    assert np.sum(np.abs(res.x) ** 2) <= cfg.p_max * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_dqtfp_gradient_matches_finite_differences(seed):
    rng, h, f = instance(seed)
    f *= 0.2
    tau = update_tau(h, f, 1.0)
    obj = DqtfpFObjective(h, crandn(rng, 8, 4), 1e-3, tau, 1.0, PM.eta_pa, circuit_power(FC, PM), 0.3, 50.0)
    num = finite_difference_gradient(obj, f)
    assert np.linalg.norm(obj.gradient(f) - num) <= 1e-6 * (1 + abs(obj(f)))


def test_ldtfp_f_step_penalty_fixed_point(rng):
    bf = _bf(rng, FC, scale=10.0)
    f_new = ldtfp_update_f(crandn(rng, 8, 4), bf, 0.0, np.zeros(4), np.zeros(4), 0.5, FC.p_max, PM)
    assert np.allclose(f_new, bf.precoder, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_ldtfp_f_step_solves_linear_system_and_is_kkt(seed):
    rng, h, f = instance(seed)
    bf = _bf(rng, FC, scale=40.0)
    t = update_t(h, f, 1.0)
    z = update_z(h, f, t, 1.0)
    omega, pen = 1e-3, 0.4
    f_new, nu = ldtfp_update_f(h, bf, omega, t, z, pen, FC.p_max, PM, BisectionSpec(tol=1e-12), return_nu=True)
    assert np.sum(np.abs(f_new) ** 2) <= FC.p_max * (1 + 1e-8)
    psi = LN2 * (h * np.abs(z) ** 2) @ h.conj().T + (omega / PM.eta_pa + pen + nu) * np.eye(8)
    q = h * (np.sqrt(t + 1) * z) + pen * bf.precoder
    assert np.linalg.norm(psi @ f_new - q) <= 1e-8 * np.linalg.norm(q)
    p_c = circuit_power(FC, PM)
    lagr = lambda x: (ldtfp_objective(h, x, bf.precoder, omega, t, z, pen, 1.0, PM, p_c)  # noqa: E731
                      - nu * float(np.sum(np.abs(x) ** 2)))
    grad = finite_difference_gradient(lagr, f_new)
    assert np.linalg.norm(grad) <= 1e-6 * (1 + abs(lagr(f_new)))


# ---------------------------------------------------------------- drivers

def _grid_oracle(h, cfg):
    gain = float(np.sum(np.abs(h) ** 2))
    p = np.linspace(0, cfg.p_max, 200_001)[1:]
    ee = np.log2(1 + p * gain / cfg.noise_power) / (p / PM.eta_pa + circuit_power(cfg, PM))
    return float(ee.max())


@pytest.mark.parametrize("solver", [solve_ee_dqtfp, solve_ee_ldtfp])
@pytest.mark.parametrize("gain", [0.05, 2.0, 40.0])
def test_single_user_matches_power_grid(solver, gain):
    h = np.array([[1.0], [1.0j]]) * math.sqrt(gain / 2)
    _, rep = solver(h, SINGLE, PM)
    oracle = _grid_oracle(h, SINGLE)
    assert abs(rep.ee - oracle) <= 1e-2 * oracle


@pytest.mark.parametrize("solver", [solve_ee_dqtfp, solve_ee_ldtfp])
def test_vanishing_budget_gives_vanishing_ee(solver):
    cfg = SINGLE.replace(p_max=1e-9)
    _, rep = solver(np.array([[1.0], [0.5j]]), cfg, PM)
    assert rep.pt <= 1e-9 * (1 + 1e-9)
    assert rep.ee <= 1e-9


@pytest.mark.parametrize("solver", [solve_ee_dqtfp, solve_ee_ldtfp])
@pytest.mark.parametrize("cfg", [FC, PC])
def test_driver_contract(solver, cfg):
    _, h, _ = instance(11)
    bf, rep = solver(h, cfg, PM)
    check_structure(bf)
    assert transmit_power(bf) <= cfg.p_max * (1 + 1e-9)
    assert rep.trace[-1] >= rep.extra["initial_ee"]
    se = spectral_efficiency(sinr_per_user(h, bf.precoder, cfg.noise_power))
    assert rep.ee == pytest.approx(energy_efficiency(se, total_power(transmit_power(bf), cfg, PM)), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_dqtfp_sweeps_never_decrease_for_partial_connection(seed):
    _, h, _ = instance(seed)
    _, rep = solve_ee_dqtfp(h, PC, PM, EeOptions(track_objective=True))
    previous = None
    for entry in rep.extra["objective_trace"]:
        values = [v for _, v in entry["steps"]]
        if previous is not None and previous[0] == entry["mu"]:
            assert values[0] >= previous[1] - 1e-9 * abs(previous[1])
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(values, values[1:]))
        previous = (entry["mu"], values[-1])


def test_printed_omega_numerator_is_available():
    _, h, _ = instance(4)
    _, log_rep = solve_ee_ldtfp(h, FC, PM)
    _, printed = solve_ee_ldtfp(h, FC, PM, EeOptions(dinkelbach_log_numerator=False))
    assert printed.ee > 0 and log_rep.ee > 0
    assert printed.ee != log_rep.ee


def test_ldtfp_fully_digital_matches_dqtfp_closely():
    _, h, _ = instance(5)
    cfg = FC.replace(structure="fd")
    a = solve_ee_ldtfp(h, cfg, PM)[1].ee
    b = solve_ee_dqtfp(h, cfg, PM)[1].ee
    assert abs(a - b) <= 0.05 * b


def test_options_validation():
    with pytest.raises(ValueError):
        EeOptions(mu_factor=0.0)
