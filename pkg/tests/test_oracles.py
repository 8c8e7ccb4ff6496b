import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn
from trihybrid.numerics import NumericError
from trihybrid.oracles import (EnumerationLimitError, enumerate_feasible, exhaustive_rc_opt, feasible_count,
                               finite_difference_gradient)
from trihybrid.pdd import mse, update_u
from trihybrid.rc_cod import run_cod, se_inner_solver
from trihybrid.report import SolveReport
from trihybrid.system_model import (ExtendedChannel, SystemConfig, channel_from_paths, check_feasible,
                                    generate_extended_channel)


def cfg_for(n_em, n_t, d_min):
    return SystemConfig(n_em=n_em, n_t=n_t, n_rf=1, k_users=1, d_p=1.0 / (2 * d_min))


def test_enumeration_examples():
    assert [s.index_set for s in enumerate_feasible(cfg_for(4, 2, 2))] == [(1, 3), (1, 4), (2, 4)]
    assert [s.index_set for s in enumerate_feasible(cfg_for(7, 1, 3))] == [(i,) for i in range(1, 8)]


def test_enumeration_empty_when_spacing_cannot_fit():
    assert enumerate_feasible(cfg_for(3, 3, 2)) == []


@given(st.integers(1, 14), st.integers(1, 5), st.integers(1, 4))
def test_enumeration_count_and_coverage(n_em, n_t, d_min):
    if n_t > n_em:
        return
    cfg = cfg_for(n_em, n_t, d_min)
    listed = enumerate_feasible(cfg)
    assert len(listed) == feasible_count(n_em, n_t, d_min)
    assert [s.index_set for s in listed] == sorted(s.index_set for s in listed)
    assert all(check_feasible(s.r, cfg) for s in listed)
    brute = {combo for combo in itertools.combinations(range(1, n_em + 1), n_t)
             if all(b - a >= d_min for a, b in zip(combo, combo[1:]))}
    assert {s.index_set for s in listed} == brute


def test_enumeration_cap():
    with pytest.raises(EnumerationLimitError):
        enumerate_feasible(SystemConfig(), cap=1000)


def test_exhaustive_with_constant_solver():
    cfg = cfg_for(8, 2, 2)
    rep = exhaustive_rc_opt(np.ones((8, 1)), cfg, lambda h: (None, SolveReport("SE", 3.0, 3.0, 0.0)))
    assert rep.best_value == 3.0
    assert rep.best_selection.index_set == (1, 3)
    assert rep.evaluated_count == feasible_count(8, 2, 2) == len(rep.values)
    assert rep.best_value == max(rep.values)


@pytest.mark.parametrize("seed", range(5))
def test_single_user_best_selection_maximizes_norm(seed):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(n_em=10, n_t=2, n_rf=1, k_users=1, d_p=0.25, structure="fd")
    paths = [[(complex(*rng.standard_normal(2)), rng.uniform(-1.5, 1.5))]]
    ch = ExtendedChannel(h_bar=channel_from_paths(10, paths, cfg.d_p) * rng.uniform(0.5, 2.0, (10, 1)))
    rep = exhaustive_rc_opt(ch, cfg, se_inner_solver(cfg))
    norms = {s.index_set: float(np.sum(np.abs(ch.h_bar[np.array(s.index_set) - 1]) ** 2))
             for s in enumerate_feasible(cfg)}
    assert math.isclose(norms[rep.best_selection.index_set], max(norms.values()), rel_tol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_cod_never_beats_exhaustive(seed):
    cfg = SystemConfig(n_em=10, n_t=3, n_rf=2, k_users=2, d_p=0.25)
    inner = se_inner_solver(cfg)
    ch = generate_extended_channel(cfg, 4, seed)
    _, _, cod = run_cod(ch, cfg, inner)
    assert cod.value <= exhaustive_rc_opt(ch, cfg, inner).best_value * (1 + 1e-6)


def test_gradient_of_squared_norm(rng):
    x0 = crandn(rng, 5)
    grad = finite_difference_gradient(lambda x: float(np.sum(np.abs(x) ** 2)), x0, step=1e-4)
    assert np.allclose(grad, x0, atol=1e-8)


@pytest.mark.parametrize("step", [1e-3, 1e-5])
def test_gradient_of_linear_functional(rng, step):
    b = crandn(rng, 4)
    grad = finite_difference_gradient(lambda x: float(np.vdot(b, x).real), crandn(rng, 4), step)
    assert np.allclose(grad, b / 2, atol=1e-10)


def test_mse_gradient_vanishes_at_update_u(rng):
    h, f = crandn(rng, 4, 2), crandn(rng, 4, 2)
    u = update_u(h, f, 1.0)
    grad = finite_difference_gradient(lambda x: float(np.sum(mse(h, f, x, 1.0))), u)
    assert np.linalg.norm(grad) <= 1e-8


def test_gradient_errors():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.zeros(2), step=0.0)
    with pytest.raises(NumericError):
        finite_difference_gradient(lambda x: math.inf, np.zeros(2))
