"""SINR, spectral efficiency, power consumption and energy efficiency."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .system_model import Structure, SystemConfig


@dataclass(frozen=True)
class PowerModel:
    """Hardware power constants in mW (PA efficiency is dimensionless)."""

    eta_pa: float = 0.27
    p_lo: float = 22.5
    p_rf: float = 31.6
    p_dac: float = 128.0
    p_ps: float = 21.6

    def __post_init__(self):
        if not 0 < self.eta_pa <= 1:
            raise ValueError("eta_pa must lie in (0, 1]")
        for name in ("p_lo", "p_rf", "p_dac", "p_ps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BeamformerSet:
    """Analog ``f_rf``, digital ``f_bb`` and the auxiliary ``f_aux`` they should match.

    For the fully digital structure ``f_rf`` is the n_t x n_t identity and
    ``f_bb`` is n_t x K.
    """

    f_rf: np.ndarray
    f_bb: np.ndarray
    f_aux: np.ndarray
    structure: Structure

    @cached_property
    def precoder(self) -> np.ndarray:
        return self.f_rf @ self.f_bb

    def penalty_residual(self) -> float:
        diff = self.f_aux - self.precoder
        return float(np.sqrt(np.vdot(diff, diff).real))


def check_structure(bf: BeamformerSet, atol: float = 1e-12) -> None:
    """Raise AssertionError if ``bf.f_rf`` leaves its feasible set."""
    f_rf = bf.f_rf
    if bf.structure is Structure.FULLY_DIGITAL:
        assert np.array_equal(f_rf, np.eye(f_rf.shape[0])), "fully digital f_rf must be identity"
        return
    if bf.structure is Structure.FULLY_CONNECTED:
        assert np.allclose(np.abs(f_rf), 1.0, rtol=0, atol=atol), "FC entries must be unit modulus"
        return
    n_t, k = f_rf.shape
    n_s = n_t // k
    mask = np.kron(np.eye(k), np.ones((n_s, 1))).astype(bool)
    assert np.all(f_rf[~mask] == 0), "PC off-block entries must be exactly zero"
    assert np.allclose(np.abs(f_rf[mask]), 1.0, rtol=0, atol=atol), "PC block entries must be unit modulus"


def sinr_per_user(h_eff: np.ndarray, precoder: np.ndarray, noise_power: float) -> np.ndarray:
    if noise_power <= 0:
        raise ValueError("noise_power must be positive")
    h_eff = np.asarray(h_eff)
    precoder = np.asarray(precoder)
    if h_eff.shape[0] != precoder.shape[0] or h_eff.shape[1] != precoder.shape[1]:
        raise ValueError(f"shape mismatch: channel {h_eff.shape} vs precoder {precoder.shape}")
    gains = np.abs(h_eff.conj().T @ precoder) ** 2  # gains[k, i] = |h_k^H f_i|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise_power)


def spectral_efficiency(sinrs) -> float:
    sinrs = np.asarray(sinrs, dtype=float)
    if np.any(sinrs < 0):
        raise ValueError("SINR values must be non-negative")
    return float(np.sum(np.log2(1.0 + sinrs)))


def fro2(matrix: np.ndarray) -> float:
    """Squared Frobenius norm."""
    return float(np.vdot(matrix, matrix).real)


def transmit_power(bf: BeamformerSet) -> float:
    return fro2(bf.precoder)


def phase_shifter_count(config: SystemConfig, structure: Structure | None = None) -> int:
    structure = config.structure if structure is None else structure
    if structure is Structure.FULLY_CONNECTED:
        return config.n_t * config.n_rf
    if structure is Structure.PARTIALLY_CONNECTED:
        return config.n_t
    return 0


def circuit_power(config: SystemConfig, pm: PowerModel, structure: Structure | None = None) -> float:
    """P_C: everything in the total power except the PA term.

    A fully digital array is charged one RF chain per port and no phase shifters.
    """
    structure = config.structure if structure is None else structure
    n_rf = config.n_t if structure is Structure.FULLY_DIGITAL else config.n_rf
    return pm.p_lo + n_rf * (pm.p_rf + 2.0 * pm.p_dac) + phase_shifter_count(config, structure) * pm.p_ps


def total_power(pt: float, config: SystemConfig, pm: PowerModel, structure: Structure | None = None) -> float:
    if pt < 0:
        raise ValueError("transmit power must be non-negative")
    return pt / pm.eta_pa + circuit_power(config, pm, structure)


def energy_efficiency(se: float, p_total: float) -> float:
    """SE per mW of total consumed power."""
    if p_total <= 0:
        raise ValueError("total power must be positive")
    return se / p_total
