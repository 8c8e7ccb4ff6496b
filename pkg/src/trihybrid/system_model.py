"""RCRAA geometry, radiation-center selection and the dimension-extended channel.

Indices of RC candidate points are 1-based throughout, so ``index_set``
values run from 1 to ``n_em``. Lengths are in wavelengths (lambda = 1).
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a system configuration cannot support the requested layout."""


class FeasibilityError(ValueError):
    """Raised when an RC selection violates the feasible-set constraints."""


class Structure(str, enum.Enum):
    FULLY_CONNECTED = "fc"
    PARTIALLY_CONNECTED = "pc"
    FULLY_DIGITAL = "fd"

    @classmethod
    def parse(cls, value: "str | Structure") -> "Structure":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "fc": cls.FULLY_CONNECTED, "fully_connected": cls.FULLY_CONNECTED, "fullyconnected": cls.FULLY_CONNECTED,
            "pc": cls.PARTIALLY_CONNECTED, "partially_connected": cls.PARTIALLY_CONNECTED,
            "partiallyconnected": cls.PARTIALLY_CONNECTED,
            "fd": cls.FULLY_DIGITAL, "fdbf": cls.FULLY_DIGITAL, "fully_digital": cls.FULLY_DIGITAL,
            "fullydigital": cls.FULLY_DIGITAL,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown analog structure {value!r}") from None


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class SystemConfig:
    """Array geometry, user counts and power budget.

    ``noise_power`` and ``p_max`` are linear milliwatts.
    """

    n_em: int = 80
    n_t: int = 8
    n_rf: int = 4
    k_users: int = 4
    d_p: float = 0.1
    noise_power: float = 10.0
    p_max: float = 1000.0
    structure: Structure = Structure.FULLY_CONNECTED
    wavelength: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure.parse(self.structure))
        for name in ("n_em", "n_t", "n_rf", "k_users"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.k_users != self.n_rf:
            raise ConfigurationError("k_users must equal n_rf")
        if not (self.n_rf <= self.n_t <= self.n_em):
            raise ConfigurationError("require n_rf <= n_t <= n_em")
        if self.d_p <= 0:
            raise ConfigurationError("d_p must be positive")
        if self.noise_power <= 0 or self.p_max <= 0:
            raise ConfigurationError("noise_power and p_max must be positive")
        if self.structure is Structure.PARTIALLY_CONNECTED and self.n_t % self.k_users:
            raise ConfigurationError(
                f"partially connected structure needs k_users | n_t (n_t={self.n_t}, k={self.k_users})"
            )

    @property
    def d_min(self) -> int:
        # small epsilon keeps e.g. 1/(2*0.1) = 5.000000000000001 from rounding up to 6
        return max(1, math.ceil(self.wavelength / (2.0 * self.d_p) - 1e-9))

    @property
    def n_s(self) -> int:
        return self.n_t // self.k_users

    def replace(self, **changes) -> "SystemConfig":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SystemConfig(**values)


@dataclass(frozen=True)
class RcSelection:
    """Binary selection vector ``r`` together with its sorted 1-based index set."""

    r: np.ndarray
    index_set: tuple

    @classmethod
    def from_indices(cls, indices, n_em: int) -> "RcSelection":
        idx = tuple(sorted(int(i) for i in indices))
        if any(i < 1 or i > n_em for i in idx):
            raise ValueError(f"indices must lie in 1..{n_em}: {idx}")
        r = np.zeros(n_em, dtype=int)
        r[np.asarray(idx, dtype=int) - 1] = 1
        r.setflags(write=False)
        return cls(r=r, index_set=idx)

    @classmethod
    def from_vector(cls, r) -> "RcSelection":
        r = np.asarray(r, dtype=int).copy()
        idx = tuple(int(i) + 1 for i in np.flatnonzero(r))
        r.setflags(write=False)
        return cls(r=r, index_set=idx)

    @property
    def n_em(self) -> int:
        return int(self.r.shape[0])

    def __eq__(self, other):
        if not isinstance(other, RcSelection):
            return NotImplemented
        return self.index_set == other.index_set and self.n_em == other.n_em

    def __hash__(self):
        return hash((self.index_set, self.n_em))

    def __repr__(self):
        return f"RcSelection({list(self.index_set)}, n_em={self.n_em})"


@dataclass(frozen=True)
class ExtendedChannel:
    """``h_bar`` is n_em x K; ``paths[k]`` is a list of (gain, angle) pairs."""

    h_bar: np.ndarray
    paths: tuple = field(default=())
    d_p: float = 0.1

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.h_bar).tobytes()).hexdigest()[:16]


def steering_vector(n: int, theta: float, d: float, wavelength: float = 1.0) -> np.ndarray:
    """Normalized ULA response with ``n`` elements at spacing ``d``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = np.arange(n)
    return np.exp(1j * 2.0 * np.pi * d * m * np.sin(theta) / wavelength) / np.sqrt(n)


def channel_from_paths(n_em: int, paths, d_p: float) -> np.ndarray:
    cols = []
    for user_paths in paths:
        n_paths = len(user_paths)
        h = np.zeros(n_em, dtype=complex)
        for gain, angle in user_paths:
            h += gain * steering_vector(n_em, angle, d_p)
        cols.append(np.sqrt(n_em / n_paths) * h)
    return np.column_stack(cols)


def generate_extended_channel(config: SystemConfig, l_paths: int, rng_seed: int) -> ExtendedChannel:
    """Draw a Saleh-Valenzuela channel over all RC candidate points.

    Path gains are CN(0, 1) and departure angles uniform on (-pi/2, pi/2).
    The same seed always yields the same matrix.
    """
    if l_paths < 1:
        raise ValueError("l_paths must be >= 1")
    rng = np.random.default_rng(rng_seed)
    paths = []
    for _ in range(config.k_users):
        gains = (rng.standard_normal(l_paths) + 1j * rng.standard_normal(l_paths)) / np.sqrt(2.0)
        angles = rng.uniform(-np.pi / 2, np.pi / 2, size=l_paths)
        paths.append(tuple((complex(g), float(a)) for g, a in zip(gains, angles)))
    paths = tuple(paths)
    h_bar = channel_from_paths(config.n_em, paths, config.d_p)
    h_bar.setflags(write=False)
    return ExtendedChannel(h_bar=h_bar, paths=paths, d_p=config.d_p)


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    violated: str | None = None  # "Binary" | "PortCount" | "Spacing"

    def __bool__(self):
        return self.feasible


def check_feasible(r, config: SystemConfig) -> Feasibility:
    """Check binary entries, port count and the sliding-window spacing rule, in that order."""
    r = np.asarray(r)
    if r.ndim != 1 or r.shape[0] != config.n_em:
        raise ValueError(f"selection vector must have length {config.n_em}, got shape {r.shape}")
    if not np.all((r == 0) | (r == 1)):
        return Feasibility(False, "Binary")
    if int(r.sum()) != config.n_t:
        return Feasibility(False, "PortCount")
    # B^T r <= 1: every window of d_min consecutive points holds at most one RC
    window = np.convolve(r.astype(int), np.ones(config.d_min, dtype=int), mode="valid")
    if window.size and window.max() > 1:
        return Feasibility(False, "Spacing")
    return Feasibility(True)


def selection_matrix(sel: RcSelection) -> np.ndarray:
    """The n_t x n_em 0/1 matrix T with T @ h_bar_k = h_k(r)."""
    t = np.zeros((len(sel.index_set), sel.n_em))
    t[np.arange(len(sel.index_set)), np.asarray(sel.index_set) - 1] = 1.0
    return t


def apply_selection(channel: ExtendedChannel | np.ndarray, sel: RcSelection,
                    config: SystemConfig | None = None) -> np.ndarray:
    h_bar = channel.h_bar if isinstance(channel, ExtendedChannel) else np.asarray(channel)
    if sel.n_em != h_bar.shape[0]:
        raise ValueError("selection length does not match channel rows")
    if config is not None:
        verdict = check_feasible(sel.r, config)
        if not verdict:
            raise FeasibilityError(f"infeasible selection {sel.index_set}: {verdict.violated}")
    return h_bar[np.asarray(sel.index_set) - 1, :]


def fpa_baseline_selection(config: SystemConfig) -> RcSelection:
    """Fixed half-wavelength grid {1, 1+D, ..., 1+(n_t-1)D}."""
    d = config.d_min
    if config.n_em < (config.n_t - 1) * d + 1:
        raise ConfigurationError(
            f"n_em={config.n_em} too short for {config.n_t} ports at spacing {d}"
        )
    return RcSelection.from_indices([1 + m * d for m in range(config.n_t)], config.n_em)
