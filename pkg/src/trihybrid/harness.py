"""Monte Carlo experiments over channel draws, with CSV and plot-data output.

Trial ``t`` draws its channel from seed ``base_seed + t``; every architecture
in a trial sees the same channel at a given axis value, so comparisons are
paired. Trials run in worker processes (at most ``TRIHYBRID_THREADS``) and
rows come back in (trial, architecture, axis value) order whatever the
scheduling.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ee_solvers import EeOptions
from .metrics import PowerModel, energy_efficiency, total_power
from .pdd import SeOptions
from .rc_cod import CodOptions, ee_inner_solver, run_cod, se_inner_solver
from .system_model import (ConfigurationError, Structure, SystemConfig, apply_selection, dbm_to_mw,
                           fpa_baseline_selection, generate_extended_channel)

THREADS_ENV = "TRIHYBRID_THREADS"


class Axis(str, enum.Enum):
    TRANSMIT_POWER = "TransmitPower"        # SE-optimized at P_T = value dBm, budget spent in full
    MAX_TRANSMIT_POWER = "MaxTransmitPower"  # P_max = value dBm
    USERS = "Users"                          # K = N_RF = value
    PATHS = "Paths"                          # L = value
    ANTENNA_PORTS = "AntennaPorts"           # N_T = value
    INPUT_SNR = "InputSnr"                   # noise = P_max(dBm) - value

    @classmethod
    def parse(cls, value) -> "Axis":
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        raise ValueError(f"unknown sweep axis {value!r}")


class Objective(str, enum.Enum):
    SE = "SE"
    EE = "EE"


class EeMethod(str, enum.Enum):
    DQTFP = "DQTFP"
    LDTFP = "LDTFP"


@dataclass(frozen=True)
class Architecture:
    """An RC policy ("RCRAA" runs the coordinate search, "FPA" keeps the fixed grid) and a structure."""

    array: str
    structure: Structure

    @classmethod
    def parse(cls, text: "str | Architecture") -> "Architecture":
        if isinstance(text, Architecture):
            return text
        array, sep, structure = str(text).replace("_", "-").partition("-")
        array = array.upper()
        if not sep or array not in ("RCRAA", "FPA"):
            raise ValueError(f"architecture must look like RCRAA-FC or FPA-PC, got {text!r}")
        return cls(array, Structure.parse(structure))

    @property
    def label(self) -> str:
        return f"{self.array}-{self.structure.value.upper()}"


DEFAULT_ARCHITECTURES = ("RCRAA-FC", "FPA-FC")


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig = field(default_factory=SystemConfig)
    power_model: PowerModel = field(default_factory=PowerModel)
    axis: Axis = Axis.MAX_TRANSMIT_POWER
    values: tuple = (30.0,)
    architectures: tuple = DEFAULT_ARCHITECTURES
    objective: Objective = Objective.SE
    ee_solver: EeMethod = EeMethod.LDTFP
    trials: int = 20
    base_seed: int = 42
    l_paths: int = 4
    cod_init: str = "gain"
    max_sweeps: int = 5
    se_options: SeOptions = field(default_factory=SeOptions)
    ee_options: EeOptions = field(default_factory=EeOptions)

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis.parse(self.axis))
        object.__setattr__(self, "objective", Objective(str(self.objective).upper()
                                                        if not isinstance(self.objective, Objective)
                                                        else self.objective))
        object.__setattr__(self, "ee_solver", EeMethod(str(self.ee_solver).upper()
                                                       if not isinstance(self.ee_solver, EeMethod)
                                                       else self.ee_solver))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "architectures", tuple(Architecture.parse(a) for a in self.architectures))
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if not self.values:
            raise ConfigurationError("at least one axis value is required")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigurationError(f"axis values must be strictly increasing: {self.values}")
        if not self.architectures:
            raise ConfigurationError("at least one architecture is required")
        if self.axis is Axis.TRANSMIT_POWER and self.objective is Objective.EE:
            raise ConfigurationError("the TransmitPower axis fixes P_T, which only the SE objective does")
        if self.l_paths < 1:
            raise ConfigurationError("l_paths must be >= 1")
        CodOptions(max_sweeps=self.max_sweeps, init=self.cod_init)
        for value in self.values:
            for arch in self.architectures:
                self.config_at(value, arch.structure)

    def config_at(self, value: float, structure: Structure) -> SystemConfig:
        """The system configuration for one axis value and structure."""
        base = self.config
        changes: dict = {"structure": structure}
        if self.axis in (Axis.TRANSMIT_POWER, Axis.MAX_TRANSMIT_POWER):
            changes["p_max"] = dbm_to_mw(value)
        elif self.axis is Axis.USERS:
            changes.update(k_users=_as_int(value, "Users"), n_rf=_as_int(value, "Users"))
        elif self.axis is Axis.ANTENNA_PORTS:
            changes["n_t"] = _as_int(value, "AntennaPorts")
        elif self.axis is Axis.INPUT_SNR:
            changes["noise_power"] = dbm_to_mw(_mw_to_dbm(base.p_max) - value)
        return base.replace(**changes)

    def paths_at(self, value: float) -> int:
        return _as_int(value, "Paths") if self.axis is Axis.PATHS else self.l_paths

    def metadata(self) -> dict:
        cfg = dataclasses.asdict(self.config)
        cfg["structure"] = self.config.structure.value
        return {
            "axis": self.axis.value,
            "values": list(self.values),
            "architectures": [a.label for a in self.architectures],
            "objective": self.objective.value,
            "ee_solver": self.ee_solver.value,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "l_paths": self.l_paths,
            "cod_init": self.cod_init,
            "max_sweeps": self.max_sweeps,
            "config": cfg,
            "power_model": dataclasses.asdict(self.power_model),
        }


def _as_int(value: float, axis: str) -> int:
    if float(value) != int(value):
        raise ConfigurationError(f"{axis} axis values must be integers, got {value}")
    return int(value)


def _mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class ResultRow:
    architecture: str
    structure: str
    axis: str
    axis_value: float
    trial: int
    seed: int
    channel_hash: str
    se: float
    pt: float
    p_total: float
    ee: float
    iterations: int
    converged: bool
    # timing differs between otherwise identical runs, so it stays out of equality
    wall_time_ms: float = field(default=0.0, compare=False)


ROW_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]
_FLOAT_FIELDS = {"axis_value", "se", "pt", "p_total", "ee", "wall_time_ms"}
_INT_FIELDS = {"trial", "seed", "iterations"}


def _solve_one(spec: ExperimentSpec, cfg: SystemConfig, channel, arch: Architecture):
    pm = spec.power_model
    if spec.objective is Objective.SE:
        inner = se_inner_solver(cfg, pm, dataclasses.replace(spec.se_options, fill_power=True))
    else:
        inner = ee_inner_solver(cfg, pm, spec.ee_solver.value, spec.ee_options)

    if arch.array == "FPA":
        _, report = inner(apply_selection(channel, fpa_baseline_selection(cfg), cfg))
        return report
    _, _, report = run_cod(channel, cfg, inner, CodOptions(max_sweeps=spec.max_sweeps, init=spec.cod_init))
    return report


def run_trial(spec: ExperimentSpec, trial: int) -> list[ResultRow]:
    """All rows of one trial, ordered by architecture then axis value."""
    seed = spec.base_seed + trial
    channels = {}
    for value in spec.values:
        cfg = spec.config_at(value, Structure.FULLY_CONNECTED)
        # the channel depends only on n_em, K, d_p and L, never on the structure
        channels[value] = generate_extended_channel(cfg, spec.paths_at(value), seed)
    rows = []
    for arch in spec.architectures:
        for value in spec.values:
            cfg = spec.config_at(value, arch.structure)
            channel = channels[value]
            report = _solve_one(spec, cfg, channel, arch)
            p_total = total_power(report.pt, cfg, spec.power_model, arch.structure)
            wall = report.extra.get("cod_wall_time_ms", report.wall_time_ms)
            rows.append(ResultRow(
                architecture=arch.array, structure=arch.structure.value.upper(), axis=spec.axis.value,
                axis_value=value, trial=trial, seed=seed, channel_hash=channel.digest(),
                se=report.se, pt=report.pt, p_total=p_total, ee=energy_efficiency(report.se, p_total),
                iterations=report.iterations, converged=bool(report.converged), wall_time_ms=wall))
    return rows


def worker_count(jobs: int) -> int:
    """Worker processes to use: the TRIHYBRID_THREADS cap, else the CPU count, never more than ``jobs``."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, jobs))


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    workers = worker_count(spec.trials)
    if workers == 1:
        per_trial = [run_trial(spec, t) for t in range(spec.trials)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(run_trial, [spec] * spec.trials, range(spec.trials)))
    return [row for rows in per_trial for row in rows]


# ---------------------------------------------------------------- output

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def emit_csv(rows, path, include_timing: bool = True) -> Path:
    """Write rows with a header; floats carry 17 significant digits so they parse back exactly.

    ``include_timing=False`` drops the wall-time column, which makes reruns
    byte-identical.
    """
    path = Path(path)
    fields = ROW_FIELDS if include_timing else [f for f in ROW_FIELDS if f != "wall_time_ms"]
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            writer.writerow(fields)
            for row in rows:
                writer.writerow([_format(getattr(row, f)) for f in fields])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> list[ResultRow]:
    """Parse a file written by ``emit_csv`` back into rows."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for record in csv.DictReader(fh):
            values = {}
            for name in ROW_FIELDS:
                if name not in record:
                    continue
                raw = record[name]
                if name in _FLOAT_FIELDS:
                    values[name] = float(raw)
                elif name in _INT_FIELDS:
                    values[name] = int(raw)
                elif name == "converged":
                    values[name] = raw == "true"
                else:
                    values[name] = raw
            rows.append(ResultRow(**values))
    return rows


Z95 = statistics.NormalDist().inv_cdf(0.975)


def summarize(values) -> dict:
    """Sample mean, standard error (n-1 denominator) and a normal-approximation 95% interval."""
    data = np.asarray(list(values), dtype=float)
    if data.size == 0:
        raise ValueError("cannot summarize an empty group")
    mean = float(data.mean())
    stderr = float(data.std(ddof=1) / math.sqrt(data.size)) if data.size > 1 else 0.0
    return {"n": int(data.size), "mean": mean, "stderr": stderr,
            "ci_low": mean - Z95 * stderr, "ci_high": mean + Z95 * stderr}


PLOT_FIELDS = ["curve", "axis", "axis_value", "metric", "n", "mean", "stderr", "ci_low", "ci_high"]
PLOT_METRICS = ("se", "ee", "pt", "p_total")


def aggregate(rows, group_keys=("architecture", "structure"), metrics=PLOT_METRICS) -> list[dict]:
    """One record per (curve, axis value, metric); curves are named by ``group_keys``."""
    groups: dict = {}
    for row in rows:
        curve = "-".join(str(getattr(row, k)) for k in group_keys)
        groups.setdefault((curve, row.axis, row.axis_value), []).append(row)
    records = []
    for (curve, axis, value), members in groups.items():
        for metric in metrics:
            stats = summarize(getattr(r, metric) for r in members)
            records.append({"curve": curve, "axis": axis, "axis_value": value, "metric": metric, **stats})
    return records


def paired_relative_change(rows, metric: str, numerator: tuple, denominator: tuple) -> list[dict]:
    """Per axis value: statistics of metric(numerator)/metric(denominator) - 1 over shared trials.

    ``numerator`` and ``denominator`` are (architecture, structure) pairs such as
    ("RCRAA", "PC") and ("FPA", "PC").
    """
    index = {}
    for row in rows:
        index[(row.architecture, row.structure, row.axis_value, row.trial)] = row
    out = []
    for value in sorted({r.axis_value for r in rows}):
        changes = []
        for (arch, struct, v, trial), row in index.items():
            if (arch, struct) != tuple(numerator) or v != value:
                continue
            base = index.get((denominator[0], denominator[1], value, trial))
            if base is not None and getattr(base, metric) != 0:
                changes.append(getattr(row, metric) / getattr(base, metric) - 1.0)
        if changes:
            out.append({"axis_value": value, "metric": metric, "numerator": "-".join(numerator),
                        "denominator": "-".join(denominator), **summarize(changes)})
    return out


def standard_comparisons(rows) -> list[dict]:
    """RC-selection gains per structure and PC/FD versus FC per array, for SE and EE."""
    present = {(r.architecture, r.structure) for r in rows}
    out = []
    for metric in ("se", "ee"):
        for struct in ("FD", "FC", "PC"):
            if ("RCRAA", struct) in present and ("FPA", struct) in present:
                out += paired_relative_change(rows, metric, ("RCRAA", struct), ("FPA", struct))
        for array in ("RCRAA", "FPA"):
            for struct in ("PC", "FD"):
                if (array, struct) in present and (array, "FC") in present:
                    out += paired_relative_change(rows, metric, (array, struct), (array, "FC"))
    return out


def emit_plotdata(rows, path, group_keys=("architecture", "structure"), metadata: dict | None = None) -> Path:
    """Write per-curve aggregates to ``path`` and a JSON sidecar ``<path>.meta.json``.

    The sidecar holds ``metadata`` plus paired relative comparisons with
    confidence intervals.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to aggregate")
    path = Path(path)
    records = aggregate(rows, group_keys)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=PLOT_FIELDS, lineterminator="\r\n")
            writer.writeheader()
            for rec in records:
                writer.writerow({k: _format(v) for k, v in rec.items()})
        sidecar = path.with_name(path.name + ".meta.json")
        payload = {"metadata": metadata or {}, "comparisons": standard_comparisons(rows),
                   "confidence_level": 0.95, "interval": "normal approximation"}
        sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc
    return path
