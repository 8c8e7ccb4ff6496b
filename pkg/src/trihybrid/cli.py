"""Command-line entry point.

Exit status: 0 on success, 2 when any result row did not converge, 1 on
errors (bad configuration, I/O failures, oracle bound violations).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .harness import Axis, ExperimentSpec, emit_csv, emit_plotdata, run_experiment, summarize
from .metrics import PowerModel
from .oracles import exhaustive_rc_opt
from .pdd import SeOptions
from .rc_cod import CodOptions, run_cod, se_inner_solver
from .system_model import ConfigurationError, SystemConfig, dbm_to_mw, generate_extended_channel

log = logging.getLogger("trihybrid")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

# CLI flag -> (section, key) in the TOML file
_SYSTEM_FLAGS = {
    "n_em": ("system", "n_em"), "n_t": ("system", "n_t"), "users": ("system", "users"),
    "d_p": ("system", "d_p"), "p_max_dbm": ("system", "p_max_dbm"), "noise_dbm": ("system", "noise_dbm"),
    "structure": ("system", "structure"),
}
_EXPERIMENT_FLAGS = {
    "axis": ("experiment", "axis"), "values": ("experiment", "values"),
    "architectures": ("experiment", "architectures"), "ee_solver": ("experiment", "ee_solver"),
    "paths": ("experiment", "paths"), "cod_init": ("experiment", "cod_init"),
    "max_sweeps": ("experiment", "max_sweeps"),
}
_TOP_FLAGS = {"seed": 42, "trials": 20, "out": "./results.csv"}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config file {path}: {exc}") from exc


def merge_settings(args: argparse.Namespace, file_cfg: dict) -> dict:
    """Flatten file values, then let every flag the user actually passed win."""
    settings: dict = {}
    for key, default in _TOP_FLAGS.items():
        settings[key] = file_cfg.get(key, default)
    for table in (_SYSTEM_FLAGS, _EXPERIMENT_FLAGS):
        for flag, (section, key) in table.items():
            section_values = file_cfg.get(section, {})
            if key in section_values:
                settings[flag] = section_values[key]
    settings["power"] = dict(file_cfg.get("power", {}))
    for flag in list(_TOP_FLAGS) + list(_SYSTEM_FLAGS) + list(_EXPERIMENT_FLAGS):
        value = getattr(args, flag, None)
        if value is not None:
            settings[flag] = value
    return settings


def build_config(settings: dict) -> SystemConfig:
    users = int(settings.get("users", 4))
    kwargs = dict(k_users=users, n_rf=users)
    for key in ("n_em", "n_t"):
        if key in settings:
            kwargs[key] = int(settings[key])
    if "d_p" in settings:
        kwargs["d_p"] = float(settings["d_p"])
    if "structure" in settings:
        kwargs["structure"] = settings["structure"]
    kwargs["p_max"] = dbm_to_mw(float(settings.get("p_max_dbm", 30.0)))
    kwargs["noise_power"] = dbm_to_mw(float(settings.get("noise_dbm", 10.0)))
    return SystemConfig(**kwargs)


def build_spec(settings: dict, objective: str, default_axis: str = "MaxTransmitPower") -> ExperimentSpec:
    config = build_config(settings)
    pm = PowerModel(**settings.get("power", {}))
    axis = Axis.parse(settings.get("axis", default_axis))
    values = settings.get("values")
    if values is None:
        if axis not in (Axis.MAX_TRANSMIT_POWER, Axis.TRANSMIT_POWER):
            raise ConfigurationError(f"axis {axis.value} needs explicit values")
        values = [float(settings.get("p_max_dbm", 30.0))]
    if isinstance(values, str):
        values = [float(v) for v in values.split(",") if v.strip()]
    archs = settings.get("architectures")
    if archs is None:
        structure = config.structure.value.upper()
        archs = [f"RCRAA-{structure}", f"FPA-{structure}"]
    if isinstance(archs, str):
        archs = [a.strip() for a in archs.split(",") if a.strip()]
    return ExperimentSpec(
        config=config, power_model=pm, axis=axis, values=tuple(values), architectures=tuple(archs),
        objective=objective, ee_solver=settings.get("ee_solver", "LDTFP"), trials=int(settings["trials"]),
        base_seed=int(settings["seed"]), l_paths=int(settings.get("paths", 4)),
        cod_init=str(settings.get("cod_init", "gain")), max_sweeps=int(settings.get("max_sweeps", 5)))


def _plot_path(out: Path) -> Path:
    return out.with_name(out.stem + ".plot.csv")


def _run_and_write(spec: ExperimentSpec, settings: dict, args) -> int:
    rows = run_experiment(spec)
    out = Path(settings["out"])
    emit_csv(rows, out, include_timing=not args.no_timing)
    plot = Path(args.plotdata) if args.plotdata else _plot_path(out)
    emit_plotdata(rows, plot, metadata=spec.metadata())
    failed = sum(not r.converged for r in rows)
    log.info("wrote %d rows to %s and aggregates to %s", len(rows), out, plot)
    if failed:
        log.warning("%d of %d rows did not converge", failed, len(rows))
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_run_se(args) -> int:
    settings = merge_settings(args, load_config(args.config))
    return _run_and_write(build_spec(settings, "SE"), settings, args)


def cmd_run_ee(args) -> int:
    settings = merge_settings(args, load_config(args.config))
    return _run_and_write(build_spec(settings, "EE"), settings, args)


def cmd_sweep(args) -> int:
    file_cfg = load_config(args.config)
    settings = merge_settings(args, file_cfg)
    objective = args.objective or file_cfg.get("experiment", {}).get("objective", "SE")
    return _run_and_write(build_spec(settings, objective), settings, args)


def cmd_oracle_check(args) -> int:
    """COD against exhaustive search on a small instance; one CSV line per trial."""
    file_cfg = load_config(args.config)
    file_cfg.setdefault("system", {})
    defaults = {"n_em": 10, "n_t": 3, "users": 2, "d_p": 0.25}
    for key, value in defaults.items():
        file_cfg["system"].setdefault(key, value)
    settings = merge_settings(args, file_cfg)
    config = build_config(settings)
    rel_tol = args.rel_tol
    opts = SeOptions(fill_power=True)
    inner = se_inner_solver(config, opts=opts)
    out = Path(settings["out"])
    violations = 0
    not_converged = 0
    gaps = []
    lines = ["trial,seed,channel_hash,init_value,cod_value,oracle_value,relative_gap,feasible_count,cod_converged"]
    for trial in range(int(settings["trials"])):
        seed = int(settings["seed"]) + trial
        channel = generate_extended_channel(config, int(settings.get("paths", 4)), seed)
        _, _, cod = run_cod(channel, config, inner, CodOptions(init=str(settings.get("cod_init", "gain"))))
        oracle = exhaustive_rc_opt(channel, config, inner)
        init_value = cod.extra["cod_trace"][0]
        gap = (oracle.best_value - cod.value) / abs(oracle.best_value)
        gaps.append(gap)
        if cod.value > oracle.best_value + rel_tol * abs(oracle.best_value) or cod.value < init_value:
            violations += 1
        not_converged += not cod.converged
        lines.append(",".join([str(trial), str(seed), channel.digest(), format(init_value, ".17g"),
                               format(cod.value, ".17g"), format(oracle.best_value, ".17g"),
                               format(gap, ".17g"), str(oracle.evaluated_count),
                               "true" if cod.converged else "false"]))
    try:
        out.write_text("\r\n".join(lines) + "\r\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write oracle report to {out}: {exc}") from exc
    stats = summarize(gaps)
    log.info("median relative gap %.4g, mean %.4g (95%% CI %.4g..%.4g) over %d trials",
             sorted(gaps)[len(gaps) // 2], stats["mean"], stats["ci_low"], stats["ci_high"], stats["n"])
    if violations:
        log.error("%d trials broke the oracle bounds", violations)
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED if not_converged else EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file; flags given on the command line override it")
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t (default 42)")
    p.add_argument("--out", help="CSV output path (default ./results.csv)")
    p.add_argument("--trials", type=int, help="number of channel draws (default 20)")
    p.add_argument("--n-em", dest="n_em", type=int)
    p.add_argument("--n-t", dest="n_t", type=int)
    p.add_argument("--users", type=int, help="users, equal to the number of RF chains")
    p.add_argument("--d-p", dest="d_p", type=float, help="candidate spacing in wavelengths")
    p.add_argument("--p-max-dbm", dest="p_max_dbm", type=float)
    p.add_argument("--noise-dbm", dest="noise_dbm", type=float)
    p.add_argument("--paths", type=int, help="propagation paths per user")
    p.add_argument("--cod-init", dest="cod_init", choices=["gain", "fpa"])
    p.add_argument("-v", "--verbose", action="store_true")


def _add_experiment(p: argparse.ArgumentParser) -> None:
    p.add_argument("--structure", help="fc, pc or fd (used when --architectures is absent)")
    p.add_argument("--architectures", help="comma list such as RCRAA-FC,FPA-PC")
    p.add_argument("--axis", help="sweep axis: " + ", ".join(a.value for a in Axis))
    p.add_argument("--values", help="comma list of axis values")
    p.add_argument("--ee-solver", dest="ee_solver", choices=["LDTFP", "DQTFP", "ldtfp", "dqtfp"])
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--plotdata", help="aggregate output path (default <out stem>.plot.csv)")
    p.add_argument("--no-timing", action="store_true", help="omit wall times so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trihybrid", description="RC-selection hybrid beamforming experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, text in (("run-se", cmd_run_se, "maximize sum spectral efficiency"),
                             ("run-ee", cmd_run_ee, "maximize energy efficiency"),
                             ("sweep", cmd_sweep, "sweep one axis as described by the config")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_experiment(p)
        if name == "sweep":
            p.add_argument("--objective", choices=["SE", "EE"])
        p.set_defaults(func=func)
    p = sub.add_parser("oracle-check", help="compare coordinate descent with exhaustive search")
    _add_common(p)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
