"""Command-line front end.

Subcommands: coverage, sweep, nmin, optdensity, validate. Powers are given
in dBm and thresholds in dB; every file written is data only (CSV or JSON)
plus a JSON sidecar recording the resolved parameters and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import analysis, simulate
from .analysis import Mode, NotAchievable, NumericalInstability, QuadratureConfig
from .model import NetworkParams, ParameterError, db_to_linear, linear_to_db, validate

log = logging.getLogger("relaycov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

METHODS = ("analytical_corr", "analytical_uncorr", "analytical_direct", "sim_shared", "sim_indep")
SIM_METHODS = ("sim_shared", "sim_indep")
SWEEP_VARIABLES = ("tau_db", "bs_power_dbm", "bs_density", "ue_antennas", "bs_antennas")

# user-facing configuration keys; dBm keys are converted once here
CONFIG_KEYS = {
    "bs_power_dbm": float, "ue_power_dbm": float, "noise_power_dbm": float,
    "bs_density": float, "relay_density": float, "dest_density": float,
    "density_kind": str,
    "bs_los_prob": float, "ue_los_prob": float,
    "bs_los_radius": float, "ue_los_radius": float,
    "bs_antennas": int, "ue_antennas": int,
    "pathloss_exp": float, "m_bd": int, "m_br": int, "m_rd": int,
    "multiplexing_factor": float, "tau_db": float,
}


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    """Reference configuration in user-facing units."""
    return {
        "bs_power_dbm": 35.0, "ue_power_dbm": 25.0, "noise_power_dbm": 0.0,
        "bs_density": 2e-4, "relay_density": 2e-3, "dest_density": 1e-3,
        "density_kind": "effective",
        "bs_los_prob": 0.9, "ue_los_prob": 0.63,
        "bs_los_radius": 100.0, "ue_los_radius": 20.0,
        "bs_antennas": 10, "ue_antennas": 4, "pathloss_exp": 2.4,
        "m_bd": 2, "m_br": 2, "m_rd": 2, "multiplexing_factor": 0.9,
        "tau_db": 10.0,
    }


def _coerce(key: str, value):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{key}: unknown parameter")
    kind = CONFIG_KEYS[key]
    try:
        if kind is int:
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def load_config(path: str | None, overrides: Sequence[str] = ()) -> dict:
    config = default_config()
    if path:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"params: cannot read {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"params: {path} must hold a key-value mapping")
        for key, value in loaded.items():
            config[key] = _coerce(key, value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        config[key.strip()] = _coerce(key.strip(), yaml.safe_load(value))
    if config["density_kind"] not in ("effective", "raw"):
        raise ConfigError("density_kind: must be 'effective' or 'raw'")
    return config


def params_from_config(config: dict) -> NetworkParams:
    """Build validated linear-scale params from a user-facing config."""
    raw = config["density_kind"] == "raw"
    bs_los, ue_los = config["bs_los_prob"], config["ue_los_prob"]
    if not raw and (bs_los <= 0 or ue_los <= 0):
        raise ParameterError("bs_los_prob" if bs_los <= 0 else "ue_los_prob",
                             "effective densities need a positive LoS probability")
    params = NetworkParams(
        raw_bs_density=config["bs_density"] if raw else config["bs_density"] / bs_los,
        raw_relay_density=config["relay_density"] if raw else config["relay_density"] / ue_los,
        raw_dest_density=config["dest_density"],
        bs_los_prob=bs_los, ue_los_prob=ue_los,
        bs_los_radius=config["bs_los_radius"], ue_los_radius=config["ue_los_radius"],
        bs_power=db_to_linear(config["bs_power_dbm"]),
        ue_power=db_to_linear(config["ue_power_dbm"]),
        noise_power=db_to_linear(config["noise_power_dbm"]),
        bs_antennas=config["bs_antennas"], ue_antennas=config["ue_antennas"],
        pathloss_exp=config["pathloss_exp"],
        m_bd=config["m_bd"], m_br=config["m_br"], m_rd=config["m_rd"],
        multiplexing_factor=config["multiplexing_factor"],
    )
    return validate(params)


def describe_params(params: NetworkParams) -> dict:
    """Parameter record in user-facing units for sidecars."""
    out = params.as_dict()
    for name in ("bs_power", "ue_power", "noise_power"):
        out[f"{name}_dbm"] = round(float(linear_to_db(out.pop(name))), 12)
    out.update(params.derived())
    return out


# -- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    methods: tuple[str, ...]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"variable: must be one of {', '.join(SWEEP_VARIABLES)}")
        if not self.values:
            raise ConfigError("values: sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("values: must be strictly ascending")
        if not self.methods:
            raise ConfigError("method: at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"method: unknown {sorted(unknown)}")


@dataclass
class ResultRow:
    variable: str
    value: float
    method: str
    probability: float
    ci_low: float | None = None
    ci_high: float | None = None
    trials: int | None = None
    runtime_ms: float = 0.0


@dataclass(frozen=True)
class RunOptions:
    trials: int = 100_000
    seed: int = 0
    workers: int = 1
    fading: simulate.DesiredFading = simulate.DesiredFading.GAMMA
    quad: QuadratureConfig = QuadratureConfig()


def _apply(config: dict, variable: str, value) -> dict:
    point = dict(config)
    point[variable] = value
    return point


def _analytical(params: NetworkParams, tau: float, method: str, quad: QuadratureConfig) -> float:
    if method == "analytical_direct":
        return analysis.coverage_direct_correlated(params, tau, quad)
    mode = Mode.CORRELATED if method == "analytical_corr" else Mode.UNCORRELATED
    return analysis.coverage_total(params, tau, mode, quad)


def _evaluate_point(args) -> list[ResultRow]:
    config, variable, value, methods, options = args
    params = params_from_config(config)
    tau = db_to_linear(config["tau_db"])
    rows = []
    log.info("evaluating %s=%s", variable, value)
    for method in methods:
        start = time.perf_counter()
        try:
            if method in SIM_METHODS:
                mode = (simulate.CorrelationMode.SHARED if method == "sim_shared"
                        else simulate.CorrelationMode.INDEPENDENT)
                sim = simulate.SimConfig(trials=options.trials, seed=options.seed,
                                         correlation_mode=mode, desired_fading=options.fading,
                                         workers=options.workers)
                res = simulate.estimate_coverage(params, tau, sim)
                row = ResultRow(variable, value, method, res.probability, res.ci_low,
                                res.ci_high, res.trials)
            else:
                row = ResultRow(variable, value, method, _analytical(params, tau, method, options.quad))
        except NumericalInstability as exc:
            raise NumericalInstability(f"{variable}={value} ({method}): {exc}") from exc
        row.runtime_ms = 1e3 * (time.perf_counter() - start)
        rows.append(row)
    return rows


def run_sweep(spec: SweepSpec, config: dict, options: RunOptions) -> list[ResultRow]:
    """Evaluate every method at every sweep value, preserving value order."""
    config = {**config, **spec.fixed}
    params_from_config(config)  # fail fast on the base point
    jobs = [(_apply(config, spec.variable, v), spec.variable, v, spec.methods, options)
            for v in spec.values]
    if options.workers > 1 and len(jobs) > 1:
        # parallel over points; each point then simulates in-process
        serial = replace(options, workers=1)
        jobs = [(*job[:4], serial) for job in jobs]
        with ProcessPoolExecutor(max_workers=options.workers) as pool:
            chunks = list(pool.map(_evaluate_point, jobs))
    else:
        chunks = [_evaluate_point(job) for job in jobs]
    return [row for chunk in chunks for row in chunk]


def run_nmin(config: dict, xis: Sequence[float], mode: Mode, cap: int = 32,
             quad: QuadratureConfig | None = None) -> list[dict]:
    params = params_from_config(config)
    tau = db_to_linear(config["tau_db"])
    rows = []
    for xi in xis:
        if not 0.0 < xi < 1.0:
            raise ConfigError(f"xi: {xi} is not in (0, 1)")
        try:
            n_min = analysis.min_antennas(params, tau, xi, mode, cap, quad)
        except NotAchievable:
            n_min = "not_achievable"
        rows.append({"xi": xi, "mode": mode.value, "n_min": n_min})
    return rows


def log_grid(low: float, high: float, points: int) -> list[float]:
    if points == 1 and 0 < low == high:
        return [low]
    if not 0 < low < high or points < 1:
        raise ConfigError("grid: need 0 < min < max and at least one point")
    return [float(v) for v in np.logspace(np.log10(low), np.log10(high), points)]


def run_optimal_density(config: dict, nb_values: Sequence[int], grid: Sequence[float],
                        mode: Mode = Mode.CORRELATED,
                        quad: QuadratureConfig | None = None) -> list[dict]:
    tau = db_to_linear(config["tau_db"])
    rows = []
    for n_b in nb_values:
        params = params_from_config({**config, "bs_antennas": n_b})
        density, prob = analysis.optimal_bs_density(params, tau, grid, mode, quad)
        rows.append({"bs_antennas": n_b, "opt_bs_density": density, "probability": prob})
    return rows


def run_validate(config: dict, taus_db: Sequence[float], options: RunOptions) -> list[dict]:
    """Per-link analytical value next to its simulation estimate and CI."""
    params = params_from_config(config)
    taus = [db_to_linear(t) for t in taus_db]
    rows = []
    for mode, sim_mode in ((Mode.CORRELATED, simulate.CorrelationMode.SHARED),
                           (Mode.UNCORRELATED, simulate.CorrelationMode.INDEPENDENT)):
        sim = simulate.SimConfig(trials=options.trials, seed=options.seed,
                                 correlation_mode=sim_mode, desired_fading=options.fading,
                                 workers=options.workers)
        estimates = simulate.estimate_all(params, taus, sim)
        for i, (tau_db, tau) in enumerate(zip(taus_db, taus)):
            breakdown = analysis.coverage_breakdown(params, tau, mode, options.quad)
            for outcome in simulate.OUTCOMES:
                est = estimates[outcome][i]
                value = getattr(breakdown, outcome)
                rows.append({
                    "tau_db": tau_db, "mode": mode.value, "outcome": outcome,
                    "analytical": value, "simulated": est.probability,
                    "ci_low": est.ci_low, "ci_high": est.ci_high,
                    "inside_ci": est.ci_low <= value <= est.ci_high,
                })
    return rows


# -- output -------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    # repr keeps full precision and is stable across runs
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else _fmt(v)) for k, v in row.items()})
    return buf.getvalue()


def sweep_records(rows: list[ResultRow]) -> list[dict]:
    """Long-format records; CI columns only when a simulation method ran."""
    with_ci = any(r.trials is not None for r in rows)
    records = []
    for r in rows:
        rec = {"variable": r.variable, "value": r.value, "method": r.method,
               "probability": min(max(r.probability, 0.0), 1.0)}
        if with_ci:
            rec.update(ci_low=r.ci_low, ci_high=r.ci_high, trials=r.trials)
        records.append(rec)
    return records


def emit(records: list[dict], out: str | None, fmt: str, meta: dict) -> None:
    if fmt == "json":
        text = json.dumps({"rows": records, "meta": meta}, indent=2, sort_keys=True) + "\n"
    else:
        text = to_csv(records)
    if out is None:
        sys.stdout.write(text)
        return
    atomic_write(Path(out), text)
    if fmt == "csv":
        atomic_write(Path(out).with_suffix(Path(out).suffix + ".json"),
                     json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _floats(text: str) -> list[float]:
    """Parse '1,2,3' or 'start:stop:step' (stop inclusive)."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        try:
            start, stop, step = (float(p) for p in text.split(":"))
        except ValueError:
            raise ConfigError(f"values: cannot parse range {text!r}") from None
        if step <= 0:
            raise ConfigError("values: range step must be positive")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"values: cannot parse {text!r}") from None


def _methods(text: str) -> tuple[str, ...]:
    if text == "all":
        return ("analytical_corr", "analytical_uncorr", "sim_shared", "sim_indep")
    return tuple(m.strip() for m in text.split(",") if m.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="YAML file of key: value parameters")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one parameter (repeatable)")
    common.add_argument("--tau-db", type=float, help="SINR threshold in dB")
    common.add_argument("--trials", type=int, default=100_000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--fading", choices=[f.value for f in simulate.DesiredFading],
                        default="gamma", help="desired-signal fading law in simulations")
    common.add_argument("--nodes", type=int, default=128, help="Gauss-Legendre nodes per axis")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="relaycov", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coverage", parents=[common], help="coverage at one operating point")
    p.add_argument("--method", default="analytical_corr,analytical_uncorr")

    p = sub.add_parser("sweep", parents=[common], help="coverage over a parameter grid")
    p.add_argument("--variable", required=True, choices=SWEEP_VARIABLES)
    p.add_argument("--values", required=True, help="'a,b,c' or 'start:stop:step'")
    p.add_argument("--method", default="analytical_corr")

    p = sub.add_parser("nmin", parents=[common], help="minimum destination antennas")
    p.add_argument("--xi", default="0.6,0.7,0.8,0.9")
    p.add_argument("--mode", choices=("correlated", "uncorrelated", "both"), default="both")
    p.add_argument("--cap", type=int, default=32)

    p = sub.add_parser("optdensity", parents=[common], help="coverage-maximizing BS density")
    p.add_argument("--nb", default="4,8,16")
    p.add_argument("--grid-min", type=float, default=1e-4)
    p.add_argument("--grid-max", type=float, default=1e-2)
    p.add_argument("--grid-points", type=int, default=40)

    p = sub.add_parser("validate", parents=[common], help="analysis vs simulation report")
    p.add_argument("--taus-db", default="6,10,14")
    return parser


def _options(args) -> RunOptions:
    if args.trials < 1 or args.workers < 1:
        raise ConfigError("trials and workers must be >= 1")
    return RunOptions(trials=args.trials, seed=args.seed, workers=args.workers,
                      fading=simulate.DesiredFading(args.fading),
                      quad=QuadratureConfig(outer_nodes=args.nodes, inner_nodes=args.nodes))


def _dispatch(args) -> tuple[list[dict], dict]:
    config = load_config(args.params, args.overrides)
    if args.tau_db is not None:
        config["tau_db"] = args.tau_db
    options = _options(args)
    meta = {
        "command": args.command,
        "params": describe_params(params_from_config(config)),
        "tau_db": config["tau_db"],
        "seed": args.seed,
        "trials": args.trials,
        "fading": args.fading,
        "quadrature_nodes": args.nodes,
    }
    start = time.perf_counter()
    if args.command in ("coverage", "sweep"):
        if args.command == "coverage":
            spec = SweepSpec("tau_db", (config["tau_db"],), _methods(args.method))
        else:
            values = _floats(args.values)
            if args.variable in ("ue_antennas", "bs_antennas"):
                values = [int(v) for v in values]
            spec = SweepSpec(args.variable, tuple(values), _methods(args.method))
        rows = run_sweep(spec, config, options)
        records = sweep_records(rows)
        meta["runtime_ms"] = [round(r.runtime_ms, 3) for r in rows]
    elif args.command == "nmin":
        modes = [Mode.CORRELATED, Mode.UNCORRELATED] if args.mode == "both" else [Mode(args.mode)]
        records = [r for mode in modes
                   for r in run_nmin(config, _floats(args.xi), mode, args.cap, options.quad)]
    elif args.command == "optdensity":
        grid = log_grid(args.grid_min, args.grid_max, args.grid_points)
        records = run_optimal_density(config, [int(v) for v in _floats(args.nb)], grid,
                                      quad=options.quad)
        meta["grid"] = grid
    else:
        records = run_validate(config, _floats(args.taus_db), options)
    meta["total_runtime_ms"] = round(1e3 * (time.perf_counter() - start), 3)
    return records, meta


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        records, meta = _dispatch(args)
        emit(records, args.out, args.format, meta)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstability as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
