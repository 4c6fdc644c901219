"""Batch front-end: parse config, orchestrate runs, persist outputs.

Subcommands
-----------
converge     strong-error curve over a scale grid, rate fit, convergence.csv
diagnostics  moment/regularity/block-freezing/mixing sweeps, diagnostics.csv
ergodicity   frozen-dynamics decay curve and averaged-drift spot checks
poisson      corrector estimates at probe points and the generator residual
simulate     one checkpointed ensemble run, clouds.csv + moments.csv
probe        structural probe table for a model, printed to stdout

Configuration is a plain key=value file with sections ([model], [run], and
one optional section per subcommand); command-line flags override file
values.  All validation problems are collected and reported together.  On
failure a machine-readable JSON record goes to stderr and the exit code
identifies the failure class:

    0  success
    2  usage error (unknown subcommand or flag, bad flag value)
    3  config validation failure
    4  I/O failure (unreadable config, unwritable output)
    5  runtime failure inside a simulation

Every run writes <subcommand>_metadata.json next to its CSVs with the full
resolved config, the package version, and the headline results, so a run
is reconstructible from its metadata alone.  CSV files are UTF-8 with a
header row, '\n' line endings, '.' decimal separator, and floats written
with repr (shortest round-trip form).  The TWOSCALE_OUTDIR environment
variable supplies the default output directory.  `--workers K` splits
replicates across processes; replicate rows are keyed by replicate index,
not by batch, so output bytes are identical for every K.
"""

import argparse
import configparser
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .measures import ParticleCloud
from .models import (CoefficientSet, LinearBenchmarkParams, ModelError,
                     convolution_example, linear_benchmark, probe_assumptions)
from .solvers import (BbarSource, ErgodicConfig, SolverError, TimeGrid,
                      ergodic_decay, estimate_bbar, simulate_averaged,
                      simulate_slowfast)
from .poisson import PoissonError, estimate_phi, residual_check
from .experiments import (DiagnosticsConfig, ExperimentError, H_RULE,
                          deviation_matrix, diagnostics_suite, stable_step,
                          study_from_matrices)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_RUNTIME = 5

OUTDIR_ENV = "TWOSCALE_OUTDIR"

SUBCOMMANDS = ("converge", "diagnostics", "ergodicity", "poisson",
               "simulate", "probe")

_LINEAR_KEYS = ("a1", "a2", "a3", "c1", "c2", "kappa", "sigma_x", "sigma_y")


class ConfigError(ValueError):
    """Raised with the full list of config validation problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config plumbing


@dataclass
class RunConfig:
    """Resolved parameters for one run; flags have already overridden file
    values by the time an instance exists."""

    subcommand: str
    model_name: str = "linear"
    model_params: dict = field(default_factory=dict)
    kernel: str = "sin"
    epsilon_grid: tuple = (2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7, 2.0**-8,
                           2.0**-9)
    epsilon: float = None
    horizon: float = 1.0
    n_particles: int = None
    n_replicates: int = None
    seed: int = 0
    n_checkpoints: int = 64
    h_override: float = None
    workers: int = 1
    out_dir: str = "."
    source: str = "analytic"
    # frozen-equation controls (poisson, ergodicity, ergodic drift source)
    s_max: float = None
    n_traj: int = None
    h_frozen: float = None
    tol: float = 1e-3
    fd_step: float = 1e-4
    n_samples: int = 256
    y_start: float = 10.0
    n_points: int = 50
    kind: str = "slowfast"
    x0: float = 1.0
    y0: float = 1.0
    n_probes: int = 200


# Rig sizes differ per subcommand: the convergence study wants the full
# replicate rig, the diagnostics sweeps want a light one at a smaller
# reference scale (its default block lengths are tuned to epsilon = 2^-8).
_SUBCOMMAND_DEFAULTS = {
    "converge": {"epsilon": 2.0**-6, "n_particles": 2000,
                 "n_replicates": 32, "n_traj": 4000},
    "diagnostics": {"epsilon": 2.0**-8, "n_particles": 256,
                    "n_replicates": 4, "n_traj": 10000},
    "ergodicity": {"epsilon": 2.0**-6, "n_particles": 2,
                   "n_replicates": 2, "n_traj": 10000},
    "poisson": {"epsilon": 2.0**-6, "n_particles": 2,
                "n_replicates": 2, "n_traj": 4000},
    "simulate": {"epsilon": 2.0**-6, "n_particles": 256,
                 "n_replicates": 1, "n_traj": 4000},
    "probe": {"epsilon": 2.0**-6, "n_particles": 2,
              "n_replicates": 2, "n_traj": 4000},
}


_FLOAT_FIELDS = {"epsilon", "horizon", "h_override", "s_max", "h_frozen",
                 "tol", "fd_step", "y_start", "x0", "y0"}
_INT_FIELDS = {"n_particles", "n_replicates", "seed", "n_checkpoints",
               "workers", "n_traj", "n_samples", "n_points", "n_probes"}
_STR_FIELDS = {"model_name", "kernel", "out_dir", "source", "kind"}


def _parse_epsilon_token(token):
    token = token.strip()
    m = re.fullmatch(r"2\s*(?:\^|\*\*)\s*(-?\d+)", token)
    if m:
        return 2.0 ** int(m.group(1))
    return float(token)


def parse_epsilon_grid(text):
    tokens = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not tokens:
        raise ValueError("epsilon grid is empty")
    return tuple(_parse_epsilon_token(t) for t in tokens)


def _load_config_file(path):
    """Read the INI file into a flat {field: raw string} dict."""
    cp = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError([f"config file {path}: {exc}"]) from exc
    flat = {}
    problems = []
    if cp.has_section("model"):
        for key, raw in cp.items("model"):
            if key == "name":
                flat["model_name"] = raw
            elif key == "kernel":
                flat["kernel"] = raw
            elif key in _LINEAR_KEYS:
                flat.setdefault("model_params", {})[key] = raw
            else:
                problems.append(f"[model] {key}: unknown parameter")
    for section in ("run",) + SUBCOMMANDS:
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key in _FLOAT_FIELDS or key in _INT_FIELDS or key in _STR_FIELDS \
                    or key == "epsilon_grid":
                flat[key] = raw
            else:
                problems.append(f"[{section}] {key}: unknown parameter")
    if problems:
        raise ConfigError(problems)
    return flat


def _coerce(cfg_dict, problems):
    """Convert raw strings in place to their field types."""
    out = {}
    for key, raw in cfg_dict.items():
        if raw is None:
            continue
        try:
            if key == "epsilon_grid":
                out[key] = (parse_epsilon_grid(raw)
                            if isinstance(raw, str) else tuple(raw))
            elif key == "model_params":
                out[key] = {k: float(v) for k, v in raw.items()}
            elif key in _FLOAT_FIELDS:
                out[key] = float(raw)
            elif key in _INT_FIELDS:
                out[key] = int(raw)
            else:
                out[key] = str(raw)
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc}")
    return out


def build_model(cfg: RunConfig) -> CoefficientSet:
    if cfg.model_name == "linear":
        params = LinearBenchmarkParams(**cfg.model_params)
        return linear_benchmark(params)
    if cfg.model_name == "convolution":
        return convolution_example(cfg.kernel)
    raise ModelError(
        f"unknown model {cfg.model_name!r}; available: linear, convolution")


def validate(cfg: RunConfig):
    """Collect every problem with the resolved config; raise them together.

    Returns the constructed model so callers do not build it twice.
    """
    problems = []
    model = None
    try:
        model = build_model(cfg)
    except (ModelError, TypeError) as exc:
        problems.append(f"model: {exc}")

    for i, e in enumerate(cfg.epsilon_grid):
        if not (0.0 < e < 1.0):
            problems.append(
                f"epsilon_grid[{i}] = {e} must lie in (0, 1)")
    if cfg.subcommand == "converge":
        if len(set(cfg.epsilon_grid)) != len(cfg.epsilon_grid):
            problems.append("epsilon_grid contains repeated values")
        if len(set(cfg.epsilon_grid)) < 3:
            problems.append(
                "epsilon_grid needs at least 3 distinct points to fit a rate")
    if not (0.0 < cfg.epsilon < 1.0):
        problems.append(f"epsilon = {cfg.epsilon} must lie in (0, 1)")
    if not (cfg.horizon > 0.0 and math.isfinite(cfg.horizon)):
        problems.append(f"horizon = {cfg.horizon} must be positive and finite")
    if cfg.n_particles < 1:
        problems.append(f"n_particles = {cfg.n_particles} must be >= 1")
    if cfg.n_replicates < 2 and cfg.subcommand == "converge":
        problems.append(
            f"n_replicates = {cfg.n_replicates} must be >= 2 for error bars")
    if cfg.n_replicates < 1:
        problems.append(f"n_replicates = {cfg.n_replicates} must be >= 1")
    if cfg.n_checkpoints < 1:
        problems.append(f"n_checkpoints = {cfg.n_checkpoints} must be >= 1")
    if cfg.workers < 1:
        problems.append(f"workers = {cfg.workers} must be >= 1")
    if cfg.source not in ("analytic", "ergodic"):
        problems.append(
            f"source = {cfg.source!r} must be 'analytic' or 'ergodic'")
    if cfg.kind not in ("slowfast", "averaged"):
        problems.append(
            f"kind = {cfg.kind!r} must be 'slowfast' or 'averaged'")
    if cfg.tol <= 0.0:
        problems.append(f"tol = {cfg.tol} must be > 0")
    if cfg.fd_step <= 0.0:
        problems.append(f"fd_step = {cfg.fd_step} must be > 0")
    if cfg.n_traj < 2:
        problems.append(f"n_traj = {cfg.n_traj} must be >= 2")
    if cfg.n_samples < 2:
        problems.append(f"n_samples = {cfg.n_samples} must be >= 2")
    if cfg.n_probes < 2:
        problems.append(f"n_probes = {cfg.n_probes} must be >= 2")
    if cfg.s_max is not None and cfg.s_max <= 0.0:
        problems.append(f"s_max = {cfg.s_max} must be > 0")
    if cfg.h_frozen is not None and cfg.h_frozen <= 0.0:
        problems.append(f"h_frozen = {cfg.h_frozen} must be > 0")

    if model is not None and cfg.h_override is not None:
        if cfg.h_override <= 0.0:
            problems.append(f"h_override = {cfg.h_override} must be > 0")
        else:
            eps_used = (list(cfg.epsilon_grid)
                        if cfg.subcommand == "converge" else [cfg.epsilon])
            bound = 0.5 * min(eps_used) / model.beta
            if cfg.h_override > bound:
                problems.append(
                    f"h_override = {cfg.h_override} violates the stability "
                    f"rule h <= 0.5*epsilon/beta = {bound:.6g} at the "
                    f"smallest epsilon")
    if model is not None:
        # grids must assemble before any simulation starts
        if cfg.subcommand == "converge":
            eps_used = list(cfg.epsilon_grid)
        elif cfg.subcommand == "diagnostics":
            eps_used = list(cfg.epsilon_grid[:3]) + [cfg.epsilon]
        else:
            eps_used = [cfg.epsilon]
        for e in eps_used:
            if not (0.0 < e < 1.0):
                continue
            try:
                TimeGrid(cfg.horizon, _step_for(cfg, model, e),
                         cfg.n_checkpoints)
            except SolverError as exc:
                problems.append(f"grid at epsilon={e}: {exc}")
    if problems:
        raise ConfigError(problems)
    return model


def _step_for(cfg: RunConfig, model: CoefficientSet, epsilon: float) -> float:
    if cfg.h_override is not None:
        return cfg.h_override
    return stable_step(epsilon, model.beta, cfg.horizon)


def resolve_config(args) -> RunConfig:
    """defaults < config file < flags, with problems reported together."""
    problems = []
    file_vals = {}
    if args.config:
        file_vals = _load_config_file(args.config)
    flag_vals = {k: v for k, v in vars(args).items()
                 if k in RunConfig.__dataclass_fields__ and v is not None}
    merged = {"subcommand": args.subcommand}
    merged.update(_coerce(file_vals, problems))
    merged.update(_coerce(flag_vals, problems))
    if problems:
        raise ConfigError(problems)
    if "out_dir" not in merged:
        merged["out_dir"] = os.environ.get(OUTDIR_ENV, ".")
    for key, value in _SUBCOMMAND_DEFAULTS[args.subcommand].items():
        merged.setdefault(key, value)
    return RunConfig(**merged)


def config_echo(cfg: RunConfig) -> dict:
    record = dict(cfg.__dict__)
    record["epsilon_grid"] = list(cfg.epsilon_grid)
    record["h_rule"] = H_RULE if cfg.h_override is None else "h_override"
    return record


# ---------------------------------------------------------------------------
# Output plumbing


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_metadata(path, cfg: RunConfig, results: dict):
    record = {
        "tool": "twoscale",
        "version": __version__,
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "config": config_echo(cfg),
        "results": results,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outpath(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


# ---------------------------------------------------------------------------
# converge


def _deviation_chunk(task):
    """Worker entry: rebuild the model from primitives and run a replicate
    chunk.  Rows are keyed by replicate index, so chunk boundaries do not
    affect the assembled matrix."""
    (model_name, model_params, kernel, eps, horizon, h, n_checkpoints,
     n_particles, chunk, seed, source, x0, y0, ergodic_kwargs) = task
    cfg = RunConfig(subcommand="converge", model_name=model_name,
                    model_params=model_params, kernel=kernel)
    model = build_model(cfg)
    grid = TimeGrid(horizon, h, n_checkpoints)
    econf = ErgodicConfig(**ergodic_kwargs) if ergodic_kwargs else None
    return deviation_matrix(model, eps, grid, n_particles, chunk, seed,
                            BbarSource[source], econf, x0=x0, y0=y0)


def _replicate_chunks(n_replicates, workers):
    size = math.ceil(n_replicates / workers)
    return [list(range(lo, min(lo + size, n_replicates)))
            for lo in range(0, n_replicates, size)]


def _ergodic_kwargs(cfg: RunConfig):
    if cfg.source != "ergodic":
        return None
    return {"h_frozen": cfg.h_frozen, "n_samples": cfg.n_samples}


def run_converge(cfg: RunConfig, model: CoefficientSet) -> int:
    eps = sorted(set(cfg.epsilon_grid), reverse=True)
    source = "ANALYTIC" if cfg.source == "analytic" else "ERGODIC_ESTIMATE"
    matrices = []
    for e in eps:
        h = _step_for(cfg, model, e)
        tasks = [(cfg.model_name, cfg.model_params, cfg.kernel, e,
                  cfg.horizon, h, cfg.n_checkpoints, cfg.n_particles, chunk,
                  cfg.seed, source, cfg.x0, cfg.y0, _ergodic_kwargs(cfg))
                 for chunk in _replicate_chunks(cfg.n_replicates, cfg.workers)]
        if cfg.workers == 1:
            parts = [_deviation_chunk(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                parts = list(pool.map(_deviation_chunk, tasks))
        matrices.append(np.vstack(parts))
    report = study_from_matrices(
        model.label, eps, matrices, cfg.n_particles, cfg.n_replicates,
        cfg.horizon, cfg.n_checkpoints, cfg.seed, source)
    rows = [(e, report.errors[i], report.standard_errors[i],
             cfg.n_particles, cfg.n_replicates, cfg.seed)
            for i, e in enumerate(eps)]
    write_csv(_outpath(cfg, "convergence.csv"),
              ["epsilon", "error", "se", "n_particles", "n_reps", "seed"],
              rows)
    write_metadata(_outpath(cfg, "converge_metadata.json"), cfg, {
        "slope": report.slope,
        "intercept": report.intercept,
        "slope_ci": list(report.slope_ci),
        "errors": [float(v) for v in report.errors],
        "standard_errors": [float(v) for v in report.standard_errors],
        "epsilon_grid": [float(e) for e in eps],
        "steps_per_epsilon": {repr(float(e)): int(round(
            cfg.horizon / _step_for(cfg, model, e))) for e in eps},
        "outputs": ["convergence.csv"],
    })
    print(f"converge: slope {report.slope:.4f} "
          f"ci [{report.slope_ci[0]:.4f}, {report.slope_ci[1]:.4f}] "
          f"over {len(eps)} epsilons; wrote convergence.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnostics


def run_diagnostics(cfg: RunConfig, model: CoefficientSet) -> int:
    dconf = DiagnosticsConfig(
        epsilon_grid=tuple(cfg.epsilon_grid[:3]),
        epsilon_ref=cfg.epsilon,
        horizon=cfg.horizon, n_particles=cfg.n_particles,
        n_replicates=max(2, min(cfg.n_replicates, 8)), seed=cfg.seed,
        n_checkpoints=cfg.n_checkpoints,
        decay_y0=cfg.y_start, decay_n_traj=cfg.n_traj,
        decay_s_max=cfg.s_max, decay_h=cfg.h_frozen,
        x0=cfg.x0, y0=cfg.y0)
    rep = diagnostics_suite(model, dconf)
    rows = []
    for i, (e, m4x, m4y) in enumerate(rep.moment_table):
        rows.append(("fourth_moments", i, "epsilon", e))
        rows.append(("fourth_moments", i, "m4_x", m4x))
        rows.append(("fourth_moments", i, "m4_y", m4y))
    for i, (t, v) in enumerate(zip(rep.holder_times, rep.holder_msd)):
        rows.append(("time_regularity", i, "lag", t))
        rows.append(("time_regularity", i, "msd", v))
    rows.append(("time_regularity", -1, "slope", rep.holder_slope))
    for i in range(len(rep.delta_grid)):
        rows.append(("delta_sweep", i, "delta", rep.delta_grid[i]))
        rows.append(("delta_sweep", i, "y_gap", rep.y_gap_sup[i]))
        rows.append(("delta_sweep", i, "x_gap", rep.x_gap_sup[i]))
    rows.append(("delta_sweep", -1, "slope_y", rep.delta_slope_y))
    rows.append(("delta_sweep", -1, "slope_x", rep.delta_slope_x))
    rows.append(("delta_sweep", -1, "delta_star", rep.delta_star))
    rows.append(("ergodic_decay", -1, "rate", rep.decay_rate))
    rows.append(("ergodic_decay", -1, "drop", rep.decay_drop))
    write_csv(_outpath(cfg, "diagnostics.csv"),
              ["table", "row", "field", "value"], rows)
    write_csv(_outpath(cfg, "delta_sweep.csv"),
              ["delta", "y_gap", "x_gap"],
              list(zip(rep.delta_grid, rep.y_gap_sup, rep.x_gap_sup)))
    write_csv(_outpath(cfg, "decay.csv"),
              ["s", "deviation", "mc_floor"],
              list(zip(rep.decay.s, rep.decay.deviation, rep.decay.mc_floor)))
    write_metadata(_outpath(cfg, "diagnostics_metadata.json"), cfg, {
        "holder_slope": rep.holder_slope,
        "delta_slope_y": rep.delta_slope_y,
        "delta_slope_x": rep.delta_slope_x,
        "delta_star": rep.delta_star,
        "decay_rate": rep.decay_rate,
        "decay_drop": rep.decay_drop,
        "beta_over_2": model.beta / 2.0,
        "outputs": ["diagnostics.csv", "delta_sweep.csv", "decay.csv"],
    })
    print(f"diagnostics: holder {rep.holder_slope:.3f}, delta slopes "
          f"y {rep.delta_slope_y:.3f} / x {rep.delta_slope_x:.3f}, "
          f"decay rate {rep.decay_rate:.3f}; wrote diagnostics.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ergodicity


def _probe_points(model: CoefficientSet, count: int = 8):
    """Deterministic probe points: moderate x and mean values, so closed
    forms are compared where rounding noise is far below tolerance."""
    xs = [0.0, 0.5, -0.5, 1.0, -1.0, 0.25, 2.0, -1.5]
    ms = [0.0, 0.25, -0.5, 0.5, 1.0, -0.25, 0.75, 0.0]
    pts = []
    for i in range(count):
        x = np.full(model.n, xs[i % len(xs)])
        mu = ParticleCloud(np.full((2, model.n), ms[i % len(ms)]))
        pts.append((0.0, x, mu))
    return pts


def run_ergodicity(cfg: RunConfig, model: CoefficientSet) -> int:
    s_max = cfg.s_max if cfg.s_max is not None else 20.0 / model.beta
    mu0 = ParticleCloud(np.full((2, model.n), cfg.x0))
    curve = ergodic_decay(model, 0.0, cfg.x0, mu0, cfg.y_start,
                          s_max=s_max, n_traj=cfg.n_traj, seed=cfg.seed,
                          h_frozen=cfg.h_frozen, n_points=cfg.n_points)
    clear = curve.deviation > 10.0 * curve.mc_floor
    if clear.sum() >= 3:
        rate = -float(np.polyfit(curve.s[clear],
                                 np.log(curve.deviation[clear]), 1)[0])
    else:
        rate = float("nan")
    write_csv(_outpath(cfg, "ergodicity.csv"),
              ["s", "deviation", "mc_floor"],
              list(zip(curve.s, curve.deviation, curve.mc_floor)))

    bbar_rows = []
    if model.analytic_bbar is not None:
        for i, (t, x, mu) in enumerate(_probe_points(model)):
            est = estimate_bbar(model, t, x, mu, seed=cfg.seed + i,
                                config=ErgodicConfig(
                                    h_frozen=cfg.h_frozen,
                                    n_samples=cfg.n_samples))
            target = model.analytic_bbar(t, x.reshape(1, model.n), mu)
            for c in range(model.n):
                bbar_rows.append((i, c, est.value[c], est.standard_error[c],
                                  float(target[0, c])))
    if bbar_rows:
        write_csv(_outpath(cfg, "bbar_check.csv"),
                  ["point", "component", "estimate", "se", "closed_form"],
                  bbar_rows)
    write_metadata(_outpath(cfg, "ergodicity_metadata.json"), cfg, {
        "decay_rate": rate,
        "beta_over_2": model.beta / 2.0,
        "s_max": s_max,
        "n_traj": cfg.n_traj,
        "initial_deviation": float(curve.deviation[0]),
        "final_deviation": float(curve.deviation[-1]),
        "outputs": (["ergodicity.csv", "bbar_check.csv"] if bbar_rows
                    else ["ergodicity.csv"]),
    })
    print(f"ergodicity: rate {rate:.3f} (beta/2 = {model.beta / 2:.3f}), "
          f"deviation {curve.deviation[0]:.3g} -> {curve.deviation[-1]:.3g}; "
          f"wrote ergodicity.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# poisson


def run_poisson(cfg: RunConfig, model: CoefficientSet) -> int:
    if model.analytic_bbar is None:
        raise ConfigError(
            [f"model {model.label!r} has no closed-form averaged drift; "
             "the corrector pipeline needs one as its target"])
    h_frozen = cfg.h_frozen if cfg.h_frozen is not None else 0.1 / model.beta
    floor = (2.0 / model.beta) * math.log(1.0 / cfg.tol)
    if cfg.s_max is not None:
        s_max = cfg.s_max
    else:
        # tolerance-driven default: 25% above the truncation floor,
        # rounded up to a whole number of frozen steps
        s_max = math.ceil(1.25 * floor / h_frozen) * h_frozen
    ys = [1.0, -1.0, 0.5, 2.0, 0.0, -0.5, 1.5, -2.0]
    rows = []
    for i, (t, x, mu) in enumerate(_probe_points(model)):
        y = np.full(model.m, ys[i % len(ys)])
        bbar = model.analytic_bbar(t, x.reshape(1, model.n), mu)[0]
        est = estimate_phi(model, t, x, mu, y, s_max=s_max,
                           h_frozen=h_frozen, n_traj=cfg.n_traj,
                           seed=cfg.seed + i, bbar=bbar, tol=cfg.tol)
        for c in range(model.n):
            rows.append((i, c, est.value[c], est.standard_error[c],
                         est.tail_bound))
    write_csv(_outpath(cfg, "poisson.csv"),
              ["point", "component", "phi", "se", "tail_bound"], rows)
    results = {"s_max": s_max, "n_traj": cfg.n_traj, "tol": cfg.tol,
               "h_frozen": h_frozen, "outputs": ["poisson.csv"]}
    if model.analytic_phi is not None:
        pts = [(0.0, np.full(model.n, 0.4),
                ParticleCloud(np.full((2, model.n), 0.2)),
                np.full(model.m, v)) for v in (0.0, 0.5, -0.3)]
        results["residual"] = residual_check(model, pts, fd_step=cfg.fd_step)
        results["fd_step"] = cfg.fd_step
    write_metadata(_outpath(cfg, "poisson_metadata.json"), cfg, results)
    msg = f"poisson: {len(rows)} corrector rows at s_max {s_max:.3g}"
    if "residual" in results:
        msg += f", closed-form residual {results['residual']:.3g}"
    print(msg + "; wrote poisson.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: RunConfig, model: CoefficientSet) -> int:
    grid = TimeGrid(cfg.horizon, _step_for(cfg, model, cfg.epsilon),
                    cfg.n_checkpoints)
    x_names = [f"x{i}" for i in range(model.n)]
    y_names = [f"y{i}" for i in range(model.m)]
    cloud_rows = []
    if cfg.kind == "slowfast":
        runs = [simulate_slowfast(model, cfg.epsilon, grid, cfg.n_particles,
                                  replicate=r, seed=cfg.seed, x0=cfg.x0,
                                  y0=cfg.y0)
                for r in range(cfg.n_replicates)]
        header = ["replicate", "t", "particle"] + x_names + y_names
        for r, run in enumerate(runs):
            for t, xc, yc in zip(grid.checkpoint_times, run.x_clouds,
                                 run.y_clouds):
                for p in range(cfg.n_particles):
                    cloud_rows.append((r, float(t), p,
                                       *xc.atoms[p], *yc.atoms[p]))
        moments = np.mean([run.moments for run in runs], axis=0)
        moment_header = ["t", "m2_x", "m4_x", "m2_y", "m4_y"]
        moment_rows = [tuple(row) for row in moments]
    else:
        source = (BbarSource.ANALYTIC if cfg.source == "analytic"
                  else BbarSource.ERGODIC_ESTIMATE)
        econf = (None if cfg.source == "analytic"
                 else ErgodicConfig(h_frozen=cfg.h_frozen,
                                    n_samples=cfg.n_samples))
        runs = [simulate_averaged(model, grid, cfg.n_particles, replicate=r,
                                  seed=cfg.seed, x0=cfg.x0, source=source,
                                  ergodic_config=econf)
                for r in range(cfg.n_replicates)]
        header = ["replicate", "t", "particle"] + x_names
        for r, run in enumerate(runs):
            for t, xc in zip(grid.checkpoint_times, run.clouds):
                for p in range(cfg.n_particles):
                    cloud_rows.append((r, float(t), p, *xc.atoms[p]))
        moments = np.mean([run.moments for run in runs], axis=0)
        moment_header = ["t", "m2_x", "m4_x"]
        moment_rows = [tuple(row) for row in moments]
    write_csv(_outpath(cfg, "clouds.csv"), header, cloud_rows)
    write_csv(_outpath(cfg, "moments.csv"), moment_header, moment_rows)
    write_metadata(_outpath(cfg, "simulate_metadata.json"), cfg, {
        "kind": cfg.kind,
        "n_steps": grid.n_steps,
        "h": grid.h,
        "n_checkpoints_recorded": len(grid.checkpoint_indices),
        "outputs": ["clouds.csv", "moments.csv"],
    })
    print(f"simulate: {cfg.kind} run, {cfg.n_replicates} replicate(s) x "
          f"{cfg.n_particles} particles, {grid.n_steps} steps; "
          f"wrote clouds.csv, moments.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe


def run_probe(cfg: RunConfig, model: CoefficientSet) -> int:
    report = probe_assumptions(model, n_probes=cfg.n_probes, seed=cfg.seed)
    claim = model.beta
    ok = (not report.violated) and report.beta_empirical >= claim - 1e-9
    print(f"model: {model.label}")
    print(f"{'quantity':<22}{'value':>14}    claim")
    print(f"{'beta_empirical':<22}{report.beta_empirical:>14.6g}    "
          f">= {claim:g} [{'ok' if ok else 'VIOLATED'}]")
    print(f"{'growth_constant':<22}{report.growth_constant:>14.6g}    finite")
    print(f"{'lipschitz_constant':<22}{report.lipschitz_constant:>14.6g}"
          "    finite")
    print(f"{'violated':<22}{str(report.violated):>14}")
    if report.violated:
        print(f"offending probe: {report.offending}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry


def _add_common(p):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--model", dest="model_name",
                   choices=["linear", "convolution"])
    p.add_argument("--kernel", choices=["sin", "tanh"],
                   help="kernel pair for the convolution model")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir",
                   help=f"output directory (default ${OUTDIR_ENV} or '.')")
    p.add_argument("--horizon", type=float)
    p.add_argument("--particles", dest="n_particles", type=int)
    p.add_argument("--replicates", dest="n_replicates", type=int)
    p.add_argument("--checkpoints", dest="n_checkpoints", type=int)
    p.add_argument("--h", dest="h_override", type=float,
                   help="override the stability-rule step")
    p.add_argument("--workers", type=int)
    p.add_argument("--x0", type=float)
    p.add_argument("--y0", type=float)


def build_parser() -> _Parser:
    parser = _Parser(prog="twoscale",
                     description="Two-scale particle harness front-end")
    parser.add_argument("--version", action="version",
                        version=f"twoscale {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True,
                                 metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = subs.add_parser("converge", help="strong-error curve and rate fit")
    _add_common(p)
    p.add_argument("--epsilon-grid", dest="epsilon_grid",
                   help="comma/space list; tokens like 2^-4 are accepted")
    p.add_argument("--source", choices=["analytic", "ergodic"])
    p.add_argument("--h-frozen", dest="h_frozen", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)

    p = subs.add_parser("diagnostics", help="moment/regularity/mixing sweeps")
    _add_common(p)
    p.add_argument("--epsilon-grid", dest="epsilon_grid")
    p.add_argument("--epsilon", type=_parse_epsilon_token,
                   help="reference scale separation; 2^-k tokens accepted")
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--s-max", dest="s_max", type=float)
    p.add_argument("--y-start", dest="y_start", type=float)
    p.add_argument("--h-frozen", dest="h_frozen", type=float)

    p = subs.add_parser("ergodicity", help="frozen-dynamics decay curve")
    _add_common(p)
    p.add_argument("--s-max", dest="s_max", type=float)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--y-start", dest="y_start", type=float)
    p.add_argument("--h-frozen", dest="h_frozen", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--n-points", dest="n_points", type=int)

    p = subs.add_parser("poisson", help="corrector estimates and residual")
    _add_common(p)
    p.add_argument("--s-max", dest="s_max", type=float)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--h-frozen", dest="h_frozen", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--fd-step", dest="fd_step", type=float)

    p = subs.add_parser("simulate", help="one checkpointed ensemble run")
    _add_common(p)
    p.add_argument("--epsilon", type=_parse_epsilon_token)
    p.add_argument("--kind", choices=["slowfast", "averaged"])
    p.add_argument("--source", choices=["analytic", "ergodic"])
    p.add_argument("--h-frozen", dest="h_frozen", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)

    p = subs.add_parser("probe", help="structural probe table for a model")
    _add_common(p)
    p.add_argument("--probes", dest="n_probes", type=int)
    return parser


_RUNNERS = {
    "converge": run_converge,
    "diagnostics": run_diagnostics,
    "ergodicity": run_ergodicity,
    "poisson": run_poisson,
    "simulate": run_simulate,
    "probe": run_probe,
}


def _fail(code, kind, message, **extra):
    record = {"error": kind, "message": message}
    record.update(extra)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        model = validate(cfg)
        os.makedirs(cfg.out_dir, exist_ok=True)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", "invalid configuration",
                     problems=exc.problems)
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    try:
        return _RUNNERS[cfg.subcommand](cfg, model)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", "invalid configuration",
                     problems=exc.problems)
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (SolverError, ExperimentError, PoissonError, ModelError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", str(exc))


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
