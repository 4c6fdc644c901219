"""Strong-error measurement, rate fitting, and diagnostic sweeps.

The central quantity is the worst checkpoint value of the mean squared
deviation between a two-scale ensemble and its averaged counterpart driven
by the identical slow noise.  Everything else here is scaffolding around
that number: running it over a grid of scale separations, fitting the
log-log slope with a bootstrap interval, and the side experiments that
check the moment, time-regularity, block-freezing and mixing behavior the
convergence argument leans on.

Replicates are the unit of both parallelism and error estimation.  A
replicate's deviation row depends only on (seed, replicate index, model,
grid), never on which batch it was computed in, so a run split across
workers reassembles to the same bits.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .models import CoefficientSet, probe_assumptions
from .solvers import (BbarSource, DecayCurve, ErgodicConfig, TimeGrid,
                      _averaged_core, _slowfast_core, ergodic_decay,
                      simulate_auxiliary, simulate_slowfast)
from .noise import NoiseStream, Role
from .measures import ParticleCloud


class ExperimentError(RuntimeError):
    """Raised for invalid experiment configuration or degenerate data."""


def stable_step(epsilon: float, beta: float, horizon: float) -> float:
    """Largest step meeting h <= 0.5*epsilon/beta that divides the horizon.

    Returns horizon / ceil(2*beta*horizon/epsilon), so the fine grid always
    has an integer number of steps and the two-scale stability margin holds
    with equality or better.
    """
    if not (0.0 < float(epsilon) < 1.0):
        raise ExperimentError(f"epsilon must lie in (0, 1), got {epsilon}")
    n_steps = int(math.ceil(2.0 * beta * horizon / epsilon - 1e-12))
    return horizon / max(n_steps, 1)


H_RULE = "h = horizon / ceil(2*beta*horizon/epsilon)"


class RateFit(NamedTuple):
    slope: float
    intercept: float
    slope_ci: tuple


@dataclass(frozen=True)
class ConvergenceReport:
    """Strong-error curve over a scale-separation grid plus its rate fit.

    errors[i] is the worst-checkpoint mean squared deviation at
    epsilon_grid[i]; replicate_errors[i] holds the per-replicate values at
    the worst checkpoint, which is what the bootstrap resamples.
    """

    label: str
    epsilon_grid: tuple
    errors: np.ndarray
    standard_errors: np.ndarray
    replicate_errors: np.ndarray        # (n_eps, n_replicates)
    slope: float
    intercept: float
    slope_ci: tuple
    n_particles: int
    n_replicates: int
    horizon: float
    h_rule: str
    n_checkpoints: int
    seed: int
    source: str

    def __post_init__(self):
        eps = np.asarray(self.epsilon_grid, dtype=float)
        if eps.ndim != 1 or len(eps) < 2:
            raise ExperimentError(
                f"epsilon_grid needs at least 2 points, got {len(eps)}")
        if np.any(eps <= 0.0) or np.any(eps >= 1.0):
            raise ExperimentError("epsilon_grid must lie inside (0, 1)")
        if np.any(np.diff(eps) >= 0.0):
            raise ExperimentError("epsilon_grid must be strictly decreasing")
        if np.any(np.asarray(self.errors) <= 0.0):
            raise ExperimentError(
                "errors must be positive; a zero deviation means the "
                "two-scale and averaged runs coincide and there is no "
                "rate to fit")
        if not math.isfinite(self.slope):
            raise ExperimentError(f"fitted slope is not finite: {self.slope}")


def deviation_matrix(model: CoefficientSet, epsilon: float, grid: TimeGrid,
                     n_particles: int, replicates: Sequence[int], seed: int,
                     source: BbarSource = BbarSource.ANALYTIC,
                     ergodic_config: Optional[ErgodicConfig] = None,
                     quantum: float = 1e-3, x0=1.0, y0=1.0) -> np.ndarray:
    """Per-replicate, per-checkpoint mean squared deviation |X - Xbar|^2.

    Runs the two-scale system and the averaged equation on the same grid
    with the same slow-noise keys (synchronous coupling) and returns the
    (len(replicates), n_checkpoints) matrix of particle-averaged squared
    gaps.  Rows depend only on the replicate index, so disjoint batches
    concatenate to the same matrix.
    """
    reps = [int(r) for r in replicates]
    stream_slow = NoiseStream(seed=seed, role=Role.SLOW)
    stream_fast = NoiseStream(seed=seed, role=Role.FAST)
    X_ck, _, _, _, _ = _slowfast_core(
        model, epsilon, grid, n_particles, reps, stream_slow, stream_fast,
        x0, y0)
    Xbar_ck, _, _ = _averaged_core(
        model, grid, n_particles, reps, NoiseStream(seed=seed, role=Role.SLOW),
        x0, source, ergodic_config, seed, quantum)
    return np.sum((X_ck - Xbar_ck) ** 2, axis=-1).mean(axis=-1)


def strong_error(model: CoefficientSet, epsilon: float, grid: TimeGrid,
                 n_particles: int, n_replicates: int, seed: int,
                 source: BbarSource = BbarSource.ANALYTIC,
                 ergodic_config: Optional[ErgodicConfig] = None,
                 x0=1.0, y0=1.0):
    """Worst-checkpoint strong error sup_t mean |X^eps_t - Xbar_t|^2.

    Returns (error, standard_error) where the error averages
    ``n_replicates`` coupled replicate pairs and the standard error is the
    replicate spread at the checkpoint attaining the sup.
    """
    dev, k_star = _strong_error_detail(
        model, epsilon, grid, n_particles, n_replicates, seed, source,
        ergodic_config, x0, y0)
    at_star = dev[:, k_star]
    error = float(at_star.mean())
    se = float(at_star.std(ddof=1) / math.sqrt(len(at_star)))
    return error, se


def _strong_error_detail(model, epsilon, grid, n_particles, n_replicates,
                         seed, source, ergodic_config, x0, y0):
    if int(n_replicates) < 2:
        raise ExperimentError(
            f"n_replicates must be >= 2 for a standard error, "
            f"got {n_replicates}")
    dev = deviation_matrix(model, epsilon, grid, n_particles,
                           range(int(n_replicates)), seed, source,
                           ergodic_config, x0=x0, y0=y0)
    k_star = int(np.argmax(dev.mean(axis=0)))
    return dev, k_star


def rate_fit(epsilon_grid, errors, standard_errors=None,
             replicate_errors=None, n_boot: int = 1000,
             seed: int = 0) -> RateFit:
    """Weighted least-squares slope of log(error) against log(epsilon).

    Weights come from the delta-method variance of the log errors.  The
    95% interval bootstraps replicate-level values when
    ``replicate_errors`` (one array of per-replicate errors per grid
    point) is given, falls back to a Gaussian parametric bootstrap on the
    standard errors, and degenerates to the point estimate for exact data.
    """
    eps = np.asarray(epsilon_grid, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.ndim != 1 or len(eps) < 3:
        raise ExperimentError(
            f"rate_fit needs at least 3 grid points, got {len(eps)}")
    if err.shape != eps.shape:
        raise ExperimentError(
            f"errors shape {err.shape} does not match grid {eps.shape}")
    if np.any(err <= 0.0):
        raise ExperimentError(
            "cannot take log of a nonpositive error; all errors must be > 0")
    lx = np.log(eps)
    ly = np.log(err)
    if standard_errors is None:
        rel = np.zeros_like(err)
    else:
        se = np.asarray(standard_errors, dtype=float)
        if se.shape != eps.shape:
            raise ExperimentError(
                f"standard_errors shape {se.shape} does not match grid")
        if np.any(se < 0.0) or not np.all(np.isfinite(se)):
            raise ExperimentError("standard errors must be finite and >= 0")
        rel = se / err
    w = 1.0 / np.maximum(rel, 1e-12)          # polyfit wants 1/sigma
    slope, intercept = np.polyfit(lx, ly, 1, w=w)

    rng = np.random.default_rng(seed)
    boot = []
    if replicate_errors is not None:
        groups = [np.asarray(g, dtype=float) for g in replicate_errors]
        if len(groups) != len(eps):
            raise ExperimentError(
                "replicate_errors must supply one group per grid point")
        for _ in range(int(n_boot)):
            means = np.array([
                g[rng.integers(0, len(g), size=len(g))].mean()
                for g in groups])
            if np.any(means <= 0.0):
                continue
            boot.append(np.polyfit(lx, np.log(means), 1, w=w)[0])
    elif np.any(rel > 0.0):
        noise = rng.standard_normal((int(n_boot), len(eps))) * rel
        for row in ly + noise:
            boot.append(np.polyfit(lx, row, 1, w=w)[0])
    if boot:
        lo, hi = np.percentile(boot, [2.5, 97.5])
    else:
        lo = hi = slope
    return RateFit(float(slope), float(intercept), (float(lo), float(hi)))


def study_from_matrices(label: str, epsilon_grid, matrices,
                        n_particles: int, n_replicates: int, horizon: float,
                        n_checkpoints: int, seed: int, source: str,
                        n_boot: int = 1000) -> ConvergenceReport:
    """Assemble a ConvergenceReport from precomputed deviation matrices.

    ``matrices[i]`` is the (n_replicates, n_checkpoints) output of
    deviation_matrix at epsilon_grid[i]; rows may have been computed by
    different workers, and the assembly here is the single authoritative
    reduction, so the report does not depend on how the rows were split.
    """
    eps = [float(e) for e in epsilon_grid]
    errors, ses, groups = [], [], []
    for dev in matrices:
        dev = np.asarray(dev, dtype=float)
        k_star = int(np.argmax(dev.mean(axis=0)))
        at_star = dev[:, k_star]
        errors.append(float(at_star.mean()))
        ses.append(float(at_star.std(ddof=1) / math.sqrt(len(at_star))))
        groups.append(at_star)
    fit = rate_fit(eps, errors, ses, replicate_errors=groups,
                   n_boot=n_boot, seed=seed)
    return ConvergenceReport(
        label=label, epsilon_grid=tuple(eps),
        errors=np.asarray(errors), standard_errors=np.asarray(ses),
        replicate_errors=np.asarray(groups),
        slope=fit.slope, intercept=fit.intercept, slope_ci=fit.slope_ci,
        n_particles=int(n_particles), n_replicates=int(n_replicates),
        horizon=float(horizon), h_rule=H_RULE,
        n_checkpoints=int(n_checkpoints), seed=int(seed), source=source)


def convergence_study(model: CoefficientSet, epsilon_grid,
                      horizon: float = 1.0, n_particles: int = 2000,
                      n_replicates: int = 32, seed: int = 0,
                      n_checkpoints: int = 64,
                      source: BbarSource = BbarSource.ANALYTIC,
                      ergodic_config: Optional[ErgodicConfig] = None,
                      x0=1.0, y0=1.0, n_boot: int = 1000) -> ConvergenceReport:
    """Run strong_error over a decreasing scale grid and fit the rate."""
    if int(n_replicates) < 2:
        raise ExperimentError(
            f"n_replicates must be >= 2 for a standard error, "
            f"got {n_replicates}")
    eps = sorted((float(e) for e in epsilon_grid), reverse=True)
    if len(eps) != len(set(eps)):
        raise ExperimentError("epsilon_grid contains repeated values")
    matrices = []
    for e in eps:
        grid = TimeGrid(horizon, stable_step(e, model.beta, horizon),
                        n_checkpoints)
        matrices.append(deviation_matrix(
            model, e, grid, n_particles, range(int(n_replicates)), seed,
            source, ergodic_config, x0=x0, y0=y0))
    return study_from_matrices(
        model.label, eps, matrices, n_particles, n_replicates, horizon,
        n_checkpoints, seed, source.name, n_boot)


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Knobs for the diagnostic sweeps; defaults are desk-scale."""

    epsilon_grid: tuple = (2.0**-4, 2.0**-5, 2.0**-6)
    epsilon_ref: float = 2.0**-8
    horizon: float = 1.0
    n_particles: int = 256
    n_replicates: int = 4
    seed: int = 0
    n_checkpoints: int = 64
    holder_lags: tuple = (1, 2, 4, 8, 16)
    # the default block lengths sit well above the fast relaxation time
    # epsilon_ref/(beta/2) and bracket epsilon_ref^{2/3}, where the
    # block-freezing gaps are in their settled scaling regime
    delta_multiples: tuple = (32, 64, 128, 256)
    decay_y0: float = 10.0
    decay_n_traj: int = 10000
    decay_s_max: Optional[float] = None      # default 20/beta = 10/(beta/2)
    decay_h: Optional[float] = None
    x0: float = 1.0
    y0: float = 1.0


@dataclass(frozen=True)
class DiagnosticsReport:
    """Output of diagnostics_suite; arrays are aligned with the config grids."""

    label: str
    moment_table: np.ndarray        # rows (epsilon, sup_t m4_x, sup_t m4_y)
    holder_times: np.ndarray
    holder_msd: np.ndarray
    holder_slope: float
    delta_grid: np.ndarray
    y_gap_sup: np.ndarray
    x_gap_sup: np.ndarray
    delta_slope_y: float
    delta_slope_x: float
    delta_star: float               # grid point nearest epsilon_ref^{2/3}
    y_gap_at_star: float
    x_gap_at_star: float
    decay: DecayCurve = field(repr=False)
    decay_rate: float = float("nan")
    decay_drop: float = float("nan")
    config: DiagnosticsConfig = DiagnosticsConfig()


def _loglog_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


def diagnostics_suite(model: CoefficientSet,
                      config: DiagnosticsConfig = DiagnosticsConfig()
                      ) -> DiagnosticsReport:
    """Moment table, time-regularity slope, block-freezing sweep, mixing fit.

    Four independent checks of the structural estimates behind the
    averaging rate: fourth moments stay bounded uniformly over the scale
    grid, slow increments scale linearly in the time lag, the block-frozen
    auxiliary pair deviates linearly in the block length delta (measured
    around delta = epsilon^{2/3}), and the frozen dynamics mix toward the
    averaged drift at least at a fixed fraction of beta/2.
    """
    probe = probe_assumptions(model, seed=config.seed)
    if probe.violated:
        raise ExperimentError(
            f"model {model.label!r} fails its structural probe: "
            f"{probe.offending}")

    # (i) fourth moments across the scale grid
    rows = []
    for e in sorted(config.epsilon_grid, reverse=True):
        grid = TimeGrid(config.horizon,
                        stable_step(e, model.beta, config.horizon),
                        config.n_checkpoints)
        _, _, moments, _, _ = _slowfast_core(
            model, e, grid, config.n_particles,
            range(config.n_replicates),
            NoiseStream(seed=config.seed, role=Role.SLOW),
            NoiseStream(seed=config.seed, role=Role.FAST),
            config.x0, config.y0)
        mean_rows = moments.mean(axis=0)               # (K, 5)
        rows.append((e, float(mean_rows[:, 2].max()),
                     float(mean_rows[:, 4].max())))
    moment_table = np.asarray(rows)
    if not np.all(np.isfinite(moment_table)):
        raise ExperimentError("fourth-moment table contains non-finite values")

    # (ii) + (iii) share one full-path reference run
    e_ref = float(config.epsilon_ref)
    grid_ref = TimeGrid(config.horizon,
                        stable_step(e_ref, model.beta, config.horizon),
                        config.n_checkpoints)
    run = simulate_slowfast(model, e_ref, grid_ref, config.n_particles,
                            replicate=0, seed=config.seed, x0=config.x0,
                            y0=config.y0, store_full=True)
    path = run.x_path                                   # (n_steps+1, N, n)
    lags = [int(l) for l in config.holder_lags]
    if min(lags) < 1 or max(lags) >= grid_ref.n_steps:
        raise ExperimentError(
            f"holder_lags must lie in [1, {grid_ref.n_steps - 1}]")
    msd = [float(np.mean(np.sum((path[l:] - path[:-l]) ** 2, axis=-1)))
           for l in lags]
    holder_times = np.asarray(lags, dtype=float) * grid_ref.h
    holder_slope = _loglog_slope(holder_times, msd)

    deltas, y_sup, x_sup = [], [], []
    for mult in config.delta_multiples:
        delta = int(mult) * grid_ref.h
        aux = simulate_auxiliary(model, delta, run)
        deltas.append(delta)
        y_sup.append(float(aux.y_gap.max()))
        x_sup.append(float(aux.x_gap.max()))
    deltas = np.asarray(deltas)
    y_sup = np.asarray(y_sup)
    x_sup = np.asarray(x_sup)
    if np.any(y_sup <= 0.0) or np.any(x_sup <= 0.0):
        raise ExperimentError(
            "auxiliary gaps vanished; delta sweep cannot be fit in log-log")
    i_star = int(np.argmin(np.abs(deltas - e_ref ** (2.0 / 3.0))))

    # (iv) mixing of the frozen dynamics toward the averaged drift
    s_max = (20.0 / model.beta if config.decay_s_max is None
             else float(config.decay_s_max))
    mu0 = ParticleCloud(np.full((2, model.n), float(config.x0)))
    decay = ergodic_decay(model, 0.0, config.x0, mu0, config.decay_y0,
                          s_max=s_max, n_traj=config.decay_n_traj,
                          seed=config.seed, h_frozen=config.decay_h)
    clear = decay.deviation > 10.0 * decay.mc_floor
    if clear.sum() < 3:
        raise ExperimentError(
            "ergodic decay curve has too few points above the Monte Carlo "
            "floor; raise decay_n_traj or decay_y0")
    rate = -float(np.polyfit(decay.s[clear],
                             np.log(decay.deviation[clear]), 1)[0])
    drop = float(decay.deviation[0] / decay.deviation[-1])

    return DiagnosticsReport(
        label=model.label, moment_table=moment_table,
        holder_times=holder_times, holder_msd=np.asarray(msd),
        holder_slope=holder_slope,
        delta_grid=deltas, y_gap_sup=y_sup, x_gap_sup=x_sup,
        delta_slope_y=_loglog_slope(deltas, y_sup),
        delta_slope_x=_loglog_slope(deltas, x_sup),
        delta_star=float(deltas[i_star]),
        y_gap_at_star=float(y_sup[i_star]),
        x_gap_at_star=float(x_sup[i_star]),
        decay=decay, decay_rate=rate, decay_drop=drop, config=config)
