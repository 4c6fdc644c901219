"""Euler solvers for the two-scale particle system, its averaged limit, and
the frozen fast dynamics.

All simulations run on a single fine grid.  The fast component is stiff with
time scale epsilon, so the step obeys h <= 0.5 * epsilon / beta; running the
slow and the averaged equations on the same grid makes their discretization
errors cancel under synchronous coupling instead of polluting the scale-
separation measurement.

Noise discipline: a two-scale run and an averaged run at the same
(seed, replicate) consume the *same* slow-noise keys (replicate, particle,
component, step), which realizes the synchronous coupling that the strong
error sup_t E|X - Xbar|^2 is defined through.  Frozen-dynamics helpers draw
from the frozen role with the replicate id as channel, so they can never
collide with ensemble noise and replicates stay independent.

Two API layers coexist:

* live ensembles (:class:`SlowFastEnsemble`, :class:`AveragedEnsemble`)
  advanced in place by :func:`step_slowfast` / :func:`step_averaged`, for
  step-level inspection and tests with injected increments;
* ``simulate_*`` drivers returning immutable checkpointed run records,
  batched internally over replicates.

Both layers share the same update kernels, and batched state arrays
(M, N, dim) execute the same elementwise operations and reduction axes as
single-replicate (N, dim) arrays, so the tests can pin their equality bit
for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measures import ParticleCloud
from .models import CoefficientSet
from .noise import NoiseStream, Role

__all__ = [
    "SolverError",
    "TimeGrid",
    "BbarSource",
    "ErgodicConfig",
    "SlowFastEnsemble",
    "AveragedEnsemble",
    "SlowFastRun",
    "AveragedRun",
    "AuxiliaryRun",
    "BbarEstimate",
    "DecayCurve",
    "step_slowfast",
    "step_averaged",
    "simulate_slowfast",
    "simulate_averaged",
    "simulate_auxiliary",
    "simulate_frozen",
    "sample_invariant",
    "estimate_bbar",
    "ergodic_decay",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform fine grid on [0, horizon] with checkpoint nodes.

    ``horizon / h`` must be an integer number of steps.  Checkpoints are a
    subset of grid nodes (about ``n_checkpoints`` of them, always including
    both endpoints); statistics are recorded there, while the dynamics
    advance with the fine step everywhere.
    """

    horizon: float
    h: float
    n_checkpoints: int = 64

    def __post_init__(self):
        if not (self.horizon > 0.0) or not math.isfinite(self.horizon):
            raise SolverError(f"horizon must be positive, got {self.horizon}")
        if not (self.h > 0.0):
            raise SolverError(f"step h must be positive, got {self.h}")
        ratio = self.horizon / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise SolverError(
                f"horizon/h = {ratio} is not an integer; choose h dividing the horizon")
        if self.n_checkpoints < 1:
            raise SolverError(f"n_checkpoints must be >= 1, got {self.n_checkpoints}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.h))

    @property
    def checkpoint_indices(self) -> np.ndarray:
        k = min(self.n_checkpoints, self.n_steps)
        return np.unique(np.round(np.linspace(0, self.n_steps, k + 1)).astype(int))

    @property
    def checkpoint_times(self) -> np.ndarray:
        return self.checkpoint_indices * self.h

    def block_steps(self, delta: float) -> int:
        """Number of fine steps in one freeze block of length delta."""
        ratio = delta / self.h
        k = int(round(ratio))
        if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
            raise SolverError(
                f"delta = {delta} is not a positive multiple of h = {self.h}")
        return k


class BbarSource(enum.Enum):
    """Where the averaged equation takes its drift from."""

    ANALYTIC = "analytic"
    ERGODIC_ESTIMATE = "ergodic-estimate"


def _resolve_frozen_schedule(beta: float, h_frozen, burn_in, thin, n_samples):
    """Turn (burn_in, thin, n_samples) into step counts on the frozen grid.

    The burn-in floor (10/beta)*ln(10) shrinks the initial condition by
    1e-10 in squared distance under contraction at rate beta; shorter
    burn-ins are refused rather than silently biased.  ``thin = inf`` is
    legal for a single sample.
    """
    h = 0.1 / beta if h_frozen is None else float(h_frozen)
    _frozen_stability_check(beta, h)
    floor = (10.0 / beta) * math.log(10.0)
    burn = floor if burn_in is None else float(burn_in)
    if burn < floor * (1.0 - 1e-12):
        raise SolverError(
            f"burn_in = {burn} is below the mixing floor (10/beta)*ln(10) "
            f"= {floor:.6g} for beta = {beta}")
    n_samples = int(n_samples)
    if n_samples < 1:
        raise SolverError(f"n_samples must be >= 1, got {n_samples}")
    thin_t = 5.0 / beta if thin is None else float(thin)
    if math.isinf(thin_t):
        if n_samples != 1:
            raise SolverError(
                "thin = inf leaves room for exactly one sample; set n_samples = 1")
        thin_steps = 1
    else:
        if not (thin_t > 0.0):
            raise SolverError(f"thin must be positive, got {thin_t}")
        thin_steps = max(1, int(math.ceil(thin_t / h - 1e-9)))
    burn_steps = max(1, int(math.ceil(burn / h - 1e-9)))
    return h, burn_steps, thin_steps, n_samples


@dataclass(frozen=True)
class ErgodicConfig:
    """Knobs for frozen-dynamics sampling of the invariant law.

    ``None`` fields get mixing-time defaults derived from beta at the point
    of use: step 0.1/beta, burn-in (10/beta)*ln(10), thinning 5/beta time
    units (several mixing times, leaving sample correlation below one
    percent).  ``n_batches`` controls the batch-means standard error.
    """

    h_frozen: Optional[float] = None
    burn_in: Optional[float] = None
    thin: Optional[float] = None
    n_samples: int = 256
    n_batches: int = 16

    def resolved(self, beta: float):
        if self.n_samples < 2:
            raise SolverError(
                f"n_samples must be >= 2 for error estimation, got {self.n_samples}")
        if self.n_batches < 2:
            raise SolverError(f"n_batches must be >= 2, got {self.n_batches}")
        h, burn_steps, thin_steps, n_samples = _resolve_frozen_schedule(
            beta, self.h_frozen, self.burn_in, self.thin, self.n_samples)
        return h, burn_steps, thin_steps


class _EnsembleView:
    """Empirical-measure view of a state array of shape (..., N, n).

    Exposes the measure interface (atoms, mean, second_moment, integrate)
    with statistics broadcastable against the state array, which is what the
    coefficient call convention expects.
    """

    __slots__ = ("atoms",)

    def __init__(self, atoms: np.ndarray):
        self.atoms = atoms

    @property
    def mean(self) -> np.ndarray:
        return self.atoms.mean(axis=-2, keepdims=True)

    @property
    def second_moment(self) -> np.ndarray:
        r2 = np.sum(self.atoms**2, axis=-1, keepdims=True)
        return r2.mean(axis=-2, keepdims=True)

    def integrate(self, fn):
        return np.mean(fn(self.atoms), axis=-2)


def _diffusion_term(sig, dW):
    return np.einsum("...ij,...j->...i", np.asarray(sig, dtype=float), dW)


def _is_zero_matrix(sig) -> bool:
    arr = np.asarray(sig)
    return arr.size > 0 and not np.any(arr)


def _apply_slow(x, drift, sig, dW1, h):
    return x + drift * h + _diffusion_term(sig, dW1)


def _apply_fast(y, fv, gv, dW2, h, epsilon):
    return y + fv * (h / epsilon) + _diffusion_term(gv, dW2) / math.sqrt(epsilon)


def _check_finite(name: str, state: np.ndarray, t: float):
    if not np.all(np.isfinite(state)):
        idx = tuple(int(v) for v in np.argwhere(~np.isfinite(state))[0])
        particle = idx[-2] if len(idx) >= 2 else idx[0]
        raise SolverError(
            f"{name} became non-finite at particle {particle}, t = {t:.6g} "
            f"(full index {idx}); the step size or the model is unstable")


def _stability_check(h: float, epsilon: float, beta: float):
    bound = 0.5 * epsilon / beta
    if h > bound * (1.0 + 1e-12):
        raise SolverError(
            f"step h = {h} violates the fast stability bound "
            f"h <= 0.5*epsilon/beta = {bound:.6g} (epsilon={epsilon}, beta={beta})")


def _frozen_stability_check(beta: float, h_frozen: float):
    bound = 0.5 / beta
    if not (h_frozen > 0.0) or h_frozen > bound * (1.0 + 1e-12):
        raise SolverError(
            f"frozen step h = {h_frozen} violates the stability bound "
            f"h <= 0.5/beta = {bound:.6g} (beta={beta})")


def _broadcast_state(value, batch_shape, n_particles, dim, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise SolverError(
            f"{name} must be a scalar or a ({dim},) vector, got shape {arr.shape}")
    return np.broadcast_to(arr, batch_shape + (n_particles, dim)).copy()


# ---------------------------------------------------------------------------
# Live ensembles and single-step operations


class SlowFastEnsemble:
    """Live N-particle state of the coupled two-scale system.

    Holds the paired slow/fast states (row i of Y belongs to row i of X),
    the clock, and the role-separated noise streams derived from the seed.
    Advanced in place by :func:`step_slowfast`.
    """

    def __init__(self, model: CoefficientSet, epsilon: float, n_particles: int,
                 replicate: int, seed: int, x0=1.0, y0=1.0):
        if not (0.0 < float(epsilon) < 1.0):
            raise SolverError(f"epsilon must lie in (0, 1), got {epsilon}")
        if int(n_particles) < 1:
            raise SolverError(f"n_particles must be >= 1, got {n_particles}")
        self.model = model
        self.epsilon = float(epsilon)
        self.n_particles = int(n_particles)
        self.replicate = int(replicate)
        self.seed = int(seed)
        self.stream_slow = NoiseStream(seed=self.seed, role=Role.SLOW)
        self.stream_fast = NoiseStream(seed=self.seed, role=Role.FAST)
        self.x_state = _broadcast_state(x0, (), self.n_particles, model.n, "x0")
        self.y_state = _broadcast_state(y0, (), self.n_particles, model.m, "y0")
        self.t = 0.0
        self.step_index = 0

    @property
    def X(self) -> ParticleCloud:
        return ParticleCloud(self.x_state)

    @property
    def Y(self) -> ParticleCloud:
        return ParticleCloud(self.y_state)


def step_slowfast(ens: SlowFastEnsemble, h: float, dW1=None, dW2=None):
    """Advance a live two-scale ensemble by one Euler step of size h.

    All particles see the pre-step empirical measure.  Increments default to
    the ensemble's streams at the current step counter; explicit dW1/dW2
    override the draw (the counter still advances, so a mixed sequence of
    injected and drawn steps keeps its alignment).  Returns the ensemble.
    """
    model = ens.model
    _stability_check(h, ens.epsilon, model.beta)
    x, y, t = ens.x_state, ens.y_state, ens.t
    mu = _EnsembleView(x)
    sig = model.sigma(t, x, mu)
    root_h = math.sqrt(h)
    if dW1 is None:
        if _is_zero_matrix(sig):
            dW1 = np.zeros((ens.n_particles, model.d1))
        else:
            dW1 = ens.stream_slow.normals(
                ens.replicate, ens.step_index, ens.n_particles, model.d1) * root_h
    if dW2 is None:
        dW2 = ens.stream_fast.normals(
            ens.replicate, ens.step_index, ens.n_particles, model.d2) * root_h
    x_new = _apply_slow(x, model.b(t, x, mu, y), sig, dW1, h)
    y_new = _apply_fast(y, model.f(t, x, mu, y), model.g(t, x, mu, y),
                        dW2, h, ens.epsilon)
    _check_finite("slow state", x_new, t + h)
    _check_finite("fast state", y_new, t + h)
    ens.x_state, ens.y_state = x_new, y_new
    ens.t = t + h
    ens.step_index += 1
    return ens


class _ErgodicDriftCache:
    """Per-replicate cache of ergodic averaged-drift estimates.

    Keys quantize (x, mean(mu)); misses are estimated in one batched frozen
    run at the quantized representative points.  Noise is addressed by the
    owning replicate's channel and a running probe counter, so values do not
    depend on scheduling and replicates stay independent.
    """

    def __init__(self, model, config: ErgodicConfig, stream: NoiseStream,
                 channel: int, quantum: float):
        if not (quantum > 0.0):
            raise SolverError(f"cache quantum must be positive, got {quantum}")
        self.model = model
        self.config = config
        self.stream = stream
        self.channel = int(channel)
        self.quantum = float(quantum)
        self.cache = {}
        self.next_probe = 0

    def _key(self, x_row, mean_row):
        qx = tuple(int(v) for v in np.round(x_row / self.quantum))
        qm = tuple(int(v) for v in np.round(mean_row / self.quantum))
        return qx, qm

    def drift(self, t: float, x_row: np.ndarray):
        """Drift values (N, n) for one replicate row, plus the mean SE norm."""
        N = x_row.shape[0]
        mu = ParticleCloud(x_row)
        mean_row = np.asarray(mu.mean, dtype=float).reshape(-1)
        keys = [self._key(x_row[i], mean_row) for i in range(N)]
        missing, seen = [], set()
        for key in keys:
            if key not in self.cache and key not in seen:
                seen.add(key)
                missing.append(key)
        if missing:
            probe_x = np.asarray([np.asarray(k[0], dtype=float) * self.quantum
                                  for k in missing])
            base = self.next_probe
            self.next_probe += len(missing)
            values, errors = _estimate_bbar_batch(
                self.model, t, probe_x, mu, self.config, self.stream,
                self.channel, particle_base=base)
            for j, key in enumerate(missing):
                self.cache[key] = (values[j], errors[j])
        out = np.empty((N, self.model.n))
        se_sum = 0.0
        for i, key in enumerate(keys):
            value, err = self.cache[key]
            out[i] = value
            se_sum += float(np.linalg.norm(err))
        return out, se_sum / N


class AveragedEnsemble:
    """Live N-particle state of the averaged equation.

    Consumes only slow-role noise, with the same keys as a
    :class:`SlowFastEnsemble` at matching (seed, replicate).  The drift
    comes from the model's closed form or from a per-replicate ergodic
    estimate cache.  Advanced in place by :func:`step_averaged`.
    """

    def __init__(self, model: CoefficientSet, n_particles: int, replicate: int,
                 seed: int, x0=1.0, source: BbarSource = BbarSource.ANALYTIC,
                 ergodic_config: Optional[ErgodicConfig] = None,
                 quantum: float = 1e-3):
        if int(n_particles) < 1:
            raise SolverError(f"n_particles must be >= 1, got {n_particles}")
        self.model = model
        self.n_particles = int(n_particles)
        self.replicate = int(replicate)
        self.seed = int(seed)
        self.source = source
        self.stream_slow = NoiseStream(seed=self.seed, role=Role.SLOW)
        if source is BbarSource.ANALYTIC:
            if model.analytic_bbar is None:
                raise SolverError(
                    f"model {model.label!r} has no analytic averaged drift; "
                    "use the ergodic-estimate source")
            self.drift_cache = None
        elif source is BbarSource.ERGODIC_ESTIMATE:
            cfg = ergodic_config if ergodic_config is not None else ErgodicConfig()
            cfg.resolved(model.beta)
            self.drift_cache = _ErgodicDriftCache(
                model, cfg, NoiseStream(seed=self.seed, role=Role.FROZEN),
                channel=self.replicate, quantum=quantum)
        else:
            raise SolverError(f"unknown drift source {source!r}")
        self.x_state = _broadcast_state(x0, (), self.n_particles, model.n, "x0")
        self.t = 0.0
        self.step_index = 0
        self.last_drift_se = 0.0


def step_averaged(ens: AveragedEnsemble, h: float, dW1=None, n_substeps: int = 1):
    """Advance a live averaged ensemble by one drift step of size h.

    With ``n_substeps`` > 1 the single drift step consumes that many fine
    slow-noise increments (each of size h / n_substeps), summed in step
    order, so coupling with a fine-grid two-scale run survives coarser
    drift stepping.  Explicit dW1 overrides the draw; the step counter
    advances by n_substeps either way.
    """
    model = ens.model
    if n_substeps < 1:
        raise SolverError(f"n_substeps must be >= 1, got {n_substeps}")
    x, t = ens.x_state, ens.t
    mu = _EnsembleView(x)
    if ens.source is BbarSource.ANALYTIC:
        drift = model.analytic_bbar(t, x, mu)
    else:
        drift, ens.last_drift_se = ens.drift_cache.drift(t, x)
    sig = model.sigma(t, x, mu)
    if dW1 is None:
        if _is_zero_matrix(sig):
            dW1 = np.zeros((ens.n_particles, model.d1))
        else:
            root_fine = math.sqrt(h / n_substeps)
            dW1 = ens.stream_slow.normals(
                ens.replicate, ens.step_index, ens.n_particles, model.d1) * root_fine
            for j in range(1, n_substeps):
                dW1 = dW1 + ens.stream_slow.normals(
                    ens.replicate, ens.step_index + j, ens.n_particles,
                    model.d1) * root_fine
    x_new = _apply_slow(x, drift, sig, dW1, h)
    _check_finite("averaged state", x_new, t + h)
    ens.x_state = x_new
    ens.t = t + h
    ens.step_index += n_substeps
    return ens


# ---------------------------------------------------------------------------
# Checkpointed run records


@dataclass(frozen=True)
class SlowFastRun:
    """Checkpointed output of one two-scale ensemble simulation."""

    label: str
    epsilon: float
    grid: TimeGrid
    replicate: int
    n_particles: int
    seed: int
    x_clouds: tuple
    y_clouds: tuple
    moments: np.ndarray       # (K, 5): t, m2_x, m4_x, m2_y, m4_y
    x_path: Optional[np.ndarray] = field(default=None, repr=False)
    y_path: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class AveragedRun:
    """Checkpointed output of one averaged-equation ensemble simulation."""

    label: str
    grid: TimeGrid
    replicate: int
    n_particles: int
    seed: int
    source: BbarSource
    clouds: tuple
    moments: np.ndarray       # (K, 3): t, m2, m4
    drift_se_track: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AuxiliaryRun:
    """Block-frozen auxiliary pair rebuilt along a stored two-scale run."""

    delta: float
    checkpoint_times: np.ndarray
    xhat_clouds: tuple
    yhat_clouds: tuple
    y_gap: np.ndarray         # mean |Y - Yhat|^2 per checkpoint
    x_gap: np.ndarray         # mean |X - Xhat|^2 per checkpoint


@dataclass(frozen=True)
class BbarEstimate:
    """Ergodic time-average estimate of the averaged drift at one point."""

    value: np.ndarray
    standard_error: np.ndarray
    n_samples: int
    n_batches: int


@dataclass(frozen=True)
class DecayCurve:
    """|E b(Y_s) - bbar| against s for the frozen fast semigroup."""

    s: np.ndarray
    deviation: np.ndarray
    mc_floor: np.ndarray      # standard error of the Monte Carlo mean at each s
    n_traj: int


# ---------------------------------------------------------------------------
# Batched drivers


def _slowfast_core(model, epsilon, grid, n_particles, replicates, stream_slow,
                   stream_fast, x0, y0, store_full=False):
    """Batched two-scale Euler driver.

    Returns (X_ck, Y_ck, moments, x_path, y_path); the leading axis of each
    runs over ``replicates`` in order, the second over checkpoints.
    """
    if not (0.0 < float(epsilon) < 1.0):
        raise SolverError(f"epsilon must lie in (0, 1), got {epsilon}")
    _stability_check(grid.h, epsilon, model.beta)
    reps = [int(r) for r in replicates]
    M, N = len(reps), int(n_particles)
    if N < 1:
        raise SolverError(f"n_particles must be >= 1, got {n_particles}")
    X = _broadcast_state(x0, (M,), N, model.n, "x0")
    Y = _broadcast_state(y0, (M,), N, model.m, "y0")
    cps = grid.checkpoint_indices
    cp_slot = {int(k): i for i, k in enumerate(cps)}
    X_ck = np.empty((M, len(cps), N, model.n))
    Y_ck = np.empty((M, len(cps), N, model.m))
    moments = np.empty((M, len(cps), 5))
    x_path = np.empty((M, grid.n_steps + 1, N, model.n)) if store_full else None
    y_path = np.empty((M, grid.n_steps + 1, N, model.m)) if store_full else None

    root_h = math.sqrt(grid.h)
    for k in range(grid.n_steps + 1):
        t = k * grid.h
        slot = cp_slot.get(k)
        if slot is not None:
            X_ck[:, slot] = X
            Y_ck[:, slot] = Y
            r2x = np.sum(X**2, axis=-1)
            r2y = np.sum(Y**2, axis=-1)
            moments[:, slot, 0] = t
            moments[:, slot, 1] = np.mean(r2x, axis=-1)
            moments[:, slot, 2] = np.mean(r2x**2, axis=-1)
            moments[:, slot, 3] = np.mean(r2y, axis=-1)
            moments[:, slot, 4] = np.mean(r2y**2, axis=-1)
        if store_full:
            x_path[:, k] = X
            y_path[:, k] = Y
        if k == grid.n_steps:
            break
        mu = _EnsembleView(X)
        sig = model.sigma(t, X, mu)
        if _is_zero_matrix(sig):
            dW1 = np.zeros((M, N, model.d1))
        else:
            dW1 = stream_slow.normals_batch(reps, k, N, model.d1) * root_h
        dW2 = stream_fast.normals_batch(reps, k, N, model.d2) * root_h
        X_new = _apply_slow(X, model.b(t, X, mu, Y), sig, dW1, grid.h)
        Y_new = _apply_fast(Y, model.f(t, X, mu, Y), model.g(t, X, mu, Y),
                            dW2, grid.h, epsilon)
        _check_finite("slow state", X_new, t + grid.h)
        _check_finite("fast state", Y_new, t + grid.h)
        X, Y = X_new, Y_new
    return X_ck, Y_ck, moments, x_path, y_path


def simulate_slowfast(model: CoefficientSet, epsilon: float, grid: TimeGrid,
                      n_particles: int, replicate: int, seed: int,
                      x0=1.0, y0=1.0, store_full: bool = False) -> SlowFastRun:
    """Simulate one N-particle two-scale ensemble from a deterministic
    initial point broadcast to all particles, recording clouds and moment
    rows (t, m2_x, m4_x, m2_y, m4_y) at every checkpoint.

    ``store_full=True`` additionally keeps the whole fine-grid path, which
    the auxiliary construction and time-regularity diagnostics require.
    """
    stream_slow = NoiseStream(seed=seed, role=Role.SLOW)
    stream_fast = NoiseStream(seed=seed, role=Role.FAST)
    X_ck, Y_ck, moments, x_path, y_path = _slowfast_core(
        model, epsilon, grid, n_particles, [replicate], stream_slow,
        stream_fast, x0, y0, store_full)
    return SlowFastRun(
        label=model.label, epsilon=float(epsilon), grid=grid,
        replicate=int(replicate), n_particles=int(n_particles), seed=int(seed),
        x_clouds=tuple(ParticleCloud(c) for c in X_ck[0]),
        y_clouds=tuple(ParticleCloud(c) for c in Y_ck[0]),
        moments=moments[0],
        x_path=None if x_path is None else x_path[0],
        y_path=None if y_path is None else y_path[0])


def _averaged_core(model, grid, n_particles, replicates, stream_slow, x0,
                   source, ergodic_config, seed, quantum, step_multiple=1):
    """Batched averaged-equation driver, noise-coupled to _slowfast_core.

    With ``step_multiple`` > 1 the drift advances on the coarse grid
    ``step_multiple * h`` while consuming the summed fine slow-noise
    increments of each window, so the coupling with a fine-grid two-scale
    run stays exact.
    """
    reps = [int(r) for r in replicates]
    M, N = len(reps), int(n_particles)
    if N < 1:
        raise SolverError(f"n_particles must be >= 1, got {n_particles}")
    mult = int(step_multiple)
    if mult < 1 or grid.n_steps % mult != 0:
        raise SolverError(
            f"step_multiple = {step_multiple} must be a positive divisor "
            f"of n_steps = {grid.n_steps}")
    X = _broadcast_state(x0, (M,), N, model.n, "x0")
    cps = [int(k) for k in grid.checkpoint_indices]
    off_grid = [k for k in cps if k % mult != 0]
    if off_grid:
        raise SolverError(
            f"checkpoints {off_grid} do not fall on the coarse grid "
            f"(step_multiple = {mult}); lower step_multiple")
    cp_slot = {k: i for i, k in enumerate(cps)}
    X_ck = np.empty((M, len(cps), N, model.n))
    moments = np.empty((M, len(cps), 3))

    if source is BbarSource.ANALYTIC:
        if model.analytic_bbar is None:
            raise SolverError(
                f"model {model.label!r} has no analytic averaged drift; "
                "use the ergodic-estimate source")
        caches = None
        se_track = None
    elif source is BbarSource.ERGODIC_ESTIMATE:
        cfg = ergodic_config if ergodic_config is not None else ErgodicConfig()
        cfg.resolved(model.beta)
        caches = [_ErgodicDriftCache(
            model, cfg, NoiseStream(seed=seed, role=Role.FROZEN),
            channel=rep, quantum=quantum) for rep in reps]
        se_track = np.zeros((M, grid.n_steps // mult))
    else:
        raise SolverError(f"unknown drift source {source!r}")

    root_fine = math.sqrt(grid.h)
    for k in range(0, grid.n_steps + 1, mult):
        t = k * grid.h
        slot = cp_slot.get(k)
        if slot is not None:
            X_ck[:, slot] = X
            r2 = np.sum(X**2, axis=-1)
            moments[:, slot, 0] = t
            moments[:, slot, 1] = np.mean(r2, axis=-1)
            moments[:, slot, 2] = np.mean(r2**2, axis=-1)
        if k == grid.n_steps:
            break
        mu = _EnsembleView(X)
        if source is BbarSource.ANALYTIC:
            drift = model.analytic_bbar(t, X, mu)
        else:
            drift = np.empty((M, N, model.n))
            for r in range(M):
                drift[r], se = caches[r].drift(t, X[r])
                se_track[r, k // mult] = se
        sig = model.sigma(t, X, mu)
        if _is_zero_matrix(sig):
            dW1 = np.zeros((M, N, model.d1))
        else:
            dW1 = stream_slow.normals_batch(reps, k, N, model.d1) * root_fine
            for j in range(k + 1, k + mult):
                dW1 = dW1 + stream_slow.normals_batch(reps, j, N, model.d1) * root_fine
        X = _apply_slow(X, drift, sig, dW1, grid.h * mult)
        _check_finite("averaged state", X, t + grid.h * mult)
    return X_ck, moments, se_track


def simulate_averaged(model: CoefficientSet, grid: TimeGrid, n_particles: int,
                      replicate: int, seed: int, x0=1.0,
                      source: BbarSource = BbarSource.ANALYTIC,
                      ergodic_config: Optional[ErgodicConfig] = None,
                      quantum: float = 1e-3,
                      step_multiple: int = 1) -> AveragedRun:
    """Simulate the averaged equation, noise-coupled to simulate_slowfast.

    At the same (seed, replicate) this consumes exactly the slow-noise keys
    of a two-scale run on the same grid, which is what makes their pathwise
    comparison meaningful.  The drift comes from the model's closed form or
    from cached ergodic estimates (cache keyed on (x, mean(mu)) quantized to
    ``quantum``; the drift standard error per step is recorded).
    """
    stream_slow = NoiseStream(seed=seed, role=Role.SLOW)
    X_ck, moments, se_track = _averaged_core(
        model, grid, n_particles, [replicate], stream_slow, x0, source,
        ergodic_config, seed, quantum, step_multiple)
    return AveragedRun(
        label=model.label, grid=grid, replicate=int(replicate),
        n_particles=int(n_particles), seed=int(seed), source=source,
        clouds=tuple(ParticleCloud(c) for c in X_ck[0]),
        moments=moments[0],
        drift_se_track=None if se_track is None else se_track[0])


def simulate_auxiliary(model: CoefficientSet, delta: float,
                       run: SlowFastRun) -> AuxiliaryRun:
    """Rebuild the block-frozen auxiliary pair along a stored two-scale run.

    The auxiliary fast process re-consumes the run's fast-noise increments
    while its coefficient arguments stay frozen at the latest block boundary
    (block length delta, a multiple of the grid step); the auxiliary slow
    process integrates the frozen drift against the current auxiliary fast
    state plus the true diffusion term along the stored slow path.  Requires
    the run to carry its full fine path (store_full=True); checkpoint-only
    runs are rejected rather than silently interpolated.
    """
    if run.x_path is None or run.y_path is None:
        raise SolverError(
            "auxiliary construction needs the full fine-grid path; "
            "re-run simulate_slowfast with store_full=True")
    grid = run.grid
    block = grid.block_steps(delta)
    eps = run.epsilon
    stream_slow = NoiseStream(seed=run.seed, role=Role.SLOW)
    stream_fast = NoiseStream(seed=run.seed, role=Role.FAST)
    N = run.n_particles
    Xh = run.x_path[0].copy()
    Yh = run.y_path[0].copy()
    cps = grid.checkpoint_indices
    cp_slot = {int(k): i for i, k in enumerate(cps)}
    xhat_clouds = [None] * len(cps)
    yhat_clouds = [None] * len(cps)
    y_gap = np.empty(len(cps))
    x_gap = np.empty(len(cps))
    root_h = math.sqrt(grid.h)
    for k in range(grid.n_steps + 1):
        slot = cp_slot.get(k)
        if slot is not None:
            xhat_clouds[slot] = ParticleCloud(Xh)
            yhat_clouds[slot] = ParticleCloud(Yh)
            x_gap[slot] = float(np.mean(np.sum((run.x_path[k] - Xh) ** 2, axis=-1)))
            y_gap[slot] = float(np.mean(np.sum((run.y_path[k] - Yh) ** 2, axis=-1)))
        if k == grid.n_steps:
            break
        t = k * grid.h
        kb = (k // block) * block
        tb = kb * grid.h
        Xb = run.x_path[kb]
        mub = _EnsembleView(Xb)
        X_now = run.x_path[k]
        mu_now = _EnsembleView(X_now)

        sig = model.sigma(t, X_now, mu_now)
        if _is_zero_matrix(sig):
            dW1 = np.zeros((N, model.d1))
        else:
            dW1 = stream_slow.normals(run.replicate, k, N, model.d1) * root_h
        dW2 = stream_fast.normals(run.replicate, k, N, model.d2) * root_h
        Xh_new = _apply_slow(Xh, model.b(tb, Xb, mub, Yh), sig, dW1, grid.h)
        Yh_new = _apply_fast(Yh, model.f(tb, Xb, mub, Yh),
                             model.g(tb, Xb, mub, Yh), dW2, grid.h, eps)
        _check_finite("auxiliary slow state", Xh_new, t + grid.h)
        _check_finite("auxiliary fast state", Yh_new, t + grid.h)
        Xh, Yh = Xh_new, Yh_new
    return AuxiliaryRun(delta=float(delta),
                        checkpoint_times=grid.checkpoint_times,
                        xhat_clouds=tuple(xhat_clouds),
                        yhat_clouds=tuple(yhat_clouds),
                        y_gap=y_gap, x_gap=x_gap)


# ---------------------------------------------------------------------------
# Frozen fast dynamics


def _frozen_core(model, t, x, mu, y_init, h, n_steps, stream, channel,
                 particle_base=0, observer: Optional[Callable] = None,
                 observe_at=None):
    """Euler driver for the frozen fast dynamics at fixed (t, x, mu).

    ``x`` has shape (P, 1, n) against states (P, S, m): P probe points with
    S trajectories each.  The noise particle index of trajectory (p, s) is
    ``particle_base + p * S + s``, so disjoint bases give disjoint keys.
    ``observer(k, Y)`` is called at every step index in ``observe_at``.
    Returns the final state.
    """
    P, S, m = y_init.shape
    Y = y_init.copy()
    watch = set(int(v) for v in observe_at) if observe_at is not None else set()
    if observer is not None and 0 in watch:
        observer(0, Y)
    root_h = math.sqrt(h)
    for k in range(n_steps):
        fv = model.f(t, x, mu, Y)
        gv = model.g(t, x, mu, Y)
        z = stream.normals(channel, k, P * S, model.d2,
                           particle_offset=particle_base)
        dW = z.reshape(P, S, model.d2) * root_h
        Y = Y + fv * h + _diffusion_term(gv, dW)
        _check_finite("frozen state", Y, (k + 1) * h)
        if observer is not None and (k + 1) in watch:
            observer(k + 1, Y)
    return Y


def _point_args(model, x, y0, n_traj):
    x = np.asarray(x, dtype=float).reshape(1, 1, model.n)
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 0:
        y0 = np.full(model.m, float(y0))
    y_init = np.broadcast_to(y0.reshape(1, 1, model.m),
                             (1, int(n_traj), model.m)).copy()
    return x, y_init


def simulate_frozen(model: CoefficientSet, t: float, x, mu, y0,
                    s_horizon: float, h_frozen: float, seed: int,
                    channel: int = 0, n_traj: int = 1) -> np.ndarray:
    """Simulate the frozen fast dynamics at fixed (t, x, mu).

    Returns the full path over [0, s_horizon], shape (n_steps + 1, n_traj,
    m).  The step must satisfy h <= 0.5/beta; with the slow arguments frozen
    there is no epsilon in the problem any more.
    """
    _frozen_stability_check(model.beta, h_frozen)
    ratio = s_horizon / h_frozen
    n_steps = int(round(ratio))
    if n_steps < 1 or abs(ratio - n_steps) > 1e-9 * max(1.0, ratio):
        raise SolverError(
            f"s_horizon = {s_horizon} is not a positive multiple of "
            f"h_frozen = {h_frozen}")
    stream = NoiseStream(seed=seed, role=Role.FROZEN)
    xa, y_init = _point_args(model, x, y0, n_traj)
    path = np.empty((n_steps + 1, int(n_traj), model.m))

    def keep(k, Y):
        path[k] = Y[0]

    _frozen_core(model, t, xa, mu, y_init, h_frozen, n_steps, stream,
                 channel, observer=keep, observe_at=range(n_steps + 1))
    return path


def _sample_invariant_batch(model, t, x_points, mu, h, burn_steps, thin_steps,
                            n_samples, stream, channel, particle_base=0):
    """Thinned single-trajectory invariant samples at P probe points.

    Returns (P, n_samples, m).  Each probe point runs one trajectory whose
    noise particle index is particle_base + point index; starting at the
    zero state is arbitrary and forgotten by the burn-in.
    """
    P = x_points.shape[0]
    x = x_points.reshape(P, 1, model.n)
    y_init = np.zeros((P, 1, model.m))
    record = [burn_steps + i * thin_steps for i in range(n_samples)]
    out = np.empty((P, n_samples, model.m))

    def keep(k, Y):
        out[:, (k - burn_steps) // thin_steps, :] = Y[:, 0, :]

    _frozen_core(model, t, x, mu, y_init, h, record[-1], stream, channel,
                 particle_base=particle_base, observer=keep, observe_at=record)
    return out


def sample_invariant(model: CoefficientSet, t: float, x, mu, seed: int,
                     burn_in: Optional[float] = None, n_samples: int = 256,
                     thin: Optional[float] = None,
                     h_frozen: Optional[float] = None,
                     channel: int = 0) -> ParticleCloud:
    """Draw a thinned single-trajectory sample of the frozen invariant law.

    Burn-in discards the transient (must be at least the (10/beta)*ln(10)
    mixing floor, the default); thinning spaces retained states, 5/beta time
    units by default, ``inf`` for a single sample.  Returns the samples as a
    cloud of n_samples points in R^m.
    """
    h, burn_steps, thin_steps, n_samples = _resolve_frozen_schedule(
        model.beta, h_frozen, burn_in, thin, n_samples)
    stream = NoiseStream(seed=seed, role=Role.FROZEN)
    samples = _sample_invariant_batch(
        model, t, np.asarray(x, dtype=float).reshape(1, model.n), mu, h,
        burn_steps, thin_steps, n_samples, stream, channel)
    return ParticleCloud(samples[0])


def _estimate_bbar_batch(model, t, x_points, mu, config, stream, channel,
                         particle_base=0):
    """Vectorized averaged-drift estimates at P probe points.

    Returns (values (P, n), standard errors (P, n)); errors come from batch
    means, which stay honest under residual sample correlation.
    """
    h, burn_steps, thin_steps = config.resolved(model.beta)
    samples = _sample_invariant_batch(
        model, t, x_points, mu, h, burn_steps, thin_steps, config.n_samples,
        stream, channel, particle_base)
    P, S, _ = samples.shape
    x = x_points.reshape(P, 1, model.n)
    bv = np.broadcast_to(np.asarray(model.b(t, x, mu, samples), dtype=float),
                         (P, S, model.n))
    value = bv.mean(axis=1)
    n_batches = min(config.n_batches, S // 2) if S >= 4 else 2
    usable = (S // n_batches) * n_batches
    batches = bv[:, :usable, :].reshape(P, n_batches, usable // n_batches, model.n)
    batch_means = batches.mean(axis=2)
    se = batch_means.std(axis=1, ddof=1) / math.sqrt(n_batches)
    # a component of b that does not vary over the samples has that constant
    # as its exact average; summation rounding must not blur this, because a
    # y-free drift is promised back unchanged with zero error
    const = np.ptp(bv, axis=1) == 0.0
    value = np.where(const, bv[:, 0, :], value)
    se = np.where(const, 0.0, se)
    return value, se


def estimate_bbar(model: CoefficientSet, t: float, x, mu, seed: int,
                  config: ErgodicConfig = ErgodicConfig(),
                  channel: int = 0) -> BbarEstimate:
    """Ergodic estimate of the averaged drift at one (t, x, mu).

    Averages the slow drift over thinned invariant-law samples from one long
    frozen trajectory, with a batch-means standard error.
    """
    stream = NoiseStream(seed=seed, role=Role.FROZEN)
    value, se = _estimate_bbar_batch(
        model, t, np.asarray(x, dtype=float).reshape(1, model.n), mu, config,
        stream, channel)
    return BbarEstimate(value=value[0], standard_error=se[0],
                        n_samples=int(config.n_samples),
                        n_batches=int(config.n_batches))


def ergodic_decay(model: CoefficientSet, t: float, x, mu, y0, s_max: float,
                  n_traj: int, seed: int, channel: int = 0,
                  h_frozen: Optional[float] = None,
                  n_points: int = 50) -> DecayCurve:
    """Trace |E b(t,x,mu,Y_s) - bbar(t,x,mu)| along the frozen semigroup.

    Starts all trajectories at y0 and records the deviation of the Monte
    Carlo mean drift from the model's closed-form averaged drift at about
    ``n_points`` equally spaced times, together with the Monte Carlo
    standard error at each time (the floor below which decay cannot be
    observed).
    """
    if model.analytic_bbar is None:
        raise SolverError(
            f"model {model.label!r} has no analytic averaged drift to decay "
            "toward; ergodic_decay needs a closed-form target")
    h = 0.1 / model.beta if h_frozen is None else float(h_frozen)
    _frozen_stability_check(model.beta, h)
    if int(n_traj) < 2:
        raise SolverError(f"n_traj must be >= 2, got {n_traj}")
    n_steps = int(math.ceil(s_max / h - 1e-9))
    if n_steps < 1:
        raise SolverError(f"s_max = {s_max} is below one frozen step h = {h}")
    stream = NoiseStream(seed=seed, role=Role.FROZEN)
    xa, y_init = _point_args(model, x, y0, n_traj)
    record = np.unique(np.round(np.linspace(0, n_steps, n_points)).astype(int))
    target = model.analytic_bbar(t, xa.reshape(1, model.n), mu).reshape(model.n)
    dev = np.empty(len(record))
    floor = np.empty(len(record))
    slots = {int(k): i for i, k in enumerate(record)}

    def watch(k, Y):
        i = slots[k]
        bv = model.b(t, xa, mu, Y)[0]        # (S, n)
        dev[i] = float(np.linalg.norm(bv.mean(axis=0) - target))
        floor[i] = float(np.linalg.norm(bv.std(axis=0, ddof=1))) / math.sqrt(Y.shape[1])

    _frozen_core(model, t, xa, mu, y_init, h, n_steps, stream, channel,
                 observer=watch, observe_at=record)
    return DecayCurve(s=record * h, deviation=dev, mc_floor=floor,
                      n_traj=int(n_traj))
