"""Monte Carlo corrector estimation and generator-residual verification.

The corrector of the averaging problem solves, argument by argument, the
equation -L2 Phi = b - bbar, where L2 is the generator of the frozen fast
dynamics acting in y.  It has the probabilistic representation

    Phi(t, x, mu, y) = integral over s in [0, inf) of
                       E[ b(t, x, mu, Y_s^y) ] - bbar(t, x, mu)

with the integrand decaying like e^{-beta s / 2}, so truncating at s_max
costs at most (2/beta) e^{-beta s_max / 2} times the integrand envelope.
``estimate_phi`` computes the truncated integral by trapezoid over frozen
trajectories and records that tail bound instead of extrapolating.

``residual_check`` closes the loop: it applies L2 to a closed-form corrector
by central finite differences and measures |L2 Phi + b - bbar| at probe
points.  It is restricted to analytic correctors; second differences of a
Monte Carlo estimate would amplify its noise by 1/fd_step^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .models import CoefficientSet
from .noise import NoiseStream, Role
from .solvers import SolverError, _frozen_core, _frozen_stability_check, _point_args

__all__ = [
    "PoissonError",
    "PhiEstimate",
    "estimate_phi",
    "residual_check",
]


class PoissonError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhiEstimate:
    """Truncated-integral Monte Carlo estimate of the corrector at one point.

    ``tail_bound`` is the recorded truncation envelope
    (2/beta) * e^{-beta s_max / 2} * (1 + |x| + |y| + second_moment^{1/2});
    ``tail_warning`` is set when that bound exceeds the requested tolerance.
    """

    value: np.ndarray
    standard_error: np.ndarray
    s_max: float
    n_traj: int
    tail_bound: float
    tail_warning: bool

    def __post_init__(self):
        if not np.all(np.isfinite(self.standard_error)):
            raise PoissonError("corrector standard error is not finite")


def estimate_phi(model: CoefficientSet, t: float, x, mu, y, s_max: float,
                 h_frozen: float, n_traj: int, seed: int, bbar=None,
                 tol: float = 1e-3, channel: int = 0) -> PhiEstimate:
    """Estimate the corrector at (t, x, mu, y) from frozen trajectories.

    Averages over ``n_traj`` trajectories started at y the trapezoid-rule
    time integral of b(t, x, mu, Y_s) - bbar over [0, s_max].  ``bbar`` is
    the averaged drift at (t, x, mu) and must be supplied by the caller
    (closed form or a separate ergodic estimate whose error is small against
    the target tolerance).  The truncation horizon must satisfy
    s_max >= (2/beta) ln(1/tol); the recorded tail bound can still exceed
    tol through the size of the probe point, which sets ``tail_warning``.
    """
    if bbar is None:
        raise PoissonError(
            "missing bbar: estimate_phi needs the averaged drift at "
            "(t, x, mu); pass model.analytic_bbar(...) or an ergodic estimate")
    if not (tol > 0.0):
        raise PoissonError(f"tol must be positive, got {tol}")
    beta = model.beta
    s_floor = (2.0 / beta) * math.log(1.0 / tol)
    if s_max < s_floor * (1.0 - 1e-12):
        raise PoissonError(
            f"s_max = {s_max} is below the truncation floor "
            f"(2/beta)*ln(1/tol) = {s_floor:.6g} for tol = {tol}")
    _frozen_stability_check(beta, h_frozen)
    ratio = s_max / h_frozen
    n_steps = int(round(ratio))
    if n_steps < 1 or abs(ratio - n_steps) > 1e-9 * max(1.0, ratio):
        raise PoissonError(
            f"s_max = {s_max} is not a positive multiple of h_frozen = {h_frozen}")
    n_traj = int(n_traj)
    if n_traj < 2:
        raise PoissonError(f"n_traj must be >= 2, got {n_traj}")

    bbar_v = np.asarray(bbar, dtype=float).reshape(model.n)
    xa, y_init = _point_args(model, x, y, n_traj)
    stream = NoiseStream(seed=seed, role=Role.FROZEN)
    acc = np.zeros((n_traj, model.n))

    def accumulate(k, Y):
        w = h_frozen if 0 < k < n_steps else 0.5 * h_frozen
        bv = model.b(t, xa, mu, Y)[0]        # (n_traj, n)
        acc[...] += (bv - bbar_v) * w

    _frozen_core(model, t, xa, mu, y_init, h_frozen, n_steps, stream, channel,
                 observer=accumulate, observe_at=range(n_steps + 1))

    value = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / math.sqrt(n_traj)
    # per-trajectory integrals of an identically-zero integrand are exactly
    # zero; keep that exactness (y-free drift with exact bbar)
    if np.all(acc == 0.0):
        value = np.zeros(model.n)
        se = np.zeros(model.n)
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    envelope = (1.0 + float(np.linalg.norm(np.asarray(x, dtype=float)))
                + float(np.linalg.norm(y_arr))
                + math.sqrt(float(np.max(mu.second_moment))))
    tail = (2.0 / beta) * math.exp(-0.5 * beta * s_max) * envelope
    return PhiEstimate(value=value, standard_error=se, s_max=float(s_max),
                       n_traj=n_traj, tail_bound=tail,
                       tail_warning=bool(tail > tol))


def _gradient_and_hessian(fn: Callable, t, x, mu, y, fd_step):
    """Central-difference first and second y-derivatives of a vector field.

    fn(t, x, mu, y) maps a (1, m) state to (1, n).  Returns (grad (m, n),
    hess (m, m, n)).
    """
    m = y.shape[-1]
    base = np.asarray(fn(t, x, mu, y), dtype=float).reshape(-1)
    n = base.shape[0]
    grad = np.empty((m, n))
    hess = np.empty((m, m, n))

    def at(offsets):
        yp = y.copy()
        for i, d in offsets:
            yp[..., i] = yp[..., i] + d
        return np.asarray(fn(t, x, mu, yp), dtype=float).reshape(-1)

    for i in range(m):
        up = at([(i, fd_step)])
        dn = at([(i, -fd_step)])
        grad[i] = (up - dn) / (2.0 * fd_step)
        hess[i, i] = (up - 2.0 * base + dn) / fd_step**2
    for i in range(m):
        for j in range(i + 1, m):
            pp = at([(i, fd_step), (j, fd_step)])
            pm = at([(i, fd_step), (j, -fd_step)])
            mp = at([(i, -fd_step), (j, fd_step)])
            mm = at([(i, -fd_step), (j, -fd_step)])
            hess[i, j] = hess[j, i] = (pp - pm - mp + mm) / (4.0 * fd_step**2)
    return grad, hess


def residual_check(model: CoefficientSet, points, fd_step: float,
                   phi_source: Optional[Callable] = None) -> float:
    """Max generator residual |L2 Phi + b - bbar| over probe points.

    ``points`` is an iterable of (t, x, mu, y); ``phi_source`` defaults to
    the model's closed-form corrector and must be an analytic function of y
    (finite differences of a Monte Carlo estimate are dominated by its
    noise).  L2 Phi = <f, grad_y Phi> + 0.5 Tr[g g* hess_y Phi], computed by
    central differences componentwise.
    """
    if not (fd_step > 0.0):
        raise PoissonError(f"fd_step must be positive, got {fd_step}")
    phi = phi_source if phi_source is not None else model.analytic_phi
    if phi is None:
        raise PoissonError(
            f"model {model.label!r} has no closed-form corrector and no "
            "phi_source was given")
    if model.analytic_bbar is None:
        raise PoissonError(
            f"model {model.label!r} has no analytic averaged drift to "
            "balance the residual against")
    worst = 0.0
    for t, x, mu, y in points:
        xa = np.asarray(x, dtype=float).reshape(1, model.n)
        ya = np.asarray(y, dtype=float).reshape(1, model.m)
        grad, hess = _gradient_and_hessian(phi, t, xa, mu, ya, fd_step)
        fv = np.asarray(model.f(t, xa, mu, ya), dtype=float).reshape(model.m)
        gv = np.broadcast_to(
            np.asarray(model.g(t, xa, mu, ya), dtype=float),
            (1, model.m, model.d2))[0]
        gg = gv @ gv.T                                   # (m, m)
        l2phi = fv @ grad + 0.5 * np.einsum("ij,ijk->k", gg, hess)
        bv = np.asarray(model.b(t, xa, mu, ya), dtype=float).reshape(model.n)
        bbarv = np.asarray(model.analytic_bbar(t, xa, mu),
                           dtype=float).reshape(model.n)
        worst = max(worst, float(np.max(np.abs(l2phi + bv - bbarv))))
    return worst
