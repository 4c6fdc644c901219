"""Coefficient sets for slow-fast distribution-dependent SDE systems.

A model is the tuple of coefficient functions for the pair

    dX = b(t, X, mu, Y) dt + sigma(t, X, mu) dW1
    dY = (1/eps) f(t, X, mu, Y) dt + (1/sqrt(eps)) g(t, X, mu, Y) dW2

where mu is the law of the slow component, approximated everywhere in this
package by the empirical measure of a particle cloud.  The fast drift must be
dissipative: there is a beta > 0 with

    2 <f(t,x,mu,y1) - f(t,x,mu,y2), y1 - y2> + 3 ||g(..y1) - g(..y2)||_F^2
        <= -beta |y1 - y2|^2

for all arguments, which gives the frozen fast process a unique invariant law
and exponential mixing at rate beta/2.  ``beta`` is declared by the model and
spot-checked empirically by :func:`probe_assumptions`.

Coefficient call convention (vectorized over particles; leading batch axes
are allowed and broadcast through):

    b(t, x, mu, y)   -> (..., N, n)     x: (..., N, n), y: (..., N, m)
    sigma(t, x, mu)  -> broadcastable to (..., N, n, d1)
    f(t, x, mu, y)   -> (..., N, m)
    g(t, x, mu, y)   -> broadcastable to (..., N, m, d2)

``mu`` exposes at least ``mean``, ``second_moment`` and ``atoms`` (see
measures.ParticleCloud); constant matrices may be returned as plain (rows,
cols) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .measures import ParticleCloud, w2_exact_smallN
from .noise import NoiseStream, Role

__all__ = [
    "ModelError",
    "CoefficientSet",
    "LinearBenchmarkParams",
    "linear_benchmark",
    "convolution_example",
    "AssumptionReport",
    "probe_assumptions",
]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """Validated bundle of coefficients and dimensions for one model.

    ``analytic_bbar(t, x, mu)`` and ``analytic_phi(t, x, mu, y)`` are
    optional closed forms of the averaged drift and of the centred first-
    order corrector; benchmark models provide them so estimators have an
    exact target, general models leave them None.
    """

    label: str
    n: int
    m: int
    d1: int
    d2: int
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    beta: float
    analytic_bbar: Optional[Callable] = None
    analytic_phi: Optional[Callable] = None

    def __post_init__(self):
        for name in ("n", "m", "d1", "d2"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ModelError(f"dimension {name} must be a positive int, got {v!r}")
        if not (float(self.beta) > 0.0):
            raise ModelError(f"beta must be positive, got {self.beta}")
        for name in ("b", "sigma", "f", "g"):
            if not callable(getattr(self, name)):
                raise ModelError(f"coefficient {name} must be callable")
        self._probe_shapes()

    def _probe_shapes(self):
        n_probe = 3
        x = np.zeros((n_probe, self.n))
        y = np.zeros((n_probe, self.m))
        mu = ParticleCloud(np.zeros((2, self.n)))
        checks = [
            ("b", self.b(0.0, x, mu, y), (n_probe, self.n)),
            ("sigma", self.sigma(0.0, x, mu), (n_probe, self.n, self.d1)),
            ("f", self.f(0.0, x, mu, y), (n_probe, self.m)),
            ("g", self.g(0.0, x, mu, y), (n_probe, self.m, self.d2)),
        ]
        if self.analytic_bbar is not None:
            checks.append(("analytic_bbar", self.analytic_bbar(0.0, x, mu),
                           (n_probe, self.n)))
        if self.analytic_phi is not None:
            checks.append(("analytic_phi", self.analytic_phi(0.0, x, mu, y),
                           (n_probe, self.n)))
        for name, out, want in checks:
            try:
                got = np.broadcast_shapes(np.shape(out), want)
            except ValueError:
                got = None
            if got != want:
                raise ModelError(
                    f"coefficient {name} returned shape {np.shape(out)}, "
                    f"not broadcastable to {want}")


@dataclass(frozen=True)
class LinearBenchmarkParams:
    """Scalar benchmark with every derived quantity in closed form.

    Slow drift a1*x + a2*E[mu] + a3*y with constant diffusion sigma_x; fast
    drift -kappa*(y - c1*x - c2*E[mu]) with constant diffusion sigma_y.  The
    frozen fast process is Ornstein-Uhlenbeck, so the invariant law, the
    averaged drift and the corrector are all explicit, and the dissipativity
    constant is exactly 2*kappa.
    """

    a1: float = -1.0
    a2: float = 0.5
    a3: float = 1.0
    c1: float = 0.5
    c2: float = 0.25
    kappa: float = 2.0
    sigma_x: float = 0.3
    sigma_y: float = 1.0


def linear_benchmark(params: LinearBenchmarkParams = LinearBenchmarkParams()) -> CoefficientSet:
    """Build the closed-form scalar benchmark model."""
    p = params
    if not (p.kappa > 0.0):
        raise ModelError(f"kappa must be positive, got {p.kappa}")
    if not (p.sigma_y > 0.0):
        raise ModelError(f"sigma_y must be positive, got {p.sigma_y}")
    if p.sigma_x < 0.0:
        raise ModelError(f"sigma_x must be nonnegative, got {p.sigma_x}")

    sig = np.array([[p.sigma_x]])
    gmat = np.array([[p.sigma_y]])

    def b(t, x, mu, y):
        return p.a1 * x + p.a2 * mu.mean + p.a3 * y

    def sigma(t, x, mu):
        return sig

    def f(t, x, mu, y):
        return -p.kappa * (y - p.c1 * x - p.c2 * mu.mean)

    def g(t, x, mu, y):
        return gmat

    def bbar(t, x, mu):
        return (p.a1 + p.a3 * p.c1) * x + (p.a2 + p.a3 * p.c2) * mu.mean

    def phi(t, x, mu, y):
        return (p.a3 / p.kappa) * (y - p.c1 * x - p.c2 * mu.mean)

    return CoefficientSet(
        label="linear-benchmark", n=1, m=1, d1=1, d2=1,
        b=b, sigma=sigma, f=f, g=g, beta=2.0 * p.kappa,
        analytic_bbar=bbar, analytic_phi=phi)


_CONVOLUTION_PAIRS = {
    # name -> (b0(x, y), f0(x, y)); both with bounded derivatives, and
    # f0(x, y1) - f0(x, y2) = -(y1 - y2) so the dissipativity constant is 2
    "sin": (lambda x, y: np.sin(x + y), lambda x, y: -y + np.sin(x)),
    "tanh": (lambda x, y: np.tanh(x + y), lambda x, y: -y + 0.5 * np.tanh(x)),
}


def convolution_example(choice: str = "sin") -> CoefficientSet:
    """Scalar model with convolution-in-measure interaction.

    Both drifts average a smooth kernel over the atoms of mu:
    b(t,x,mu,y) = integral of b0(x+z, y) mu(dz), same for f, with unit
    diffusions.  No closed-form averaged drift is attached; this model is
    what the ergodic estimation path is for.
    """
    if choice not in _CONVOLUTION_PAIRS:
        raise ModelError(
            f"unknown kernel pair {choice!r}; available: {sorted(_CONVOLUTION_PAIRS)}")
    b0, f0 = _CONVOLUTION_PAIRS[choice]
    eye = np.array([[1.0]])

    def conv(kernel, x, mu, y):
        z = np.expand_dims(mu.atoms, -3)        # (..., 1, Nmu, n)
        xx = np.expand_dims(x, -2)              # (..., N, 1, n)
        yy = np.expand_dims(y, -2)
        return np.mean(kernel(xx + z, yy), axis=-2)

    def b(t, x, mu, y):
        return conv(b0, x, mu, y)

    def sigma(t, x, mu):
        return eye

    def f(t, x, mu, y):
        return conv(f0, x, mu, y)

    def g(t, x, mu, y):
        return eye

    return CoefficientSet(
        label=f"convolution-{choice}", n=1, m=1, d1=1, d2=1,
        b=b, sigma=sigma, f=f, g=g, beta=2.0)


@dataclass(frozen=True)
class AssumptionReport:
    """Empirical constants from random probing of a coefficient set.

    beta_empirical is the worst (smallest) dissipativity constant seen;
    ``violated`` is set as soon as the dissipativity form has the wrong sign
    on any probe, with the offending arguments recorded.
    """

    beta_empirical: float
    growth_constant: float
    lipschitz_constant: float
    violated: bool
    offending: Optional[dict] = field(default=None)


def _frob(mat, like_shape):
    full = np.broadcast_to(np.asarray(mat, dtype=float), like_shape)
    return np.sqrt(np.sum(full**2, axis=(-2, -1)))


def probe_assumptions(model: CoefficientSet, n_probes: int = 200,
                      seed: int = 0) -> AssumptionReport:
    """Spot-check dissipativity, growth and Lipschitz bounds at random probes.

    Each probe draws t uniform on [0,1], standard normal x, y1, y2, and a
    two-point empirical measure.  All randomness comes from the probe noise
    role, so reports are reproducible from the seed alone.
    """
    if n_probes < 2:
        raise ModelError(f"n_probes must be >= 2, got {n_probes}")
    stream = NoiseStream(seed=seed, role=Role.PROBE)
    n, m = model.n, model.m

    beta_emp = np.inf
    growth = 0.0
    violated = False
    offending = None
    probes = []

    for i in range(n_probes):
        draw = stream.normals(replicate=0, step=i,
                              n_particles=3 * n + 2 * m + 1, n_components=1)[:, 0]
        t = float(ndtr(draw[0]))
        parts = np.split(draw[1:], [n, n + m, n + 2 * m, 3 * n + 2 * m])
        x = parts[0][None, :]
        y1 = parts[1][None, :]
        y2 = parts[2][None, :]
        mu = ParticleCloud(parts[3].reshape(2, n))

        f1 = model.f(t, x, mu, y1)
        f2 = model.f(t, x, mu, y2)
        g1 = np.broadcast_to(model.g(t, x, mu, y1), (1, m, model.d2))
        g2 = np.broadcast_to(model.g(t, x, mu, y2), (1, m, model.d2))
        dy = (y1 - y2)[0]
        gap2 = float(np.sum(dy**2))
        if gap2 > 1e-12:
            form = (2.0 * float(np.sum((f1 - f2)[0] * dy))
                    + 3.0 * float(np.sum((g1 - g2) ** 2)))
            q = -form / gap2
            if form > 0.0 and not violated:
                violated = True
                offending = {"t": t, "x": x[0].copy(), "y1": y1[0].copy(),
                             "y2": y2[0].copy(), "mu": mu.points.copy(),
                             "form": form}
            beta_emp = min(beta_emp, q)

        bv = model.b(t, x, mu, y1)
        sv = _frob(model.sigma(t, x, mu), (1, n, model.d1))
        envelope = 1.0 + np.linalg.norm(x) + np.linalg.norm(y1) \
            + np.sqrt(mu.second_moment)
        growth = max(growth, (float(np.linalg.norm(bv)) + float(sv[0])) / envelope)
        probes.append((t, x, mu, y1, bv, sv))

    lip = 0.0
    for (ta, xa, mua, ya, ba, sa), (tb, xb, mub, yb, bb, sb) in zip(
            probes[:-1], probes[1:]):
        gap = (abs(ta - tb) + np.linalg.norm(xa - xb) + np.linalg.norm(ya - yb)
               + w2_exact_smallN(mua, mub))
        if gap < 1e-9:
            continue
        fa = model.f(ta, xa, mua, ya)
        fb = model.f(tb, xb, mub, yb)
        ga = np.broadcast_to(model.g(ta, xa, mua, ya), (1, m, model.d2))
        gb = np.broadcast_to(model.g(tb, xb, mub, yb), (1, m, model.d2))
        num = (np.linalg.norm(ba - bb) + abs(float(sa[0]) - float(sb[0]))
               + np.linalg.norm(fa - fb) + np.sqrt(np.sum((ga - gb) ** 2)))
        lip = max(lip, float(num) / float(gap))

    return AssumptionReport(
        beta_empirical=float(beta_emp),
        growth_constant=float(growth),
        lipschitz_constant=float(lip),
        violated=violated,
        offending=offending)
