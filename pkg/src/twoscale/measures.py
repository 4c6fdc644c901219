"""Equal-weight particle clouds and Wasserstein-2 distances between them.

A cloud is the empirical measure (1/N) sum of point masses.  It is the only
measure representation the solvers need: the interaction term of the
distribution-dependent equations always sees the current ensemble through
this interface (mean, second moment, integration against test functions,
and direct access to the atoms for convolution-type coefficients).

Three W2 routes with different validity ranges:

  w2_1d          exact in one dimension via the sorted coupling
  w2_exact_smallN  exact in any dimension for small clouds via min-cost matching
  w2_sliced      Monte Carlo over random one-dimensional projections

The first two overlap in d=1, which the test suite exploits as a
cross-check; the sliced route degenerates to the sorted coupling in d=1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "MeasureError",
    "ParticleCloud",
    "w2_1d",
    "w2_exact_smallN",
    "w2_sliced",
]

EXACT_MATCHING_LIMIT = 12


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class ParticleCloud:
    """Empirical measure of N equally weighted points in R^d.

    ``points`` has shape (N, d).  The array is copied and frozen at
    construction; every entry must be finite.
    """

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise MeasureError(
                f"points must be an (N, d) array with N, d >= 1, got shape {np.shape(self.points)}")
        if not np.all(np.isfinite(pts)):
            bad = np.argwhere(~np.isfinite(pts))[0]
            raise MeasureError(
                f"non-finite coordinate at particle {bad[0]}, component {bad[1]}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_particles(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def atoms(self) -> np.ndarray:
        """Support points, shape (N, d); equal weights 1/N are implicit."""
        return self.points

    @property
    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def second_moment(self) -> float:
        """Integral of the squared Euclidean norm, mu(|.|^2)."""
        return float(np.mean(np.sum(self.points**2, axis=1)))

    def integrate(self, fn) -> np.ndarray:
        """Average fn over the atoms.

        ``fn`` maps the full (N, d) atom array to an array whose second-to-
        last axis runs over atoms; that axis is averaged away.  A plain
        per-atom scalar function should return shape (N, 1) or (N,).
        """
        values = np.asarray(fn(self.points), dtype=np.float64)
        if values.ndim <= 1:
            return np.mean(values)
        return np.mean(values, axis=-2)

    def to_csv(self, path) -> None:
        """One row per particle, header x0..x{d-1}, 17 significant digits."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j}" for j in range(self.dim)])
            for row in self.points:
                writer.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> "ParticleCloud":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or not all(h.startswith("x") for h in header):
                raise MeasureError(f"{path}: missing x0..x{{d-1}} header row")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise MeasureError(f"{path}: no particle rows")
        return cls(np.asarray(rows))


def _check_pair(a: ParticleCloud, b: ParticleCloud) -> None:
    if a.dim != b.dim:
        raise MeasureError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n_particles != b.n_particles:
        raise MeasureError(
            f"equal-weight W2 needs matching cloud sizes, got {a.n_particles} vs {b.n_particles}")


def w2_1d(a: ParticleCloud, b: ParticleCloud) -> float:
    """Exact W2 between one-dimensional clouds via the sorted coupling."""
    _check_pair(a, b)
    if a.dim != 1:
        raise MeasureError(f"w2_1d needs d=1 clouds, got d={a.dim}")
    sa = np.sort(a.points[:, 0])
    sb = np.sort(b.points[:, 0])
    return float(np.sqrt(np.mean((sa - sb) ** 2)))


def w2_exact_smallN(a: ParticleCloud, b: ParticleCloud) -> float:
    """Exact W2 in any dimension via minimum-cost perfect matching.

    Restricted to clouds of at most 12 particles; the assignment solve is
    cubic and this route exists as an oracle, not a workhorse.  Use
    w2_sliced for larger clouds.
    """
    _check_pair(a, b)
    n = a.n_particles
    if n > EXACT_MATCHING_LIMIT:
        raise MeasureError(
            f"w2_exact_smallN is limited to N <= {EXACT_MATCHING_LIMIT} "
            f"(got N = {n}); use w2_sliced for larger clouds")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sum(diff**2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def w2_sliced(a: ParticleCloud, b: ParticleCloud, n_projections: int = 128,
              seed: int = 0) -> float:
    """Sliced W2: root mean square of sorted-coupling distances along random
    unit directions.

    Directions are sign-canonicalized (first nonzero component positive),
    which changes nothing mathematically but makes the d=1 case reduce to
    w2_1d bit for bit.
    """
    _check_pair(a, b)
    if n_projections < 1:
        raise MeasureError(f"n_projections must be >= 1, got {n_projections}")
    if a.dim == 1:
        # every canonicalized direction is +1, so the Monte Carlo average
        # has zero variance and equals the sorted coupling identically
        return w2_1d(a, b)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_projections):
        u = rng.standard_normal(a.dim)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            u = np.zeros(a.dim)
            u[0] = 1.0
        else:
            u = u / norm
        nz = np.flatnonzero(u)
        if u[nz[0]] < 0:
            u = -u
        pa = np.sort(a.points @ u)
        pb = np.sort(b.points @ u)
        total += np.mean((pa - pb) ** 2)
    return float(np.sqrt(total / n_projections))
