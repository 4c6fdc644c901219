"""Counter-addressed Gaussian increments for coupled SDE simulation.

Every Brownian increment consumed anywhere in this package is addressed by a
key

    (seed, role, replicate, particle, component, step)

and is a pure function of that key: same key, same bits, regardless of call
order, worker count, or how many increments are requested around it.  That is
what makes synchronous coupling possible (a slow-fast run and an averaged run
driven by the same slow-noise keys see literally the same Brownian path) and
what makes every simulation replayable from a seed.

The generator is Philox-4x32 with 10 rounds, implemented here directly on
numpy uint64 arrays.  Philox is a keyed counter-based generator: the four
32-bit counter words hold (step, particle pair, replicate, component), the
64-bit key is derived from (seed, role), and one evaluation of the round
function yields four independent 32-bit words.  Two words make one double in
(0, 1), so each evaluation carries two particles' worth of uniforms.  Normals
come from the inverse CDF (scipy.special.ndtri) rather than a rejection
sampler so that the draw at a key never depends on neighbouring draws.

Roles partition the key space: slow noise (W1), fast noise (W2), frozen-block
noise for invariant-measure work, and probe noise for assumption checks never
collide even under the same seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "NoiseError",
    "Role",
    "NoiseStream",
    "gaussian_increment",
    "aggregate_increments",
]

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)

# Limits implied by the 32-bit counter layout.  Particles share counter rows
# in pairs, so the particle index gets one extra bit.
MAX_STEPS = 2**32
MAX_PARTICLES = 2**33
MAX_REPLICATES = 2**32
MAX_COMPONENTS = 2**32


class NoiseError(ValueError):
    """Raised for malformed keys, windows, or stream parameters."""


class Role(enum.Enum):
    """Disjoint key spaces for the different Brownian drivers."""

    SLOW = "slow"
    FAST = "fast"
    FROZEN = "frozen"
    PROBE = "probe"


_ROLE_SALT = {
    Role.SLOW: 0x736C6F77_6E6F6973,
    Role.FAST: 0x66617374_6E6F6973,
    Role.FROZEN: 0x66726F7A_656E6E6F,
    Role.PROBE: 0x70726F62_656E6F69,
}


def _mix64(x: int) -> int:
    """SplitMix64 finalizer; spreads (seed, role) into a full 64-bit key."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Philox-4x32 block function on broadcastable uint64 word arrays.

    Counter words c0..c3 and key words k0..k1 must already be masked to
    32 bits.  Returns four uint64 arrays (each < 2**32) of the broadcast
    shape.  The widening 32x32->64 multiply is exact in uint64.
    """
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK32
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _unit_interval(a, b):
    """Map two 32-bit words to a double in the open interval (0, 1).

    53 significant bits on a half-ulp-offset lattice, so neither endpoint is
    attainable and ndtri stays finite.
    """
    hi = (a >> np.uint64(5)).astype(np.float64)
    lo = (b >> np.uint64(6)).astype(np.float64)
    return (hi * 67108864.0 + lo + 0.5) * (0.5**53)


def _check_index(name: str, value: int, bound: int) -> int:
    value = int(value)
    if value < 0 or value >= bound:
        raise NoiseError(f"{name} must be in [0, {bound}), got {value}")
    return value


@dataclass(frozen=True)
class NoiseStream:
    """A (seed, role) binding; all draws are pure functions of the key.

    Instances hold no mutable state.  The same stream object can be shared
    across threads or processes and will hand out identical increments for
    identical keys.
    """

    seed: int
    role: Role

    def __post_init__(self):
        if not isinstance(self.role, Role):
            raise NoiseError(f"role must be a Role, got {self.role!r}")
        seed = int(self.seed)
        if seed < 0 or seed >= 2**64:
            raise NoiseError(f"seed must be a 64-bit unsigned int, got {seed}")
        object.__setattr__(self, "seed", seed)

    def _key_words(self):
        key64 = _mix64(_mix64(self.seed) ^ _ROLE_SALT[self.role])
        return key64 & 0xFFFFFFFF, key64 >> 32

    def normals(self, replicate: int, step: int, n_particles: int,
                n_components: int, particle_offset: int = 0) -> np.ndarray:
        """Standard normals for one (replicate, step), shape (n, d)."""
        out = self.normals_batch([replicate], step, n_particles, n_components,
                                 particle_offset=particle_offset)
        return out[0]

    def normals_batch(self, replicates, step: int, n_particles: int,
                      n_components: int, particle_offset: int = 0) -> np.ndarray:
        """Standard normals for many replicates at once, shape (M, n, d).

        Equivalent to stacking :meth:`normals` over ``replicates``; the
        batched path exists for speed, not for different semantics.  Row i of
        the output is the draw addressed by particle index
        ``particle_offset + i``, so disjoint offsets give disjoint keys.
        """
        step = _check_index("step", step, MAX_STEPS)
        n = int(n_particles)
        d = _check_index("n_components", n_components, MAX_COMPONENTS + 1)
        off = int(particle_offset)
        if n <= 0 or off < 0 or off + n > MAX_PARTICLES:
            raise NoiseError(
                f"particle range [{off}, {off + n}) out of [0, {MAX_PARTICLES}]")
        if d <= 0:
            raise NoiseError(f"n_components must be positive, got {d}")
        reps = np.asarray([_check_index("replicate", r, MAX_REPLICATES)
                           for r in replicates], dtype=np.uint64)
        k0, k1 = self._key_words()

        lead = off & 1
        first_pair = off >> 1
        n_pairs = ((off + n + 1) >> 1) - first_pair
        pair_idx = np.repeat(
            np.arange(first_pair, first_pair + n_pairs, dtype=np.uint64), d)
        comp_idx = np.tile(np.arange(d, dtype=np.uint64), n_pairs)
        c0 = np.uint64(step)
        c1 = pair_idx[None, :]
        c2 = reps[:, None]
        c3 = comp_idx[None, :]
        w0, w1, w2, w3 = philox4x32(
            np.broadcast_to(c0, (len(reps), n_pairs * d)), c1, c2, c3, k0, k1
        )
        u_even = _unit_interval(w0, w1).reshape(len(reps), n_pairs, d)
        u_odd = _unit_interval(w2, w3).reshape(len(reps), n_pairs, d)
        u = np.empty((len(reps), 2 * n_pairs, d))
        u[:, 0::2, :] = u_even
        u[:, 1::2, :] = u_odd
        return ndtri(u[:, lead:lead + n, :])

    def single(self, replicate: int, particle: int, component: int,
               step: int) -> float:
        """One standard normal at a fully spelled-out key."""
        replicate = _check_index("replicate", replicate, MAX_REPLICATES)
        particle = _check_index("particle", particle, MAX_PARTICLES)
        component = _check_index("component", component, MAX_COMPONENTS)
        step = _check_index("step", step, MAX_STEPS)
        k0, k1 = self._key_words()
        w = philox4x32(np.uint64(step), np.uint64(particle >> 1),
                       np.uint64(replicate), np.uint64(component), k0, k1)
        if particle & 1:
            u = _unit_interval(w[2], w[3])
        else:
            u = _unit_interval(w[0], w[1])
        return float(ndtri(u))


def gaussian_increment(stream: NoiseStream, key, step: float) -> float:
    """Brownian increment N(0, step) at ``key``.

    ``key`` is (replicate, particle, component, step_index); ``step`` is the
    step size.  Pure in (key, step): no internal state advances.
    """
    if len(key) != 4:
        raise NoiseError(
            "key must be (replicate, particle, component, step_index), "
            f"got {key!r}")
    step = float(step)
    if not step > 0.0 or not math.isfinite(step):
        raise NoiseError(f"step must be positive and finite, got {step}")
    replicate, particle, component, step_index = key
    z = stream.single(replicate, particle, component, step_index)
    return math.sqrt(step) * z


def aggregate_increments(stream: NoiseStream, replicate: int, particle: int,
                         component: int, h: float, window) -> float:
    """Sum of fine Brownian increments over a coarse window.

    ``window`` is a (t0, t1) pair in time units; it must line up with the
    fine grid, i.e. both endpoints must be integer multiples of ``h``.  The
    result is the coarse increment a solver running on the window grid should
    consume to stay synchronously coupled with a fine-grid run.
    """
    h = float(h)
    if not h > 0.0:
        raise NoiseError(f"fine step h must be positive, got {h}")
    t0, t1 = float(window[0]), float(window[1])
    if t1 <= t0:
        raise NoiseError(f"window must have t1 > t0, got ({t0}, {t1})")
    i0 = t0 / h
    i1 = t1 / h
    if abs(i0 - round(i0)) > 1e-9 or abs(i1 - round(i1)) > 1e-9:
        raise NoiseError(
            f"window ({t0}, {t1}) is not aligned to the fine grid h={h}")
    i0, i1 = int(round(i0)), int(round(i1))
    total = 0.0
    root_h = math.sqrt(h)
    for k in range(i0, i1):
        total += root_h * stream.single(replicate, particle, component, k)
    return total
