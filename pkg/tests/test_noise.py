import numpy as np
import pytest

from twoscale.noise import (
    NoiseError,
    NoiseStream,
    Role,
    aggregate_increments,
    gaussian_increment,
    philox4x32,
)

# Published Random123 known-answer vectors for philox4x32, 10 rounds.
PHILOX_KAT = [
    ((0, 0, 0, 0), (0, 0),
     (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF), (0xFFFFFFFF, 0xFFFFFFFF),
     (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


def test_philox_known_answers():
    for ctr, key, want in PHILOX_KAT:
        got = philox4x32(*(np.uint64(c) for c in ctr), key[0], key[1])
        assert tuple(int(g) for g in got) == want


def test_philox_vectorized_matches_scalar():
    c0 = np.arange(50, dtype=np.uint64)
    w = philox4x32(c0, np.uint64(1), np.uint64(2), np.uint64(3), 7, 9)
    for i in range(50):
        ws = philox4x32(np.uint64(i), np.uint64(1), np.uint64(2), np.uint64(3), 7, 9)
        assert all(int(a[i]) == int(b) for a, b in zip(w, ws))


def test_same_key_same_increment_any_order():
    s = NoiseStream(seed=42, role=Role.SLOW)
    a = gaussian_increment(s, (0, 5, 0, 17), 0.01)
    # interleave unrelated draws
    gaussian_increment(s, (3, 1, 0, 2), 0.01)
    s.normals(0, 17, 64, 2)
    b = gaussian_increment(s, (0, 5, 0, 17), 0.01)
    assert a == b


def test_block_matches_single_key_draws():
    s = NoiseStream(seed=7, role=Role.FAST)
    block = s.normals(replicate=2, step=9, n_particles=7, n_components=3)
    for p in range(7):
        for c in range(3):
            assert block[p, c] == s.single(2, p, c, 9)


def test_batch_matches_per_replicate_blocks():
    s = NoiseStream(seed=11, role=Role.SLOW)
    batch = s.normals_batch([0, 1, 5], step=3, n_particles=10, n_components=1)
    for i, r in enumerate([0, 1, 5]):
        assert np.array_equal(batch[i], s.normals(r, 3, 10, 1))


def test_roles_are_disjoint_streams():
    a = NoiseStream(seed=1, role=Role.SLOW).normals(0, 0, 100, 1)
    b = NoiseStream(seed=1, role=Role.FAST).normals(0, 0, 100, 1)
    c = NoiseStream(seed=1, role=Role.FROZEN).normals(0, 0, 100, 1)
    assert not np.allclose(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(b, c)


def test_seeds_are_disjoint_streams():
    a = NoiseStream(seed=0, role=Role.SLOW).normals(0, 0, 100, 1)
    b = NoiseStream(seed=1, role=Role.SLOW).normals(0, 0, 100, 1)
    assert not np.allclose(a, b)


def test_moments_of_a_million_samples():
    # CLT bounds: SE of the mean is 1/1000, allow 4 SE; the variance of the
    # sample variance is 2/n, one percent is about seven SE.
    s = NoiseStream(seed=123, role=Role.SLOW)
    z = s.normals(0, 0, 10**6, 1).ravel()
    assert abs(z.mean()) < 4e-3
    assert abs(z.var() - 1.0) < 1e-2


def test_increment_scales_with_step():
    s = NoiseStream(seed=5, role=Role.SLOW)
    z1 = gaussian_increment(s, (0, 0, 0, 0), 1.0)
    z2 = gaussian_increment(s, (0, 0, 0, 0), 0.25)
    assert z2 == pytest.approx(0.5 * z1)


def test_adjacent_steps_uncorrelated():
    s = NoiseStream(seed=77, role=Role.FAST)
    n = 200_000
    a = s.normals(0, 10, n, 1).ravel()
    b = s.normals(0, 11, n, 1).ravel()
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 4.0 / np.sqrt(n)


def test_aggregate_equals_sum_of_fine_increments():
    s = NoiseStream(seed=9, role=Role.SLOW)
    h = 0.125
    fine = [gaussian_increment(s, (1, 4, 0, k), h) for k in range(8, 16)]
    coarse = aggregate_increments(s, 1, 4, 0, h, (1.0, 2.0))
    assert coarse == pytest.approx(sum(fine), rel=1e-15)


def test_aggregate_rejects_misaligned_window():
    s = NoiseStream(seed=9, role=Role.SLOW)
    with pytest.raises(NoiseError, match="aligned"):
        aggregate_increments(s, 0, 0, 0, 0.125, (0.0, 0.3))
    with pytest.raises(NoiseError, match="aligned"):
        aggregate_increments(s, 0, 0, 0, 0.125, (0.05, 0.25))


def test_rejects_bad_parameters():
    with pytest.raises(NoiseError):
        NoiseStream(seed=-1, role=Role.SLOW)
    with pytest.raises(NoiseError):
        NoiseStream(seed=0, role="slow")
    s = NoiseStream(seed=0, role=Role.SLOW)
    with pytest.raises(NoiseError):
        s.normals(-1, 0, 10, 1)
    with pytest.raises(NoiseError):
        s.normals(0, 0, 0, 1)
    with pytest.raises(NoiseError):
        gaussian_increment(s, (0, 0, 0), 0.1)
    with pytest.raises(NoiseError):
        gaussian_increment(s, (0, 0, 0, 0), -0.1)


def test_draws_are_finite_and_bounded():
    # the inverse-CDF map cannot exceed ndtri at half-ulp from the endpoints
    s = NoiseStream(seed=2024, role=Role.FROZEN)
    z = s.normals(0, 0, 500_000, 1)
    assert np.all(np.isfinite(z))
    assert np.abs(z).max() < 9.0
