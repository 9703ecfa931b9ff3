import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hoimotion.geometry import (
    BasisPointSet,
    PointCloudSequence,
    bps_encode,
    downsample_cloud,
    encode_sequence,
    sample_basis,
)


def brute_force_bps(cloud, basis):
    out = np.zeros((len(basis), 6))
    for i, b in enumerate(basis):
        best, best_d = None, np.inf
        for p in cloud:
            d = np.sqrt(sum((p[k] - b[k]) ** 2 for k in range(3)))
            if d < best_d:
                best, best_d = p, d
        out[i, :3] = best - b
        out[i, 3:] = cloud.mean(axis=0)
    return out


def test_downsample_same_size_is_permutation(rng):
    raw = rng.normal(size=(1024, 3))
    out = downsample_cloud(raw, 1024, seed=3)
    assert out.shape == raw.shape
    assert np.array_equal(np.sort(out.view("f8,f8,f8"), axis=0), np.sort(raw.view("f8,f8,f8"), axis=0))


def test_downsample_degenerate_cloud():
    out = downsample_cloud(np.array([[0.1, 0.2, 0.3]]), 4)
    assert np.array_equal(out, np.tile([0.1, 0.2, 0.3], (4, 1)))


def test_downsample_cube_corners_maximize_min_distance():
    corners = np.array(list(itertools.product([0.0, 1.0], repeat=3)))

    def min_pair(pts):
        return min(np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2))

    best = max(min_pair(corners[list(s)]) for s in itertools.combinations(range(8), 4))
    for seed in range(8):
        chosen = downsample_cloud(corners, 4, seed=seed)
        assert len({tuple(p) for p in chosen}) == 4
        assert min_pair(chosen) == pytest.approx(best)


def test_downsample_empty_raises():
    with pytest.raises(ValueError, match="empty point cloud"):
        downsample_cloud(np.zeros((0, 3)), 4)


@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_downsample_deterministic_subset(seed, k):
    raw = np.random.default_rng(seed).normal(size=(30, 3))
    a = downsample_cloud(raw, k, seed)
    b = downsample_cloud(raw, k, seed)
    assert np.array_equal(a, b)
    rows = {tuple(r) for r in raw}
    assert all(tuple(r) in rows for r in a)


def test_basis_mean_norm_matches_ball():
    # E|x| = 3r/4 for the uniform ball
    norms = np.linalg.norm(sample_basis(0, 1000, 1.0).basis, axis=1)
    assert abs(norms.mean() - 0.75) < 0.03


def test_basis_half_radius_fraction():
    n = 100_000
    frac = (np.linalg.norm(sample_basis(7, n, 1.0).basis, axis=1) <= 0.5).mean()
    se = np.sqrt((1 / 8) * (7 / 8) / n)
    assert abs(frac - 1 / 8) < 3 * se


def test_basis_determinism_and_containment():
    assert np.array_equal(sample_basis(5, 64).basis, sample_basis(5, 64).basis)
    assert np.all(np.linalg.norm(sample_basis(5, 500, 2.0).basis, axis=1) <= 2.0)


def test_bps_self_encoding(rng):
    pts = rng.uniform(-1, 1, size=(10, 3))
    feats = bps_encode(pts, BasisPointSet(pts, 0, 1.0))
    assert np.allclose(feats[:, :3], 0.0)
    assert np.allclose(feats[:, 3:], pts.mean(0))


def test_bps_singleton(rng):
    basis = sample_basis(0, 12)
    q = np.array([[0.3, -0.2, 0.9]])
    feats = bps_encode(q, basis)
    assert np.allclose(feats[:, :3], q - basis.basis)
    assert np.allclose(feats[:, 3:], q)


def test_bps_matches_brute_force(rng):
    for _ in range(20):
        cloud = rng.normal(size=(16, 3))
        basis = sample_basis(int(rng.integers(1 << 30)), 8)
        assert np.allclose(bps_encode(cloud, basis), brute_force_bps(cloud, basis.basis))


@given(
    arrays(np.float64, st.tuples(st.integers(1, 64), st.just(3)), elements=st.floats(-2, 2)),
    st.integers(1, 64),
    st.integers(0, 1000),
)
def test_bps_property_brute_force(cloud, n, seed):
    basis = sample_basis(seed, n)
    assert np.allclose(bps_encode(cloud, basis)[:, 3:], brute_force_bps(cloud, basis.basis)[:, 3:])
    # ties may pick different points at equal distance
    got = np.linalg.norm(bps_encode(cloud, basis)[:, :3], axis=1)
    want = np.linalg.norm(brute_force_bps(cloud, basis.basis)[:, :3], axis=1)
    assert np.allclose(got, want)


def test_bps_offset_bound(rng):
    cloud = rng.uniform(-0.5, 0.5, size=(50, 3))
    feats = bps_encode(cloud, sample_basis(1, 128))
    extent = np.linalg.norm(cloud.max(0) - cloud.min(0))
    assert np.all(np.linalg.norm(feats[:, :3], axis=1) <= 1.0 + extent)
    assert np.all(feats[:, 3:] == feats[0, 3:])


def test_bps_empty_raises():
    with pytest.raises(ValueError):
        bps_encode(np.zeros((0, 3)), sample_basis(0, 4))


def test_encode_sequence_wraps_frames(rng):
    basis = sample_basis(0, 8)
    one = rng.normal(size=(1, 20, 3))
    assert np.allclose(encode_sequence(PointCloudSequence(one), basis)[0], bps_encode(one[0], basis).ravel())
    static = np.repeat(one, 5, axis=0)
    enc = encode_sequence(PointCloudSequence(static), basis)
    assert enc.shape == (5, 8 * 6)
    assert all(np.array_equal(enc[0], enc[i]) for i in range(5))


def test_encode_sequence_translating_centroid(rng):
    base = rng.normal(size=(20, 3))
    shifts = np.arange(6)[:, None] * np.array([0.1, 0.0, -0.05])
    seq = PointCloudSequence(base[None] + shifts[:, None])
    enc = encode_sequence(seq, sample_basis(0, 8)).reshape(6, 8, 6)
    centroids = np.array([f.mean(0) for f in seq.coords])
    assert np.allclose(enc[:, :, 3:], centroids[:, None])
    assert np.allclose(np.diff(enc[:, 0, 3:], axis=0), [0.1, 0.0, -0.05])


@given(arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_centroid_translation_equivariance(t):
    cloud = np.random.default_rng(0).normal(size=(15, 3))
    basis = sample_basis(0, 6)
    assert np.allclose(bps_encode(cloud + t, basis)[:, 3:], bps_encode(cloud, basis)[:, 3:] + t)


@pytest.mark.parametrize(
    "coords",
    [np.zeros((0, 4, 3)), np.zeros((2, 0, 3)), np.zeros((2, 4, 2)), np.full((1, 2, 3), np.nan)],
)
def test_point_cloud_validation(coords):
    with pytest.raises(ValueError):
        PointCloudSequence(coords)


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_refinement_never_shrinks_min_distance(seed, k):
    from scipy.spatial.distance import pdist

    from hoimotion.geometry import farthest_point_indices, refine_dispersion

    pts = np.random.default_rng(seed).normal(size=(25, 3))
    greedy = farthest_point_indices(pts, k, start=seed % 25)
    refined = refine_dispersion(pts, greedy)
    assert len(set(refined.tolist())) == k
    assert pdist(pts[refined]).min() >= pdist(pts[greedy]).min() - 1e-12
