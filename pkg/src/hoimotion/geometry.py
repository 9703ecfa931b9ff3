"""Point-cloud sequences and basis point set (BPS) encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PointCloudSequence:
    """L frames of N points, world frame, y-up, meters."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[-1] != 3:
            raise ValueError(f"expected L x N x 3 coordinates, got shape {coords.shape}")
        if coords.shape[0] < 1 or coords.shape[1] < 1:
            raise ValueError("empty point cloud")
        if not np.all(np.isfinite(coords)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "coords", coords)

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def points_per_frame(self) -> int:
        return self.coords.shape[1]

    def centroids(self) -> np.ndarray:
        return self.coords.mean(axis=1)


@dataclass(frozen=True)
class BasisPointSet:
    basis: np.ndarray
    seed: int
    radius: float = 1.0

    @property
    def n(self) -> int:
        return self.basis.shape[0]


def downsample_cloud(raw, target_n: int, seed: int = 0) -> np.ndarray:
    """Reduce (or pad) a cloud to ``target_n`` rows.

    Larger clouds go through farthest-point sampling from a seeded start
    point, then a swap pass that spreads out the closest pair; smaller ones
    are resampled with replacement.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
    return raw[downsample_indices(raw, target_n, seed)]


def downsample_indices(raw, target_n: int, seed: int = 0) -> np.ndarray:
    """Row indices chosen by :func:`downsample_cloud`."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
    if raw.shape[0] == 0:
        raise ValueError("empty point cloud")
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    rng = np.random.default_rng(seed)
    m = raw.shape[0]
    if m < target_n:
        extra = rng.integers(0, m, size=target_n - m)
        return np.concatenate([np.arange(m), extra])
    chosen = farthest_point_indices(raw, target_n, start=int(rng.integers(0, m)))
    return refine_dispersion(raw, chosen)


def farthest_point_indices(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def refine_dispersion(points: np.ndarray, chosen: np.ndarray, max_swaps: int = 64, eps: float = 1e-12) -> np.ndarray:
    """Greedy max-min dispersion repair of a farthest-point selection.

    FPS is only a 2-approximation (on a cube it pairs antipodal corners).
    Each swap replaces an endpoint of a closest pair by the outside point
    that best improves (smallest pairwise distance, then fewer pairs at it).
    """
    chosen = np.array(chosen, dtype=np.int64)
    k, m = len(chosen), points.shape[0]
    if k < 2 or k >= m:
        return chosen
    to_sel = np.linalg.norm(points[:, None] - points[chosen][None], axis=-1)  # m x k
    outside = np.ones(m, dtype=bool)
    outside[chosen] = False
    for _ in range(max_swaps):
        D = to_sel[chosen].copy()
        np.fill_diagonal(D, np.inf)
        gmin = D.min()
        at_min = D <= gmin + eps
        count = at_min.sum() // 2
        best = None  # (new_min, -new_count, slot, candidate)
        for slot in np.flatnonzero(at_min.any(axis=1)):
            others = np.delete(np.arange(k), slot)
            rest = D[np.ix_(others, others)]
            rest_min = rest.min() if k > 2 else np.inf
            cand_d = to_sel[:, others]
            md = np.where(outside, cand_d.min(axis=1), -np.inf)
            new_min = np.minimum(rest_min, md)
            deg = at_min[slot].sum()
            n_c = (cand_d <= gmin + eps).sum(axis=1)
            new_count = np.where(new_min > gmin + eps, 0, count - deg + n_c)
            key = np.lexsort((new_count, -new_min))[0]
            cand = (new_min[key], -new_count[key], slot, key)
            if best is None or cand[:2] > best[:2]:
                best = cand
        if best is None or not (best[0] > gmin + eps or (best[0] >= gmin - eps and -best[1] < count)):
            break
        _, _, slot, c = best
        outside[chosen[slot]] = True
        outside[c] = False
        chosen[slot] = c
        to_sel[:, slot] = np.linalg.norm(points - points[c], axis=1)
    return chosen


def sample_basis(seed: int, n: int, radius: float = 1.0) -> BasisPointSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # inverse CDF of the radius for a uniform ball: P(r <= s) = (s / R)^3
    r = radius * rng.random(n) ** (1.0 / 3.0)
    return BasisPointSet(basis=direction * r[:, None], seed=seed, radius=radius)


def bps_encode(frame, basis: BasisPointSet) -> np.ndarray:
    """Per basis point: [offset to nearest cloud point, cloud centroid] -> (n, 6)."""
    frame = np.asarray(frame, dtype=np.float64).reshape(-1, 3)
    if frame.shape[0] == 0:
        raise ValueError("empty point cloud")
    _, nn = cKDTree(frame).query(basis.basis, k=1)
    offsets = frame[nn] - basis.basis
    centroid = np.broadcast_to(frame.mean(axis=0), offsets.shape)
    return np.concatenate([offsets, centroid], axis=1)


def encode_sequence(seq: PointCloudSequence, basis: BasisPointSet) -> np.ndarray:
    """Raw BPS features for every frame, flattened to L x (n * 6)."""
    return np.stack([bps_encode(f, basis).reshape(-1) for f in seq.coords])
