"""Joint-to-point distance fields, affordance maps and contact masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hoimotion.geometry import PointCloudSequence

DEFAULT_SIGMA = 0.2
DEFAULT_TAU = 0.10


@dataclass(frozen=True)
class DistanceMap:
    values: np.ndarray  # L x N x J


@dataclass(frozen=True)
class AffordanceMap:
    values: np.ndarray  # L x N x J, in (0, 1]
    sigma: float


@dataclass(frozen=True)
class ContactMask:
    values: np.ndarray  # L x J bool
    tau: float


def _coords(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloudSequence):
        return cloud.coords
    return np.asarray(cloud, dtype=np.float64)


def distance_map(cloud, joints) -> DistanceMap:
    pts = _coords(cloud)
    joints = np.asarray(joints, dtype=np.float64)
    if pts.shape[0] != joints.shape[0]:
        raise ValueError(
            f"frame count mismatch: cloud has {pts.shape[0]}, joints have {joints.shape[0]}"
        )
    diff = pts[:, :, None, :] - joints[:, None, :, :]
    return DistanceMap(np.sqrt(np.einsum("lnjc,lnjc->lnj", diff, diff)))


def affordance_from_distance(d, sigma: float = DEFAULT_SIGMA) -> AffordanceMap:
    """exp(-0.5 * d / sigma^2), with d the plain (unsquared) distance."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    values = d.values if isinstance(d, DistanceMap) else np.asarray(d, dtype=np.float64)
    return AffordanceMap(np.exp(-0.5 * values / sigma**2), float(sigma))


def contact_mask(joints, cloud, tau: float = DEFAULT_TAU) -> ContactMask:
    if not tau > 0:
        raise ValueError("tau must be positive")
    nearest = distance_map(cloud, joints).values.min(axis=1)
    return ContactMask(nearest <= tau, float(tau))


def reduced_affordance(cloud, hands, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Per-point max over the given (hand) joints: L x N."""
    return affordance_from_distance(distance_map(cloud, hands), sigma).values.max(axis=2)
