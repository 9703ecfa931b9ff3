"""Loader for recorded interactions stored as ``.npz`` archives.

An archive holds ``joints`` (T x 22 x 3, meters, y-up) and
``object_points`` (T x N x 3) for one long recording; optional scalar
entries ``fps`` and ``category``.  Recordings are cut into
non-overlapping clips, each re-expressed in its own canonical frame
(root at x = z = 0, facing +z at the first frame) so they are
interchangeable with synthetic clips.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from hoimotion.affordance import DEFAULT_TAU, contact_mask
from hoimotion.geometry import PointCloudSequence, downsample_indices
from hoimotion.motion import HAND_JOINTS, N_JOINTS, MotionSequence, _yaw_matrix, encode_motion, yaw_from_joints
from hoimotion.synthetic import InteractionClip, split_clips


def canonicalize(joints: np.ndarray, points: np.ndarray):
    """Rotate and translate both arrays so the first frame is canonical."""
    root = joints[0, 0] * np.array([1.0, 0.0, 1.0])
    rot = _yaw_matrix(-yaw_from_joints(joints[:1])[0])
    return (joints - root) @ rot.T, (points - root) @ rot.T


def load_recording(
    path,
    clip_len: int = 100,
    n_points: int = 256,
    split: str = "train",
    tau: float = DEFAULT_TAU,
) -> list[InteractionClip]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        joints = np.asarray(data["joints"], dtype=np.float64)
        points = np.asarray(data["object_points"], dtype=np.float64)
        fps = float(data["fps"]) if "fps" in data else 30.0
        category = str(data["category"]) if "category" in data else "object"
    if joints.ndim != 3 or joints.shape[1:] != (N_JOINTS, 3):
        raise ValueError(f"{path}: joints must be T x {N_JOINTS} x 3, got {joints.shape}")
    if points.ndim != 3 or points.shape[0] != joints.shape[0] or points.shape[2] != 3:
        raise ValueError(f"{path}: object_points must be T x N x 3 with T = {joints.shape[0]}, got {points.shape}")
    # one point subset for the whole recording keeps correspondences rigid
    keep = downsample_indices(points[0], n_points) if points.shape[1] != n_points else None
    clips = []
    for k, (j, p) in enumerate(zip(split_clips(joints, clip_len), split_clips(points, clip_len))):
        j, p = canonicalize(j, p)
        if keep is not None:
            p = p[:, keep]
        cloud = PointCloudSequence(p)
        clips.append(
            InteractionClip(
                id=f"{path.stem}_{k:05d}",
                motion=MotionSequence(encode_motion(j, fps=fps), fps),
                cloud=cloud,
                joints=j,
                category=category,
                scenario="recorded",
                hand_contact=contact_mask(j[:, list(HAND_JOINTS)], cloud, tau).values,
                split=split,
                meta={"source": str(path), "tau": tau},
            )
        )
    return clips

