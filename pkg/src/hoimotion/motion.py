"""263-dim motion features over a 22-joint skeleton.

Per-frame layout (y-up, the body faces +z at yaw 0, its left side is +x)::

    [0]        root yaw velocity (rad/s)
    [1:3]      root xz velocity in the root frame (m/s)
    [3]        root height
    [4:67]     joints 1..21 relative to the root xz, in the root frame
    [67:193]   joints 1..21 6D rotation (bone alignment, root frame)
    [193:259]  all 22 joint velocities in the root frame (m/s)
    [259:263]  foot contact bits: left ankle, left foot, right ankle, right foot

Velocities are forward differences; the last frame repeats the previous one.
Recovery integrates the yaw and root velocities from a canonical start
(yaw 0, root at x = z = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

N_JOINTS = 22
FEATURE_DIM = 263

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)  # fmt: skip
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

LEFT_HAND, RIGHT_HAND = 20, 21
HAND_JOINTS = (LEFT_HAND, RIGHT_HAND)
LEFT_FOOT, RIGHT_FOOT = 10, 11
FOOT_JOINTS = (LEFT_FOOT, RIGHT_FOOT)

ROT_VEL = slice(0, 1)
LIN_VEL = slice(1, 3)
ROOT_Y = slice(3, 4)
RIC = slice(4, 67)
ROT6D = slice(67, 193)
LOCAL_VEL = slice(193, 259)
FOOT_CONTACT = slice(259, 263)

# rest-pose bone directions (child - parent), used for the 6D rotation block
_REST_BONES = np.array(
    [
        [0, 1, 0], [1, -0.8, 0], [-1, -0.8, 0], [0, 1, 0], [0, -1, 0], [0, -1, 0],
        [0, 1, 0], [0, -1, 0], [0, -1, 0], [0, 1, 0], [0, -0.4, 1], [0, -0.4, 1],
        [0, 1, 0], [1, 1, 0], [-1, 1, 0], [0, 1, 0.3], [1, 0, 0], [-1, 0, 0],
        [0, -1, 0], [0, -1, 0], [0, -1, 0], [0, -1, 0],
    ],
    dtype=np.float64,
)  # fmt: skip


@dataclass
class MotionSequence:
    features: np.ndarray  # L x 263
    fps: float = 30.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise ValueError(f"expected L x {FEATURE_DIM} features, got {self.features.shape}")

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    def joints(self) -> np.ndarray:
        return recover_joints(self.features, self.fps)

    def foot_contact(self) -> np.ndarray:
        return self.features[:, FOOT_CONTACT] > 0.5


def yaw_from_joints(joints: np.ndarray) -> np.ndarray:
    across = joints[:, 1] - joints[:, 2]
    # forward = across x up
    fwd_x, fwd_z = -across[:, 2], across[:, 0]
    return np.arctan2(fwd_x, fwd_z)


def _yaw_matrix(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    z, o = np.zeros_like(yaw), np.ones_like(yaw)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2
    )


def _align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction a onto direction b (Rodrigues)."""
    a = a / np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if nb < 1e-9:
        return np.eye(3)
    b = b / nb
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1 + 1e-9:
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 0.0, 1.0])
        axis /= np.linalg.norm(axis)
        return 2 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def _forward_diff(x: np.ndarray) -> np.ndarray:
    d = np.empty_like(x)
    d[:-1] = x[1:] - x[:-1]
    d[-1] = d[-2] if len(x) > 1 else 0.0
    return d


def encode_motion(joints, foot_contact=None, fps: float = 30.0) -> np.ndarray:
    """Global joints (L x 22 x 3) in the canonical frame -> L x 263 features.

    ``foot_contact`` is L x 2 (left, right); when omitted it is derived from
    the foot-joint heights (< 5 cm).
    """
    joints = np.asarray(joints, dtype=np.float64)
    n = joints.shape[0]
    yaw = yaw_from_joints(joints)
    inv = _yaw_matrix(-yaw)  # world -> root frame
    root = joints[:, 0]

    feats = np.zeros((n, FEATURE_DIM))
    dyaw = np.angle(np.exp(1j * _forward_diff(yaw)))
    if n > 1:
        dyaw[-1] = dyaw[-2]
    feats[:, ROT_VEL] = dyaw[:, None] * fps
    droot = _forward_diff(root)
    feats[:, LIN_VEL] = np.einsum("lij,lj->li", inv, droot)[:, [0, 2]] * fps
    feats[:, ROOT_Y] = root[:, 1:2]

    rel = joints[:, 1:] - root[:, None] * np.array([1.0, 0.0, 1.0])
    feats[:, RIC] = np.einsum("lij,lkj->lki", inv, rel).reshape(n, -1)

    rots = np.zeros((n, N_JOINTS - 1, 6))
    for f in range(n):
        local = joints[f] @ inv[f].T
        for j in range(1, N_JOINTS):
            r = _align(_REST_BONES[j], local[j] - local[PARENTS[j]])
            rots[f, j - 1] = r[:, :2].T.reshape(-1)
    feats[:, ROT6D] = rots.reshape(n, -1)

    vel = _forward_diff(joints)
    feats[:, LOCAL_VEL] = np.einsum("lij,lkj->lki", inv, vel).reshape(n, -1) * fps

    if foot_contact is None:
        foot_contact = joints[:, list(FOOT_JOINTS), 1] < 0.05
    fc = np.asarray(foot_contact, dtype=np.float64)
    feats[:, FOOT_CONTACT] = fc[:, [0, 0, 1, 1]]
    return feats


def recover_joints(features, fps: float = 30.0):
    """Integrate root velocities and place local joints in the world frame.

    Accepts numpy (returns numpy) or torch tensors of shape (..., L, 263)
    (returns a differentiable tensor of shape (..., L, 22, 3)).
    """
    if not torch.is_tensor(features):
        out = recover_joints(torch.as_tensor(np.asarray(features, dtype=np.float64)), fps)
        return out.numpy()

    rv = features[..., 0]
    yaw = torch.cumsum(rv / fps, dim=-1)
    yaw = torch.cat([torch.zeros_like(yaw[..., :1]), yaw[..., :-1]], dim=-1)
    c, s = torch.cos(yaw), torch.sin(yaw)

    vx, vz = features[..., 1] / fps, features[..., 2] / fps
    # root-frame velocity rotated into the world frame
    wx = c * vx + s * vz
    wz = -s * vx + c * vz
    px = torch.cumsum(wx, dim=-1)
    pz = torch.cumsum(wz, dim=-1)
    px = torch.cat([torch.zeros_like(px[..., :1]), px[..., :-1]], dim=-1)
    pz = torch.cat([torch.zeros_like(pz[..., :1]), pz[..., :-1]], dim=-1)
    py = features[..., 3]

    ric = features[..., RIC].reshape(*features.shape[:-1], N_JOINTS - 1, 3)
    lx, ly, lz = ric[..., 0], ric[..., 1], ric[..., 2]
    gx = c[..., None] * lx + s[..., None] * lz + px[..., None]
    gz = -s[..., None] * lx + c[..., None] * lz + pz[..., None]
    others = torch.stack([gx, ly, gz], dim=-1)
    root = torch.stack([px, py, pz], dim=-1)[..., None, :]
    return torch.cat([root, others], dim=-2)
