"""Procedural human-box interaction clips.

A stick-figure skeleton (22 joints) walks or stands on the XOZ plane and
manipulates a box whose surface is sampled into a point cloud.  During
grip phases the wrists are pinned to points of the cloud.  Hand contact
labels are the tau-contact of the generated hands, so they agree exactly
with the affordance module; reach frames count once within tau.  Every
clip starts canonical: root at x = z = 0, facing +z.  Box clouds come from
one surface template scaled per clip, so point indices are comparable
across clips.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from hoimotion.affordance import DEFAULT_TAU, contact_mask
from hoimotion.geometry import PointCloudSequence, downsample_cloud
from hoimotion.motion import N_JOINTS, MotionSequence, encode_motion

SCENARIOS = ("carry", "push", "lift-rotate-place")
CATEGORIES = {
    "carry": ("plasticbox", "smallbox", "suitcase"),
    "push": ("largebox", "trashcan", "plasticbox"),
    "lift-rotate-place": ("plasticbox", "smallbox", "largebox"),
}

PLANTED_HEIGHT = 0.02
CONTACT_HEIGHT = 0.05
HAND_GAP = 0.02


@dataclass
class InteractionClip:
    id: str
    motion: MotionSequence
    cloud: PointCloudSequence
    joints: np.ndarray  # L x 22 x 3
    category: str
    scenario: str
    hand_contact: np.ndarray  # L x 2, ground truth by construction
    split: str = "train"
    annotation: object = None
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.joints.shape[0]

    @property
    def fps(self) -> float:
        return self.motion.fps


def _rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _two_bone(a, c, l1, l2, pole):
    v = c - a
    d = np.linalg.norm(v)
    u = v / max(d, 1e-9)
    d = np.clip(d, abs(l1 - l2) + 1e-4, l1 + l2 - 1e-4)
    x = (l1**2 - l2**2 + d**2) / (2 * d)
    h = np.sqrt(max(l1**2 - x**2, 0.0))
    p = pole - np.dot(pole, u) * u
    p = p / max(np.linalg.norm(p), 1e-9)
    return a + x * u + h * p


def sample_box_surface(size, n, rng, oversample: int = 4) -> np.ndarray:
    """Area-uniform samples on a box surface, FPS-reduced to ``n`` points."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n * oversample, p=areas / areas.sum())
    uv = rng.random((n * oversample, 2)) - 0.5
    pts = np.zeros((n * oversample, 3))
    half = np.array(size) / 2
    for f, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)]):
        sel = face == f
        others = [k for k in range(3) if k != axis]
        pts[sel, axis] = sign * half[axis]
        pts[sel, others[0]] = uv[sel, 0] * size[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * size[others[1]]
    return downsample_cloud(pts, n, seed=int(rng.integers(1 << 31)))


NOMINAL_BOX = np.array([0.4, 0.325, 0.35])


@functools.lru_cache(maxsize=8)
def _unit_template(n: int) -> np.ndarray:
    return sample_box_surface(NOMINAL_BOX, n, np.random.default_rng(0)) / NOMINAL_BOX


def box_template(size, n: int) -> np.ndarray:
    """Fixed box-surface template scaled to ``size``.

    Every clip shares the point order, so index i names the same spot on
    the box (face and relative position), as with a mesh template.
    """
    return _unit_template(n) * np.asarray(size, dtype=np.float64)


def _anchor(points, target, normal):
    """Cloud point closest to ``target``, pushed out along ``normal``."""
    i = int(np.argmin(np.linalg.norm(points - target, axis=1)))
    return points[i] + HAND_GAP * np.asarray(normal, dtype=np.float64)


def _body(root_xz, yaw, pelvis_y, lean, lwrist, rwrist, lfoot, rfoot):
    """Assemble 22 world-frame joints from a handful of drivers."""
    rot = _rot_y(yaw)
    origin = np.array([root_xz[0], 0.0, root_xz[1]])

    def to_local(p):
        return rot.T @ (p - origin)

    j = np.zeros((N_JOINTS, 3))
    j[0] = [0.0, pelvis_y, 0.0]
    j[1] = [0.09, pelvis_y - 0.07, 0.0]
    j[2] = [-0.09, pelvis_y - 0.07, 0.0]
    d = np.array([0.0, np.cos(lean), np.sin(lean)])
    j[3] = j[0] + 0.11 * d
    j[6] = j[3] + 0.13 * d
    j[9] = j[6] + 0.06 * d
    j[12] = j[9] + 0.21 * d
    j[15] = j[12] + 0.10 * d + [0.0, 0.0, 0.03]
    j[13] = j[9] + 0.12 * d + [0.07, 0.0, 0.0]
    j[14] = j[9] + 0.12 * d + [-0.07, 0.0, 0.0]
    j[16] = j[13] + [0.11, 0.0, 0.0] + 0.03 * d
    j[17] = j[14] + [-0.11, 0.0, 0.0] + 0.03 * d

    j[10], j[11] = to_local(lfoot), to_local(rfoot)
    j[7] = j[10] + [0.0, 0.06, -0.12]
    j[8] = j[11] + [0.0, 0.06, -0.12]
    j[4] = _two_bone(j[1], j[7], 0.40, 0.40, np.array([0.0, 0.0, 1.0]))
    j[5] = _two_bone(j[2], j[8], 0.40, 0.40, np.array([0.0, 0.0, 1.0]))

    j[20], j[21] = to_local(lwrist), to_local(rwrist)
    j[18] = _two_bone(j[16], j[20], 0.28, 0.26, np.array([0.3, -0.3, -1.0]))
    j[19] = _two_bone(j[17], j[21], 0.28, 0.26, np.array([-0.3, -0.3, -1.0]))
    return j @ rot.T + origin


def _trajectory(n_ext, offset, speed, turn_rate, fps):
    """Root xz and yaw for frames -offset .. n_ext - offset - 1 (root at 0 for frame 0)."""
    t = (np.arange(n_ext) - offset) / fps
    yaw = turn_rate * t
    step = speed / fps
    dx = step * np.sin(yaw)
    dz = step * np.cos(yaw)
    x = np.concatenate([[0.0], np.cumsum(dx[:-1])])
    z = np.concatenate([[0.0], np.cumsum(dz[:-1])])
    x -= x[offset]
    z -= z[offset]
    return np.stack([x, z], axis=1), yaw


def _gait(traj, yaw, offset, n, cycle, walking):
    feet = np.zeros((2, n, 3))
    for k, (side, phase0) in enumerate([(1.0, 0), (-1.0, cycle // 2)]):
        for f in range(n):
            if not walking:
                p = traj[offset] + _rot_y(yaw[offset])[[0, 2]][:, 0] * 0.1 * side
                feet[k, f] = [p[0], PLANTED_HEIGHT, p[1]]
                continue
            g = f + phase0
            cyc, phi = divmod(g, cycle)
            phi = phi / cycle

            def anchor(c):
                tk = int(round(c * cycle - phase0 + 0.3 * cycle)) + offset
                tk = int(np.clip(tk, 0, len(traj) - 1))
                lateral = _rot_y(yaw[tk]) @ np.array([0.1 * side, 0.0, 0.0])
                return np.array([traj[tk, 0] + lateral[0], PLANTED_HEIGHT, traj[tk, 1] + lateral[2]])

            if phi < 0.6:
                feet[k, f] = anchor(cyc)
            else:
                s = (phi - 0.6) / 0.4
                a, b = anchor(cyc), anchor(cyc + 1)
                pos = a + (b - a) * _smoothstep(s)
                pos[1] = PLANTED_HEIGHT + 0.09 * np.sin(np.pi * s)
                feet[k, f] = pos
    return feet


def _hang(root_xz, yaw, pelvis_y, side):
    p = _rot_y(yaw) @ np.array([0.2 * side, pelvis_y - 0.04, 0.05])
    return np.array([root_xz[0] + p[0], p[1], root_xz[1] + p[2]])


def _make_clip(rng, scenario, n_frames, fps, n_points):
    size = np.array([rng.uniform(0.3, 0.5), rng.uniform(0.2, 0.45), rng.uniform(0.25, 0.45)])
    local_pts = box_template(size, n_points)
    half = size / 2
    cycle = int(round(fps))
    offset = 2 * cycle
    n_ext = n_frames + 4 * cycle

    if scenario == "carry":
        speed, turn = rng.uniform(0.6, 1.1), rng.uniform(-0.3, 0.3)
        walking = True
        hold = np.array([0.0, rng.uniform(0.95, 1.1), 0.3 + half[2]])
        anchors = (
            _anchor(local_pts, [half[0], 0, 0], [1, 0, 0]),
            _anchor(local_pts, [-half[0], 0, 0], [-1, 0, 0]),
        )
    elif scenario == "push":
        speed, turn = rng.uniform(0.4, 0.8), 0.0
        walking = True
        hold = np.array([0.0, half[1], 0.35 + half[2]])
        anchors = (
            _anchor(local_pts, [half[0] / 2, half[1] - 0.05, -half[2]], [0, 0, -1]),
            _anchor(local_pts, [-half[0] / 2, half[1] - 0.05, -half[2]], [0, 0, -1]),
        )
    elif scenario == "lift-rotate-place":
        speed, turn = 0.0, 0.0
        walking = False
        hold = np.array([0.0, half[1], 0.3 + half[2]])
        anchors = (
            _anchor(local_pts, [half[0], 0, 0], [1, 0, 0]),
            _anchor(local_pts, [-half[0], 0, 0], [-1, 0, 0]),
        )
    else:
        raise ValueError(f"unknown scenario {scenario!r}")

    traj, yaw = _trajectory(n_ext, offset, speed, turn, fps)
    feet = _gait(traj, yaw, offset, n_frames, cycle, walking)
    lift_height = rng.uniform(0.9, 1.1)
    spin = rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 3, np.pi / 2)

    cloud = np.zeros((n_frames, n_points, 3))
    joints = np.zeros((n_frames, N_JOINTS, 3))
    for f in range(n_frames):
        root, heading = traj[f + offset], yaw[f + offset]
        body_rot = _rot_y(heading)
        base = np.array([root[0], 0.0, root[1]])
        pelvis_y, lean, box_yaw, weight = 0.92, 0.05, 0.0, 1.0
        center_local = hold.copy()
        if scenario == "lift-rotate-place":
            u = f / (n_frames - 1)
            crouch = _smoothstep(u / 0.15) * (1 - _smoothstep((u - 0.15) / 0.25))
            crouch += _smoothstep((u - 0.65) / 0.25) * (1 - _smoothstep((u - 0.9) / 0.1))
            pelvis_y = 0.92 - 0.2 * crouch
            lean = 0.05 + 0.5 * crouch
            up = _smoothstep((u - 0.15) / 0.25) - _smoothstep((u - 0.65) / 0.25)
            center_local[1] = half[1] + (lift_height - half[1]) * up
            box_yaw = spin * _smoothstep((u - 0.4) / 0.25)
            weight = _smoothstep(u / 0.15) * (1 - _smoothstep((u - 0.9) / 0.1))
        box_rot = body_rot @ _rot_y(box_yaw)
        center = base + body_rot @ center_local
        cloud[f] = local_pts @ box_rot.T + center

        gripping = weight >= 1.0 - 1e-12
        wrists = []
        for k, side in enumerate((1.0, -1.0)):
            grip = box_rot @ anchors[k] + center
            hang = _hang(root, heading, pelvis_y, side)
            wrists.append(grip if gripping else hang + (grip - hang) * weight)
        joints[f] = _body(root, heading, pelvis_y, lean, wrists[0], wrists[1], feet[0, f], feet[1, f])

    contact = contact_mask(joints[:, [20, 21]], cloud, DEFAULT_TAU).values
    foot_contact = joints[:, [10, 11], 1] < CONTACT_HEIGHT
    motion = MotionSequence(encode_motion(joints, foot_contact, fps), fps)
    return motion, PointCloudSequence(cloud), joints, contact, size


def generate_synthetic(
    seed: int,
    n_clips: int,
    scenario: str | None = None,
    n_frames: int = 100,
    fps: float = 30.0,
    n_points: int = 256,
    test_fraction: float = 0.25,
) -> list[InteractionClip]:
    """Deterministic clips; ``scenario=None`` cycles through all three."""
    if scenario is not None and scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    clips = []
    n_test = int(round(n_clips * test_fraction))
    for i in range(n_clips):
        rng = np.random.default_rng([seed, i])
        scen = scenario or SCENARIOS[i % len(SCENARIOS)]
        motion, cloud, joints, contact, size = _make_clip(rng, scen, n_frames, fps, n_points)
        category = str(rng.choice(CATEGORIES[scen]))
        clips.append(
            InteractionClip(
                id=f"syn{seed:04d}_{i:05d}",
                motion=motion,
                cloud=cloud,
                joints=joints,
                category=category,
                scenario=scen,
                hand_contact=contact,
                split="test" if i >= n_clips - n_test else "train",
                meta={"box_size": size.tolist(), "tau": DEFAULT_TAU},
            )
        )
    return clips


def split_clips(sequence, clip_len: int = 100, fps: float = 30.0) -> list:
    """Non-overlapping windows of ``clip_len`` frames along the first axis.

    ``fps`` is carried for API symmetry with clip metadata; windows are in
    frames.  The trailing remainder is dropped.
    """
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    seq = np.asarray(sequence)
    n = seq.shape[0] // clip_len
    return [seq[i * clip_len : (i + 1) * clip_len] for i in range(n)]
