"""Evaluation metrics for generated interactions.

Position errors are reported in centimeters.  Contact statistics count
(frame, hand) pairs; ``c_pct`` is the fraction of frames with any
predicted contact.  Precision/recall with an empty denominator are 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from hoimotion.motion import FOOT_JOINTS, HAND_JOINTS, MotionSequence

REPORT_COLUMNS = (
    "hand_jpe_cm", "mpjpe_cm", "c_prec", "c_rec", "c_acc", "c_pct", "f1",
    "fid", "r_score", "diversity", "fs",
    "left_jpe", "right_jpe", "hand_jpe", "affordance_cos_sim",
)  # fmt: skip
FS_HEIGHT = 0.05


def _positions(x):
    return np.asarray(x, dtype=np.float64)


def mpjpe(pred, gt) -> float:
    pred, gt = _positions(pred), _positions(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 100.0)


def _hands(x):
    x = _positions(x)
    return x[..., list(HAND_JOINTS), :] if x.shape[-2] > 2 else x


def hand_jpe(pred, gt) -> float:
    """Mean error over the two hand joints; accepts full skeletons or (…, 2, 3)."""
    return mpjpe(_hands(pred), _hands(gt))


def hand_jpe_split(pred, gt) -> dict:
    p, g = _hands(pred), _hands(gt)
    return {
        "left_jpe": mpjpe(p[..., 0, :], g[..., 0, :]),
        "right_jpe": mpjpe(p[..., 1, :], g[..., 1, :]),
        "hand_jpe": mpjpe(p, g),
    }


def contact_scores(pred_contact, gt_contact) -> dict:
    pred = np.asarray(pred_contact, dtype=bool)
    gt = np.asarray(gt_contact, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if pred.ndim == 1:
        pred, gt = pred[:, None], gt[:, None]
    tp = float(np.sum(pred & gt))
    fp = float(np.sum(pred & ~gt))
    fn = float(np.sum(~pred & gt))
    tn = float(np.sum(~pred & ~gt))
    prec = tp / (tp + fp) if tp + fp > 0 else 0.0
    rec = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    frames = pred.reshape(-1, pred.shape[-1])
    return {
        "prec": prec,
        "rec": rec,
        "acc": (tp + tn) / (tp + fp + fn + tn),
        "c_pct": float(frames.any(axis=-1).mean()),
        "f1": f1,
    }


def _psd_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(feats_gen, feats_gt) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    a = np.asarray(feats_gen, dtype=np.float64)
    b = np.asarray(feats_gt, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("fid needs at least two samples per set")
    mu1, mu2 = a.mean(0), b.mean(0)
    s1 = np.atleast_2d(np.cov(a, rowvar=False))
    s2 = np.atleast_2d(np.cov(b, rowvar=False))
    r1 = _psd_sqrt(s1)
    w = np.linalg.eigvalsh(r1 @ s2 @ r1)
    cross = np.sqrt(np.clip(w, 0, None)).sum()
    value = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * cross)
    return max(value, 0.0)


def r_score(motion_feats, text_feats, batch_size: int = 32) -> float:
    """Top-1 retrieval accuracy of the matching text within batches."""
    m = np.asarray(motion_feats, dtype=np.float64)
    t = np.asarray(text_feats, dtype=np.float64)
    if m.shape[0] != t.shape[0]:
        raise ValueError("motion and text feature counts differ")
    hits = 0
    for start in range(0, m.shape[0], batch_size):
        mb, tb = m[start : start + batch_size], t[start : start + batch_size]
        d = np.linalg.norm(mb[:, None] - tb[None], axis=-1)
        hits += int(np.sum(np.argmin(d, axis=1) == np.arange(len(mb))))
    return hits / m.shape[0]


def diversity(feats, pairs: int, seed: int = 0) -> float:
    """Mean distance over ``pairs`` random disjoint pairs (seeded)."""
    x = np.asarray(feats, dtype=np.float64)
    pairs = min(pairs, x.shape[0] // 2)
    if pairs < 1:
        return 0.0
    idx = np.random.default_rng(seed).permutation(x.shape[0])[: 2 * pairs]
    return float(np.linalg.norm(x[idx[:pairs]] - x[idx[pairs:]], axis=-1).mean())


def foot_sliding(motion, fps: float = 30.0, height_threshold: float = FS_HEIGHT) -> float:
    """Height-weighted horizontal foot displacement per frame while near the ground.

    Each (frame, foot) with height h < H contributes its xz displacement to
    the next frame times (2 - 2^(h/H)); the result is the mean over those
    entries (0 when the feet never come near the ground).
    """
    joints = motion.joints() if isinstance(motion, MotionSequence) else _positions(motion)
    feet = joints[..., list(FOOT_JOINTS), :]
    h = feet[..., :-1, :, 1]
    disp = np.linalg.norm(feet[..., 1:, :, :][..., [0, 2]] - feet[..., :-1, :, :][..., [0, 2]], axis=-1)
    near = h < height_threshold
    if not near.any():
        return 0.0
    weight = 2.0 - 2.0 ** (h / height_threshold)
    return float((disp * weight)[near].mean())


def affordance_similarity(pred, gt) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    denom = np.linalg.norm(p) * np.linalg.norm(g)
    return float(p @ g / denom) if denom > 0 else 0.0


@dataclass
class EvalReport:
    hand_jpe_cm: float = 0.0
    mpjpe_cm: float = 0.0
    c_prec: float = 0.0
    c_rec: float = 0.0
    c_acc: float = 0.0
    c_pct: float = 0.0
    f1: float = 0.0
    fid: float = 0.0
    r_score: float = 0.0
    diversity: float = 0.0
    fs: float = 0.0
    stage1: dict = field(default_factory=dict)  # left_jpe, right_jpe, hand_jpe, affordance_cos_sim

    def __post_init__(self):
        for name in ("c_prec", "c_rec", "c_acc", "c_pct", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("hand_jpe_cm", "mpjpe_cm", "fid", "diversity", "fs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self) -> list:
        flat = {**{k: v for k, v in self.to_dict().items() if k != "stage1"}, **self.stage1}
        return [flat.get(c, "") for c in REPORT_COLUMNS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in self.row()])
        return buf.getvalue()
