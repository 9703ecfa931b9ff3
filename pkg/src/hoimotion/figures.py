"""Report figures, rendered headless to PNG."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from hoimotion.affordance import contact_mask, reduced_affordance  # noqa: E402
from hoimotion.motion import HAND_JOINTS  # noqa: E402

_HANDS = ("left", "right")


def loss_curves(log_path, dest) -> Path | None:
    """One panel per training phase, every logged ``loss*`` series."""
    log_path = Path(log_path)
    if not log_path.exists():
        return None
    series = defaultdict(lambda: defaultdict(list))
    for line in log_path.read_text().splitlines():
        rec = json.loads(line)
        if "step" not in rec:
            continue
        panel = rec["phase"] + (f"/{rec['part']}" if "part" in rec else "")
        for k, v in rec.items():
            if k.startswith("loss") and isinstance(v, (int, float)):
                series[panel][k].append((rec["step"], v))
    if not series:
        return None
    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3), squeeze=False)
    for ax, (panel, curves) in zip(axes[0], sorted(series.items())):
        for name, pts in sorted(curves.items()):
            # reruns append to the log; keep the latest run's points
            last = {}
            for s, v in pts:
                last[s] = v
            steps = sorted(last)
            ax.plot(steps, [last[s] for s in steps], label=name)
        ax.set_title(panel)
        ax.set_xlabel("step")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, dest)


def hand_trajectories(gt, stage1_hands, generated, fps, dest, title="") -> Path:
    """Hand heights and horizontal paths: ground truth, stage-1 prediction, final motion."""
    t = np.arange(gt.shape[0]) / fps
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    for h, name in enumerate(_HANDS):
        style = "-" if h == 0 else "--"
        axes[0].plot(t, gt[:, h, 1], "k" + style, label=f"gt {name}")
        axes[0].plot(t, stage1_hands[:, h, 1], "C0" + style, label=f"stage 1 {name}")
        axes[0].plot(t, generated[:, h, 1], "C1" + style, label=f"generated {name}")
        axes[1].plot(gt[:, h, 0], gt[:, h, 2], "k" + style)
        axes[1].plot(stage1_hands[:, h, 0], stage1_hands[:, h, 2], "C0" + style)
        axes[1].plot(generated[:, h, 0], generated[:, h, 2], "C1" + style)
    axes[0].set_xlabel("time (s)")
    axes[0].set_ylabel("height (m)")
    axes[0].legend(fontsize=7)
    axes[1].set_xlabel("x (m)")
    axes[1].set_ylabel("z (m)")
    axes[1].set_aspect("equal", adjustable="datalim")
    fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, dest)


def affordance_heatmaps(pred, gt, dest, title="") -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
    for ax, arr, name in ((axes[0], gt, "ground truth"), (axes[1], pred, "stage 1")):
        im = ax.imshow(arr.T, aspect="auto", origin="lower", vmin=0, vmax=1, cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("point")
    fig.colorbar(im, ax=axes, shrink=0.8)
    fig.suptitle(title)
    fig.subplots_adjust(top=0.82, bottom=0.15)
    return _save(fig, dest)


def contact_timeline(gt_contact, pred_contact, fps, dest, title="") -> Path:
    t = np.arange(gt_contact.shape[0]) / fps
    fig, ax = plt.subplots(figsize=(8, 2.2))
    for h, name in enumerate(_HANDS):
        ax.fill_between(t, 2 * h + 0.05, 2 * h + 0.95, where=gt_contact[:, h], color="0.6", step="mid")
        ax.fill_between(t, 2 * h + 1.05, 2 * h + 1.95, where=pred_contact[:, h], color="C1", step="mid")
    ax.set_yticks([0.5, 1.5, 2.5, 3.5], [f"gt {_HANDS[0]}", f"gen {_HANDS[0]}", f"gt {_HANDS[1]}", f"gen {_HANDS[1]}"])
    ax.set_xlabel("time (s)")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, dest)


def _save(fig, dest) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(dest, dpi=100)
    plt.close(fig)
    return dest


def render_report(ws, clips, motions, hands, affords, report, max_clips: int = 3) -> list[Path]:
    """Figures for the first few test clips plus the training curves."""
    out = ws.report / "figures"
    tau, sigma = ws.config.tau, ws.config.sigma
    written = [p for p in [loss_curves(ws.root / "log.jsonl", out / "loss_curves.png")] if p]
    for c, m, h, a in list(zip(clips, motions, hands, affords))[:max_clips]:
        gt_h = c.joints[:, list(HAND_JOINTS)]
        gen_h = m.joints()[:, list(HAND_JOINTS)]
        label = f"{c.id} ({c.category}, {c.scenario})"
        written.append(hand_trajectories(gt_h, h, gen_h, c.fps, out / f"{c.id}_hands.png", label))
        written.append(affordance_heatmaps(a, reduced_affordance(c.cloud, gt_h, sigma), out / f"{c.id}_affordance.png", label))
        written.append(
            contact_timeline(
                contact_mask(gt_h, c.cloud, tau).values,
                contact_mask(gen_h, c.cloud, tau).values,
                c.fps,
                out / f"{c.id}_contact.png",
                label,
            )
        )
    return written
