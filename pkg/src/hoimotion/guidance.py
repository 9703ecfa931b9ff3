"""Sampling-time guidance: hand-joint alignment and foot stability.

At every denoising step the posterior mean is refined with a few L-BFGS
iterations on ``joint_weight * L_joint + foot_weight * L_foot``, both
evaluated on global joints recovered from the clean estimate implied by
the candidate mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from hoimotion.diffusion import DiffusionSchedule, ancestral_sample
from hoimotion.motion import FOOT_CONTACT, FOOT_JOINTS, HAND_JOINTS, MotionSequence, recover_joints

log = logging.getLogger(__name__)


@dataclass
class GuidanceWeights:
    alpha: float = 1.0
    beta: float = 1.0
    h_g: float = 0.02
    lbfgs_iters: int = 5
    history_size: int = 10
    joint_weight: float = 1.0
    foot_weight: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.h_g, self.joint_weight, self.foot_weight)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("guidance weights must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")

    @property
    def active(self) -> bool:
        return self.lbfgs_iters > 0 and (self.joint_weight > 0 or self.foot_weight > 0)


def joint_guidance_loss(J_pred, J_target, mask):
    """Masked hand alignment, normalized by (guided joints x masked frames).

    ``J_pred`` and ``J_target`` are (..., L, Jg, 3), ``mask`` is (..., L, Jg).
    """
    J_pred = torch.as_tensor(J_pred)
    J_target = torch.as_tensor(J_target, dtype=J_pred.dtype)
    mask = torch.as_tensor(mask).to(J_pred.dtype)
    dist = torch.linalg.vector_norm(J_pred - J_target, dim=-1)
    masked_frames = (mask.sum(-1) > 0).to(J_pred.dtype).sum()
    if masked_frames == 0:
        return (dist * mask).sum()
    return (dist * mask).sum() / (mask.shape[-1] * masked_frames)


def foot_guidance_loss(joints, contact, weights: GuidanceWeights):
    """Lower-foot height to ground plus contact-masked squared speed/acceleration.

    ``joints`` is (..., L, 22, 3) global positions, ``contact`` (..., L, 2)
    booleans for (left, right) foot.  Velocities are per-frame displacements.
    """
    joints = torch.as_tensor(joints)
    feet = joints[..., list(FOOT_JOINTS), :]
    contact = torch.as_tensor(contact).to(joints.dtype)
    L = joints.shape[-3]
    y = feet[..., 1].min(dim=-1).values
    height = ((y - weights.h_g) ** 2).sum(-1)
    vel = feet[..., 1:, :, :] - feet[..., :-1, :, :]
    speed2 = (vel**2).sum(-1)
    vel_term = (contact[..., :-1, :] * speed2).sum((-1, -2))
    acc = torch.linalg.vector_norm(vel[..., 1:, :, :] - vel[..., :-1, :, :], dim=-1)
    acc_term = (contact[..., :-2, :] * acc**2).sum((-1, -2))
    return ((height + weights.alpha * vel_term + weights.beta * acc_term) / L).mean()


def motion_contact(feats):
    """Foot contact (left, right) from the foot-joint channels of the contact bits."""
    bits = feats[..., FOOT_CONTACT]
    return bits[..., [1, 3]] > 0.5


def guidance_objective(feats, target_hands, hand_mask, weights: GuidanceWeights, fps: float):
    joints = recover_joints(feats, fps)
    loss = feats.new_zeros(())
    if weights.joint_weight > 0 and target_hands is not None:
        loss = loss + weights.joint_weight * joint_guidance_loss(
            joints[..., list(HAND_JOINTS), :], target_hands, hand_mask
        )
    if weights.foot_weight > 0:
        loss = loss + weights.foot_weight * foot_guidance_loss(joints, motion_contact(feats.detach()), weights)
    return loss


def refine_posterior_mean(mu, x_t, t, schedule: DiffusionSchedule, to_features, objective, weights: GuidanceWeights):
    """L-BFGS on the posterior mean; returns (new mean, loss before, loss after).

    The refined mean is kept only if the loss is finite and not larger than
    at the start; otherwise the input mean is returned unchanged.
    """
    c_x0 = float(schedule.coef_x0[t])
    c_xt = float(schedule.coef_xt[t])
    xt = x_t.detach().double()

    def loss_of(m):
        return objective(to_features((m - c_xt * xt) / c_x0))

    var = mu.detach().double().clone().requires_grad_(True)
    with torch.no_grad():
        before = float(loss_of(var))
    if not np.isfinite(before):
        log.warning("non-finite guidance loss at step %d; refinement skipped", t)
        return mu, before, before
    opt = torch.optim.LBFGS(
        [var],
        lr=1.0,
        max_iter=weights.lbfgs_iters,
        max_eval=weights.lbfgs_iters * 4,
        history_size=weights.history_size,
        line_search_fn="strong_wolfe",
        tolerance_grad=1e-9,
        tolerance_change=1e-12,
    )

    def closure():
        opt.zero_grad()
        loss = loss_of(var)
        loss.backward()
        return loss

    try:
        with torch.enable_grad():
            opt.step(closure)
    except RuntimeError as exc:
        log.warning("L-BFGS failed at step %d (%s); refinement skipped", t, exc)
        return mu, before, before
    with torch.no_grad():
        after = float(loss_of(var))
    if not np.isfinite(after) or after > before:
        log.warning("guidance did not decrease the loss at step %d; refinement skipped", t)
        return mu, before, before
    return var.detach().to(mu.dtype), before, after


def guided_sample(
    net,
    cond,
    schedule: DiffusionSchedule,
    weights: GuidanceWeights,
    seed: int = 0,
    target_hands=None,
    hand_mask=None,
    seq_len: int = 100,
    fps: float = 30.0,
    trace: list | None = None,
) -> list[MotionSequence]:
    """Ancestral sampling of normalized motion features with optional guidance.

    ``target_hands`` (B x L x 2 x 3, meters) and ``hand_mask`` (B x L x 2)
    drive the joint term.  ``trace`` collects (t, before, after) per refined step.
    """
    base = net.base if hasattr(net, "base") else net
    b = cond.f_text.shape[0]
    gen = torch.Generator().manual_seed(seed)
    mean = base.motion_mean.double()
    std = base.motion_std.double()

    def to_features(x):
        return x * std + mean

    if target_hands is not None:
        target_hands = torch.as_tensor(np.asarray(target_hands), dtype=torch.float64)
        hand_mask = torch.as_tensor(np.asarray(hand_mask), dtype=torch.float64)

    def objective(feats):
        return guidance_objective(feats, target_hands, hand_mask, weights, fps)

    refine = None
    if weights.active:

        def refine(mu, x_t, t):
            new, before, after = refine_posterior_mean(mu, x_t, t, schedule, to_features, objective, weights)
            if trace is not None:
                trace.append((t, before, after))
            return new

    with torch.no_grad():
        denoise = lambda x, t: net(x, t, cond)  # noqa: E731
        x = ancestral_sample(denoise, (b, seq_len, mean.shape[0]), schedule, gen, refine=refine)
    feats = to_features(x.double()).numpy()
    return [MotionSequence(f, fps) for f in feats]
