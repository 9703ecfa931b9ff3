"""Guided whole-body motion generation.

The condition module fuses point-cloud features with the predicted
affordance (MLP + temporal transformer), lets the predicted hand
trajectory query that latent through cross-attention, and concatenates the
result with coarse and fine text embeddings.  A frozen base denoiser is
steered by a trainable copy whose layers feed back through zero-initialized
linear links.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from hoimotion.diffusion import DiffusionSchedule, forward_diffuse
from hoimotion.io import load_checkpoint
from hoimotion.layers import (
    CrossAttentionBlock,
    SelfAttentionBlock,
    TimestepEmbedding,
    mlp,
    positional_table,
    zero_module,
)
from hoimotion.motion import FEATURE_DIM
from hoimotion.stage1 import HAND_DIM, PC_DIM, BpsProjector
from hoimotion.text import TEXT_DIM, LongTextEncoder, TextEncoder


@dataclass
class FusedCondition:
    f_text: torch.Tensor  # B x 512
    f_text_fine: torch.Tensor  # B x 512
    f_fusion: torch.Tensor  # B x L x d

    def concat(self) -> torch.Tensor:
        """Per-frame condition: [coarse text, fine text, fusion]."""
        L = self.f_fusion.shape[1]
        text = torch.cat([self.f_text, self.f_text_fine], -1)[:, None].expand(-1, L, -1)
        return torch.cat([text, self.f_fusion], -1)


class SemGeoCondition(nn.Module):
    def __init__(self, n_basis: int, n_points: int, d: int = 64, n_layers: int = 1, n_head: int = 4, seq_len: int = 100):
        super().__init__()
        self.d = d
        self.fine_text = LongTextEncoder()
        self.projector = BpsProjector(n_basis)
        self.afford_mlp = mlp([PC_DIM + n_points, 2 * d, d, d])
        self.register_buffer("pos", positional_table(seq_len, d), persistent=False)
        self.temporal = nn.ModuleList(SelfAttentionBlock(d, n_head) for _ in range(n_layers))
        self.joint_mlp = mlp([HAND_DIM, d, d])
        self.cross = CrossAttentionBlock(d, n_head)

    def encode_fine_text(self, documents):
        return self.fine_text(documents)

    def fuse_affordance(self, f_pc, afford):
        L = f_pc.shape[1]
        h = self.afford_mlp(torch.cat([f_pc, afford], -1)) + self.pos[:L].to(f_pc.dtype)
        for blk in self.temporal:
            h = blk(h)
        return h

    def fuse_joints(self, hands, F, keep_weights: bool = False):
        return self.cross(self.joint_mlp(hands), F, keep_weights=keep_weights)

    def forward(self, f_text, fine_docs, raw_bps, afford, hands) -> FusedCondition:
        F = self.fuse_affordance(self.projector(raw_bps), afford)
        return FusedCondition(f_text, self.encode_fine_text(fine_docs), self.fuse_joints(hands, F))


class MotionDenoiser(nn.Module):
    """Transformer-encoder denoiser over [condition token, frame tokens]; predicts x0."""

    def __init__(self, d: int = 128, n_layers: int = 4, n_head: int = 4, seq_len: int = 100):
        super().__init__()
        self.text_encoder = TextEncoder()
        self.inp = nn.Linear(FEATURE_DIM, d)
        self.text_tok = nn.Linear(TEXT_DIM, d)
        self.t_embed = TimestepEmbedding(d)
        self.register_buffer("pos", positional_table(seq_len + 1, d), persistent=False)
        self.layers = nn.ModuleList(SelfAttentionBlock(d, n_head) for _ in range(n_layers))
        self.out = nn.Linear(d, FEATURE_DIM)
        self.register_buffer("motion_mean", torch.zeros(FEATURE_DIM))
        self.register_buffer("motion_std", torch.ones(FEATURE_DIM))

    def embed(self, x, t, f_text):
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(x.shape[0])
        cond = (self.t_embed(t) + self.text_tok(f_text))[:, None]
        h = torch.cat([cond, self.inp(x)], 1)
        return h + self.pos[: h.shape[1]].to(x.dtype)

    def forward(self, x, t, f_text, residuals=None):
        h = self.embed(x, t, f_text)
        for k, layer in enumerate(self.layers):
            h = layer(h)
            if residuals is not None:
                h = h + residuals[k]
        return self.out(h[:, 1:])

    def normalize(self, feats):
        return (torch.as_tensor(feats, dtype=self.motion_mean.dtype) - self.motion_mean) / self.motion_std

    def denormalize(self, x):
        return x * self.motion_std.to(x.dtype) + self.motion_mean.to(x.dtype)

    def set_motion_stats(self, feats: np.ndarray):
        flat = np.asarray(feats).reshape(-1, FEATURE_DIM)
        self.motion_mean.copy_(torch.as_tensor(flat.mean(0)))
        self.motion_std.copy_(torch.as_tensor(np.maximum(flat.std(0), 1e-2)))


class MotionControlNet(nn.Module):
    def __init__(self, base: MotionDenoiser, condition: SemGeoCondition):
        super().__init__()
        d = base.inp.out_features
        self.base = base
        self.base.requires_grad_(False)
        self.base.eval()
        # trainable copy starts from the base weights
        self.copy_inp = copy.deepcopy(base.inp)
        self.copy_text_tok = copy.deepcopy(base.text_tok)
        self.copy_t_embed = copy.deepcopy(base.t_embed)
        self.copy_layers = copy.deepcopy(base.layers)
        for mod in (self.copy_inp, self.copy_text_tok, self.copy_t_embed, self.copy_layers):
            mod.requires_grad_(True)
        self.condition = condition
        self.hint = nn.Linear(2 * TEXT_DIM + condition.d, d)
        self.links = nn.ModuleList(zero_module(nn.Linear(d, d)) for _ in base.layers)

    def train(self, mode: bool = True):
        super().train(mode)
        self.base.eval()
        return self

    def copy_forward(self, x, t, cond: FusedCondition):
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(x.shape[0])
        token = (self.copy_t_embed(t) + self.copy_text_tok(cond.f_text))[:, None]
        frames = self.copy_inp(x) + self.hint(cond.concat())
        h = torch.cat([token, frames], 1)
        h = h + self.base.pos[: h.shape[1]].to(x.dtype)
        residuals = []
        for layer, link in zip(self.copy_layers, self.links):
            h = layer(h)
            residuals.append(link(h))
        return residuals

    def forward(self, x, t, cond: FusedCondition):
        return self.base(x, t, cond.f_text, residuals=self.copy_forward(x, t, cond))

    def controlnet_denoise(self, x, t, cond: FusedCondition):
        return self.forward(x, t, cond)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def load_base(path, **kwargs) -> MotionDenoiser:
    """Build a base denoiser from a checkpoint; a missing file is an error."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"base denoiser checkpoint missing: {path}")
    state, manifest = load_checkpoint(path)
    base = MotionDenoiser(**{**manifest.get("model_kwargs", {}), **kwargs})
    base.load_state_dict(state)
    return base


def motion_loss(model, x0, text_or_cond, schedule: DiffusionSchedule, generator=None):
    """L1 between the predicted and clean (normalized) motion features."""
    b = x0.shape[0]
    t = torch.randint(0, schedule.T, (b,), generator=generator)
    noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    xt = forward_diffuse(x0, t, noise, schedule)
    return (model(xt, t, text_or_cond) - x0).abs().mean()


def pretrain_base_step(base: MotionDenoiser, x0, texts, schedule, optimizer, generator=None) -> float:
    base.train()
    loss = motion_loss(base, x0, base.text_encoder(texts), schedule, generator)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_controlnet(net: MotionControlNet, batch: dict, schedule, optimizer, generator=None) -> float:
    """One update of the copy, links and condition module; the base stays frozen."""
    net.train()
    with torch.no_grad():
        f_text = net.base.text_encoder(batch["text"])
    cond = net.condition(f_text, batch["fine"], batch["bps"], batch["afford"], batch["hands"])
    loss = motion_loss(net, batch["x0"], cond, schedule, generator)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())
