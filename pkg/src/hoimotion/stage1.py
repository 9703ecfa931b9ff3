"""Hierarchical guidance generation: hand trajectories + affordance.

A dual-branch conditional diffusion model.  The joint branch runs
self-attention over per-frame tokens built from the noisy hand signal and
the conditions; the affordance branch lets a text+step query attend over
point-cloud/affordance tokens, then refines them with self-attention; a
mutual cross-attention lets joint features query affordance features.
Both heads predict the clean signal and train with an L1 loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from hoimotion.affordance import DEFAULT_SIGMA, reduced_affordance
from hoimotion.diffusion import DiffusionSchedule, ancestral_sample, forward_diffuse
from hoimotion.geometry import BasisPointSet, encode_sequence
from hoimotion.layers import (
    CrossAttentionBlock,
    SelfAttentionBlock,
    TimestepEmbedding,
    mlp,
    positional_table,
)
from hoimotion.motion import HAND_JOINTS
from hoimotion.text import TEXT_DIM, TextEncoder

HAND_DIM = 6
PC_DIM = 256


@dataclass
class GuidanceState:
    x_J: torch.Tensor  # B x L x 6, normalized hand positions
    x_A: torch.Tensor  # B x L x N, affordance rescaled to [-1, 1]
    t: torch.Tensor


@dataclass
class ConditionBundle:
    f_text: torch.Tensor  # B x 512
    f_pc: torch.Tensor  # B x L x 256


@dataclass
class GuidancePair:
    hands: np.ndarray  # B x L x 2 x 3, meters
    affordance: np.ndarray  # B x L x N, in (0, 1]


class BpsProjector(nn.Module):
    def __init__(self, n_basis: int, out_dim: int = PC_DIM, hidden: int = 512):
        super().__init__()
        self.net = mlp([n_basis * 6, hidden, out_dim])

    def forward(self, raw):
        return self.net(raw)


class JointTransformer(nn.Module):
    def __init__(self, d: int, n_layers: int, n_head: int, seq_len: int):
        super().__init__()
        self.inp = nn.Linear(HAND_DIM + PC_DIM + 2 * d, d)
        self.register_buffer("pos", positional_table(seq_len, d), persistent=False)
        self.blocks = nn.ModuleList(SelfAttentionBlock(d, n_head) for _ in range(n_layers))

    def forward(self, x_J, f_pc, text_tok, t_tok):
        L = x_J.shape[1]
        cond = torch.cat([text_tok, t_tok], -1)[:, None].expand(-1, L, -1)
        h = self.inp(torch.cat([x_J, f_pc, cond], -1)) + self.pos[:L].to(x_J.dtype)
        for blk in self.blocks:
            h = blk(h)
        return h


class AffordanceTransformer(nn.Module):
    def __init__(self, d: int, n_layers: int, n_head: int, seq_len: int, n_points: int):
        super().__init__()
        self.kv = nn.Linear(PC_DIM + n_points, d)
        self.query = nn.Linear(2 * d, d)
        self.register_buffer("pos", positional_table(seq_len, d), persistent=False)
        self.cross = CrossAttentionBlock(d, n_head)
        self.blocks = nn.ModuleList(SelfAttentionBlock(d, n_head) for _ in range(n_layers))

    def forward(self, x_A, f_pc, text_tok, t_tok, keep_weights: bool = False):
        L = x_A.shape[1]
        pos = self.pos[:L].to(x_A.dtype)
        kv = self.kv(torch.cat([f_pc, x_A], -1)) + pos
        q = self.query(torch.cat([text_tok, t_tok], -1))[:, None] + pos
        h = self.cross(q, kv, keep_weights=keep_weights)
        for blk in self.blocks:
            h = blk(h)
        return h


class GuidanceDiffusion(nn.Module):
    def __init__(
        self,
        n_basis: int,
        n_points: int,
        seq_len: int = 100,
        d_model: int = 64,
        n_layers: int = 2,
        n_head: int = 4,
        sigma: float = DEFAULT_SIGMA,
    ):
        super().__init__()
        self.n_points = n_points
        self.sigma = sigma
        self.text_encoder = TextEncoder()
        self.projector = BpsProjector(n_basis)
        self.text_tok = nn.Linear(TEXT_DIM, d_model)
        self.t_embed = TimestepEmbedding(d_model)
        self.joint = JointTransformer(d_model, n_layers, n_head, seq_len)
        self.afford = AffordanceTransformer(d_model, n_layers, n_head, seq_len, n_points)
        self.mutual = CrossAttentionBlock(d_model, n_head)
        self.joint_head = nn.Linear(d_model, HAND_DIM)
        self.afford_head = nn.Linear(d_model, n_points)
        self.register_buffer("hand_mean", torch.zeros(HAND_DIM))
        self.register_buffer("hand_std", torch.ones(HAND_DIM))

    # conditions
    def project_bps(self, raw):
        return self.projector(raw)

    def encode_text(self, sentences):
        return self.text_encoder(sentences)

    def bundle(self, sentences, raw_bps) -> ConditionBundle:
        return ConditionBundle(self.encode_text(sentences), self.project_bps(raw_bps))

    # branches
    def joint_branch(self, x_J, bundle: ConditionBundle, t):
        return self.joint(x_J, bundle.f_pc, self.text_tok(bundle.f_text), self.t_embed(t))

    def affordance_branch(self, x_A, bundle: ConditionBundle, t, keep_weights: bool = False):
        return self.afford(x_A, bundle.f_pc, self.text_tok(bundle.f_text), self.t_embed(t), keep_weights)

    def mutual_cross_attention(self, joint_feat, afford_feat, keep_weights: bool = False):
        return self.mutual(joint_feat, afford_feat, keep_weights=keep_weights)

    def predict_clean(self, state: GuidanceState, bundle: ConditionBundle, t=None):
        t = state.t if t is None else t
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(state.x_J.shape[0])
        jf = self.joint_branch(state.x_J, bundle, t)
        af = self.affordance_branch(state.x_A, bundle, t)
        jf = self.mutual_cross_attention(jf, af)
        return self.joint_head(jf), self.afford_head(af)

    # signal normalization
    def normalize_hands(self, hands):
        """B x L x 2 x 3 (meters) -> B x L x 6."""
        flat = torch.as_tensor(hands, dtype=self.hand_mean.dtype).flatten(-2)
        return (flat - self.hand_mean) / self.hand_std

    def denormalize_hands(self, x_J):
        return (x_J * self.hand_std + self.hand_mean).unflatten(-1, (2, 3))

    def set_hand_stats(self, hands: np.ndarray):
        flat = np.asarray(hands).reshape(-1, HAND_DIM)
        self.hand_mean.copy_(torch.as_tensor(flat.mean(0)))
        self.hand_std.copy_(torch.as_tensor(flat.std(0) + 1e-3))


def afford_to_signal(a):
    return 2.0 * a - 1.0


def signal_to_afford(x):
    return torch.clamp((x + 1.0) / 2.0, min=1e-6, max=1.0)


def clip_targets(clip, basis: BasisPointSet, sigma: float = DEFAULT_SIGMA) -> dict:
    """Per-clip training arrays: hands (L x 2 x 3), affordance (L x N), raw BPS."""
    hands = clip.joints[:, list(HAND_JOINTS)]
    return {
        "hands": hands,
        "afford": reduced_affordance(clip.cloud, hands, sigma),
        "bps": encode_sequence(clip.cloud, basis),
    }


def collate(model: GuidanceDiffusion, items: list[dict], texts: list[str]) -> dict:
    return {
        "x_J": model.normalize_hands(np.stack([it["hands"] for it in items])),
        "x_A": afford_to_signal(torch.as_tensor(np.stack([it["afford"] for it in items]), dtype=torch.float32)),
        "bps": torch.as_tensor(np.stack([it["bps"] for it in items]), dtype=torch.float32),
        "text": list(texts),
    }


def compute_loss(model: GuidanceDiffusion, batch: dict, schedule: DiffusionSchedule, generator=None) -> dict:
    x_J, x_A = batch["x_J"], batch["x_A"]
    b = x_J.shape[0]
    t = torch.randint(0, schedule.T, (b,), generator=generator)
    n_J = torch.randn(x_J.shape, generator=generator, dtype=x_J.dtype)
    n_A = torch.randn(x_A.shape, generator=generator, dtype=x_A.dtype)
    state = GuidanceState(forward_diffuse(x_J, t, n_J, schedule), forward_diffuse(x_A, t, n_A, schedule), t)
    bundle = model.bundle(batch["text"], batch["bps"])
    pred_J, pred_A = model.predict_clean(state, bundle)
    loss_J = (pred_J - x_J).abs().mean()
    loss_A = (pred_A - x_A).abs().mean()
    return {"loss": loss_J + loss_A, "loss_joint": loss_J, "loss_afford": loss_A}


def train_step(model, batch, schedule, optimizer, generator=None) -> dict:
    model.train()
    losses = compute_loss(model, batch, schedule, generator)
    optimizer.zero_grad(set_to_none=True)
    losses["loss"].backward()
    optimizer.step()
    return {k: float(v.detach()) for k, v in losses.items()}


def make_optimizer(model, lr: float = 2e-4):
    return torch.optim.AdamW([p for p in model.parameters() if p.requires_grad], lr=lr)


@torch.no_grad()
def sample(model: GuidanceDiffusion, bundle: ConditionBundle, schedule: DiffusionSchedule, seed: int = 0) -> GuidancePair:
    model.eval()
    b, L = bundle.f_pc.shape[:2]
    gen = torch.Generator().manual_seed(seed)

    def denoise(x, t):
        st = GuidanceState(x[..., :HAND_DIM], x[..., HAND_DIM:], torch.full((b,), t, dtype=torch.long))
        pJ, pA = model.predict_clean(st, bundle)
        return torch.cat([pJ, pA], -1)

    x = ancestral_sample(denoise, (b, L, HAND_DIM + model.n_points), schedule, gen, dtype=bundle.f_pc.dtype)
    hands = model.denormalize_hands(x[..., :HAND_DIM])
    return GuidancePair(hands.double().numpy(), signal_to_afford(x[..., HAND_DIM:]).double().numpy())
