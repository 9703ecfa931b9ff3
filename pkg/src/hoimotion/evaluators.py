"""Feature extractors behind FID, diversity and R-score.

``MotionAutoencoder`` supplies the latent space for FID/diversity;
``TextMotionMatcher`` is trained contrastively for retrieval.  Both are
small and trained on the synthetic training split.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hoimotion.layers import positional_table
from hoimotion.motion import FEATURE_DIM
from hoimotion.text import TextEncoder


class MotionEncoder(nn.Module):
    def __init__(self, latent: int = 64, hidden: int = 128):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv1d(FEATURE_DIM, hidden, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv1d(hidden, hidden, 4, stride=2, padding=1),
            nn.GELU(),
        )
        self.head = nn.Linear(2 * hidden, latent)

    def forward(self, x):
        h = self.conv(x.transpose(1, 2))
        return self.head(torch.cat([h.mean(-1), h.amax(-1)], -1))


class MotionAutoencoder(nn.Module):
    def __init__(self, seq_len: int = 100, latent: int = 64, hidden: int = 128):
        super().__init__()
        self.encoder = MotionEncoder(latent, hidden)
        self.register_buffer("pos", positional_table(seq_len, hidden), persistent=False)
        self.lift = nn.Linear(latent, hidden)
        self.decoder = nn.Sequential(nn.Linear(hidden, hidden), nn.GELU(), nn.Linear(hidden, FEATURE_DIM))
        self.register_buffer("mean", torch.zeros(FEATURE_DIM))
        self.register_buffer("std", torch.ones(FEATURE_DIM))

    def normalize(self, feats):
        return (torch.as_tensor(np.asarray(feats), dtype=torch.float32) - self.mean) / self.std

    def forward(self, x):
        z = self.encoder(x)
        h = self.lift(z)[:, None] + self.pos[: x.shape[1]]
        return self.decoder(h), z

    @torch.no_grad()
    def embed(self, feats) -> np.ndarray:
        self.eval()
        return self.encoder(self.normalize(feats)).double().numpy()


class TextMotionMatcher(nn.Module):
    def __init__(self, latent: int = 64):
        super().__init__()
        self.motion = MotionEncoder(latent)
        self.text = TextEncoder()
        self.text_head = nn.Linear(512, latent)
        self.register_buffer("mean", torch.zeros(FEATURE_DIM))
        self.register_buffer("std", torch.ones(FEATURE_DIM))
        self.temperature = 0.1

    def normalize(self, feats):
        return (torch.as_tensor(np.asarray(feats), dtype=torch.float32) - self.mean) / self.std

    def encode_motion(self, x):
        return F.normalize(self.motion(x), dim=-1)

    def encode_text(self, texts):
        return F.normalize(self.text_head(self.text(texts)), dim=-1)

    def loss(self, x, texts):
        m, t = self.encode_motion(x), self.encode_text(texts)
        logits = m @ t.T / self.temperature
        # identical captions are not negatives of each other
        same = torch.tensor([[a == b for b in texts] for a in texts])
        logits = logits.masked_fill(same & ~torch.eye(len(texts), dtype=torch.bool), float("-inf"))
        target = torch.arange(len(texts))
        return (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target)) / 2

    @torch.no_grad()
    def embed(self, feats, texts) -> tuple[np.ndarray, np.ndarray]:
        self.eval()
        m = self.encode_motion(self.normalize(feats)).double().numpy()
        t = self.encode_text(list(texts)).double().numpy()
        return m, t


def _set_stats(model, feats):
    flat = np.asarray(feats).reshape(-1, FEATURE_DIM)
    model.mean.copy_(torch.as_tensor(flat.mean(0), dtype=torch.float32))
    model.std.copy_(torch.as_tensor(np.maximum(flat.std(0), 1e-2), dtype=torch.float32))


def train_evaluators(feats: np.ndarray, texts: list[str], steps: int, seed: int = 0, batch_size: int = 16, lr: float = 1e-3, log=None):
    """Fit the autoencoder (MSE) and the matcher (InfoNCE) on training motions."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    ae = MotionAutoencoder(seq_len=feats.shape[1])
    matcher = TextMotionMatcher()
    _set_stats(ae, feats)
    _set_stats(matcher, feats)
    x_all = ae.normalize(feats)
    opt = torch.optim.AdamW(list(ae.parameters()) + list(matcher.parameters()), lr=lr)
    n = feats.shape[0]
    for step in range(steps):
        sel = rng.choice(n, size=min(batch_size, n), replace=False)
        x = x_all[sel]
        recon, _ = ae(x)
        rec_loss = F.mse_loss(recon, x)
        match_loss = matcher.loss(x, [texts[i] for i in sel])
        opt.zero_grad(set_to_none=True)
        (rec_loss + match_loss).backward()
        opt.step()
        if log is not None and (step % max(1, steps // 100) == 0 or step == steps - 1):
            log(step=step, loss_recon=float(rec_loss.detach()), loss_match=float(match_loss.detach()))
    return ae.eval(), matcher.eval()
