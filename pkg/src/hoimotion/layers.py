"""Transformer building blocks shared by both stages.

Attention is written out explicitly (no fused kernels) so that attention
weights can be inspected and repeated forward passes are bit-stable.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class Attention(nn.Module):
    def __init__(self, dim: int, n_head: int = 4, kv_dim: int | None = None, zero_out: bool = False):
        super().__init__()
        if dim % n_head:
            raise ValueError(f"dim {dim} not divisible by n_head {n_head}")
        kv_dim = kv_dim or dim
        self.n_head = n_head
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.out = nn.Linear(dim, dim)
        if zero_out:
            zero_module(self.out)
        self.last_weights = None

    def forward(self, query, context=None, keep_weights: bool = False):
        context = query if context is None else context
        b, lq, d = query.shape
        lk = context.shape[1]
        h = self.n_head
        q = self.q(query).view(b, lq, h, d // h).transpose(1, 2)
        k = self.k(context).view(b, lk, h, d // h).transpose(1, 2)
        v = self.v(context).view(b, lk, h, d // h).transpose(1, 2)
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)
        if keep_weights:
            self.last_weights = w
        y = (w @ v).transpose(1, 2).reshape(b, lq, d)
        return self.out(y)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, mult: int = 2):
        super().__init__(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))


class SelfAttentionBlock(nn.Module):
    """Pre-norm self-attention followed by a position-wise feed-forward layer."""

    def __init__(self, dim: int, n_head: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, n_head)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class CrossAttentionBlock(nn.Module):
    """query + Attention(norm(query), context); ``zero_out`` makes it start as identity."""

    def __init__(self, dim: int, n_head: int = 4, kv_dim: int | None = None, zero_out: bool = False):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.attn = Attention(dim, n_head, kv_dim=kv_dim, zero_out=zero_out)

    def forward(self, query, context, keep_weights: bool = False):
        return query + self.attn(self.norm_q(query), context, keep_weights=keep_weights)


class TimestepEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t):
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / half
        )
        args = t.to(torch.float64)[:, None] * freqs[None]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1).to(self.mlp[0].weight.dtype)
        return self.mlp(emb)


def mlp(sizes, act=nn.GELU) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
    return nn.Sequential(*layers)


def positional_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table.float()


def l1_loss(pred, target):
    return F.l1_loss(pred, target)
