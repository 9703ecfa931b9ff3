"""Small trainable text encoders with a 512-dim output.

Tokens are hashed into a fixed vocabulary, so no vocabulary file is needed.
The long encoder only differs in its token budget.
"""

from __future__ import annotations

import zlib

import torch
from torch import nn

from hoimotion.textmetrics import tokenize

TEXT_DIM = 512
PAD = 0


class TextEncoder(nn.Module):
    def __init__(self, vocab: int = 4096, embed_dim: int = 128, max_tokens: int = 77, out_dim: int = TEXT_DIM):
        super().__init__()
        self.vocab = vocab
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(vocab, embed_dim)
        self.proj = nn.Sequential(nn.Linear(embed_dim, out_dim), nn.GELU(), nn.Linear(out_dim, out_dim))

    def token_ids(self, sentence: str) -> list[int]:
        ids = [zlib.crc32(tok.encode("utf-8")) % (self.vocab - 1) + 1 for tok in tokenize(sentence)]
        return ids[: self.max_tokens] or [PAD]

    def forward(self, sentences) -> torch.Tensor:
        if isinstance(sentences, str):
            sentences = [sentences]
        ids = [self.token_ids(s) for s in sentences]
        width = max(len(i) for i in ids)
        batch = torch.full((len(ids), width), -1, dtype=torch.long)
        for row, seq in enumerate(ids):
            batch[row, : len(seq)] = torch.tensor(seq)
        valid = (batch >= 0).to(self.embed.weight.dtype)
        emb = self.embed(batch.clamp(min=0)) * valid[..., None]
        pooled = emb.sum(1) / valid.sum(1, keepdim=True)
        return self.proj(pooled)


class LongTextEncoder(TextEncoder):
    def __init__(self, vocab: int = 4096, embed_dim: int = 128, max_tokens: int = 512, out_dim: int = TEXT_DIM):
        super().__init__(vocab, embed_dim, max_tokens, out_dim)

    def forward(self, documents) -> torch.Tensor:
        """``documents``: a list whose items are phase-sentence lists or plain strings."""
        if isinstance(documents, str):
            documents = [documents]
        return super().forward([d if isinstance(d, str) else " ".join(d) for d in documents])
