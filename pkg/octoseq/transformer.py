"""
Decoder-only causal transformer over latent sequences.

The input is the class embedding followed by the latents, plus a learned position row per
input position. Output position `t` is the context used to decode group `t`, so group `t`
only ever sees the latents of groups before it.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from octoseq.exceptions import SequenceTooLongError


class CausalSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, max_positions: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.dropout = nn.Dropout(dropout)
        self.register_buffer(
            "future",
            torch.ones(max_positions, max_positions, dtype=torch.bool).triu(diagonal=1),
            persistent=False,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        length, width = x.shape
        head_width = width // self.heads
        q, k, v = (
            part.reshape(length, self.heads, head_width).transpose(0, 1)
            for part in self.qkv(x).chunk(3, dim=-1)
        )
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_width)
        scores = scores.masked_fill(self.future[:length, :length], float("-inf"))
        attention = self.dropout(torch.softmax(scores, dim=-1))
        return self.proj((attention @ v).transpose(0, 1).reshape(length, width))


class TransformerBlock(nn.Module):
    """Pre-norm attention and feed-forward block."""

    def __init__(
        self, width: int, heads: int, ff_width: int, max_positions: int, dropout: float = 0.0
    ):
        super().__init__()
        self.attention_norm = nn.LayerNorm(width)
        self.attention = CausalSelfAttention(width, heads, max_positions, dropout)
        self.mlp_norm = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, ff_width),
            nn.GELU(),
            nn.Linear(ff_width, width),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.attention_norm(x))
        return x + self.mlp(self.mlp_norm(x))


class LatentTransformer(nn.Module):
    def __init__(
        self,
        width: int,
        heads: int,
        layers: int,
        ff_width: int,
        max_positions: int,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.max_positions = max_positions
        self.position = nn.Parameter(torch.randn(max_positions, width) * 0.02)
        self.blocks = nn.ModuleList(
            [
                TransformerBlock(width, heads, ff_width, max_positions, dropout)
                for _ in range(layers)
            ]
        )
        self.norm = nn.LayerNorm(width)

    def _run(self, inputs: torch.Tensor) -> torch.Tensor:
        if len(inputs) > self.max_positions:
            raise SequenceTooLongError(
                f"{len(inputs)} transformer positions exceed the maximum of {self.max_positions}"
            )
        x = inputs + self.position[: len(inputs)]
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def forward(self, latents: torch.Tensor, class_vector: torch.Tensor) -> torch.Tensor:
        """Context for every group: row `t` reads the class vector and latents `< t`."""
        if not len(latents):
            return latents
        return self._run(torch.cat([class_vector[None], latents[:-1]]))

    def next_context(self, latents: torch.Tensor, class_vector: torch.Tensor) -> torch.Tensor:
        """Context for the group following `latents`."""
        return self._run(torch.cat([class_vector[None], latents]))[-1]
