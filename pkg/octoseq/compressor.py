"""
Sequence compression: token embeddings to one latent per group.

For every level a `LevelCompressor` first collapses the covered subtrees bottom-up. Each
block of 8 siblings is summarised by a stride-8 convolution, and the summary replaces the
MIXED parent's own embedding; leaves keep their embedding. The `b` ancestor slots of a
group are then merged by a stride-`b` convolution into its latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from octoseq.exceptions import ShapeMismatchError
from octoseq.scheme import CompressionScheme, GroupLayout, LevelLayout


def strided(conv: nn.Module, rows: torch.Tensor) -> torch.Tensor:
    """Apply a stride equals kernel convolution along the rows of a `(m, D)` matrix."""
    kernel = conv.kernel_size[0]
    if not len(rows):
        return rows.new_zeros((0, conv.out_channels))
    return conv(rows.T.unsqueeze(0)).squeeze(0).T.reshape(len(rows) // kernel, -1)


@dataclass
class LatentSequence:
    """One latent row per group of `layout`."""

    latents: torch.Tensor
    layout: GroupLayout

    def __len__(self) -> int:
        return len(self.latents)


class LevelCompressor(nn.Module):
    def __init__(self, width: int, collapse: int, group: int):
        super().__init__()
        self.collapse_depth = collapse
        self.group = group
        # step s folds local depth a - s into a - s - 1
        self.collapse = nn.ModuleList(
            [nn.Conv1d(width, width, 8, stride=8) for _ in range(collapse)]
        )
        self.merge = nn.Conv1d(width, width, group, stride=group)

    def collapse_subtrees(
        self, embeddings: torch.Tensor, layout: LevelLayout
    ) -> list[torch.Tensor]:
        """Rows for every covered cell, aligned with `layout.cells`.

        MIXED cells above the generated level are replaced by the summary of their children.
        """
        if (layout.collapse, layout.group) != (self.collapse_depth, self.group):
            raise ShapeMismatchError(
                f"layout {layout.collapse}/{layout.group} does not match compressor "
                f"{self.collapse_depth}/{self.group}"
            )
        collapsed: list[torch.Tensor] = [embeddings[torch.as_tensor(layout.cells[-1])]]
        for step, local in enumerate(reversed(range(layout.collapse))):
            rows = embeddings[torch.as_tensor(layout.cells[local])]
            mixed = torch.as_tensor(layout.mixed[local])
            summaries = strided(self.collapse[step], collapsed[0])
            if len(summaries) != int(mixed.sum()):
                raise ShapeMismatchError(
                    f"{len(summaries)} child blocks for {int(mixed.sum())} MIXED cells"
                )
            rows = rows.index_put((mixed.nonzero().squeeze(1),), summaries)
            collapsed.insert(0, rows)
        return collapsed

    def merge_collapsed(self, collapsed: list[torch.Tensor]) -> torch.Tensor:
        """One latent per run of `b` ancestor rows."""
        return strided(self.merge, collapsed[0])

    def forward(self, embeddings: torch.Tensor, layout: LevelLayout) -> torch.Tensor:
        return self.merge_collapsed(self.collapse_subtrees(embeddings, layout))


class SequenceCompressor(nn.Module):
    """One `LevelCompressor` per level, with separate weights."""

    def __init__(self, width: int, scheme: CompressionScheme, max_depth: int):
        super().__init__()
        self.levels = nn.ModuleList(
            [
                LevelCompressor(width, entry.collapse, entry.group)
                for entry in (scheme.entry(level) for level in range(1, max_depth + 1))
            ]
        )

    def level(self, depth: int) -> LevelCompressor:
        return self.levels[depth - 1]

    def compress(self, embeddings: torch.Tensor, layout: GroupLayout) -> LatentSequence:
        """Latents of every group, level-major."""
        if len(layout.levels) > len(self.levels):
            raise ShapeMismatchError(
                f"sequence of depth {len(layout.levels)} exceeds {len(self.levels)} levels"
            )
        parts = [self.level(level.level)(embeddings, level) for level in layout.levels]
        latents = torch.cat(parts) if parts else embeddings.new_zeros((0, embeddings.shape[1]))
        return LatentSequence(latents=latents, layout=layout)

    forward = compress
