"""
The assembled model: embeddings, compressor, transformer and decoder, trained end to end.

Example:
    ```python
    import torch
    from octoseq.config import ModelConfig
    from octoseq.model import OctreeTransformer
    from octoseq.octree import build_octree, linearize
    from octoseq.voxels import VoxelGrid

    torch.manual_seed(0)
    model = OctreeTransformer(ModelConfig(width=16, heads=2, ff_width=32, max_depth=3))
    grid = VoxelGrid.empty(8)
    occupancy = grid.occupancy.copy()
    occupancy[:3, :5, 2:] = True
    sequence = linearize(build_octree(VoxelGrid(occupancy)))
    logits = model(sequence)
    assert logits.shape == (len(sequence), 3)
    ```
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from octoseq.compressor import SequenceCompressor
from octoseq.config import ModelConfig
from octoseq.decoder import SequenceDecoder
from octoseq.embedding import TokenEmbedding
from octoseq.exceptions import ShapeMismatchError
from octoseq.octree import TokenSequence
from octoseq.scheme import GroupLayout, LevelLayout, plan_groups
from octoseq.transformer import LatentTransformer


@dataclass
class EncodedSequence:
    """Intermediate tensors of one teacher-forced pass."""

    embeddings: torch.Tensor
    position_terms: torch.Tensor
    layout: GroupLayout
    collapsed: list[list[torch.Tensor]]
    latents: torch.Tensor


class OctreeTransformer(nn.Module):
    """Autoregressive model over octree token sequences.

    params:
        config: architecture; the compression scheme and depth fix the per-level modules.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        scheme = config.compression
        self.embedding = TokenEmbedding(config.width, config.max_depth, config.num_classes)
        self.compressor = SequenceCompressor(config.width, scheme, config.max_depth)
        self.transformer = LatentTransformer(
            config.width,
            config.heads,
            config.layers,
            config.ff_width,
            config.max_positions,
            config.dropout,
        )
        self.decoder = SequenceDecoder(config.width, scheme, config.max_depth)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.head.weight.dtype

    def class_vector(self, label: Optional[int]) -> torch.Tensor:
        """Class embedding; `None` selects the unconditional label."""
        return self.embedding.embed_class(
            self.config.unconditional_label if label is None else label
        )

    def plan(self, sequence: TokenSequence) -> GroupLayout:
        if sequence.depth > self.config.max_depth:
            raise ShapeMismatchError(
                f"sequence of depth {sequence.depth} exceeds model depth {self.config.max_depth}"
            )
        return plan_groups(sequence, self.config.compression)

    def encode(self, sequence: TokenSequence) -> EncodedSequence:
        """Embed, collapse and compress a whole sequence."""
        layout = self.plan(sequence)
        embeddings = self.embedding.embed_sequence(sequence)
        collapsed = [
            self.compressor.level(level.level).collapse_subtrees(embeddings, level)
            for level in layout.levels
        ]
        latents = [
            self.compressor.level(level.level).merge_collapsed(rows)
            for level, rows in zip(layout.levels, collapsed)
        ]
        return EncodedSequence(
            embeddings=embeddings,
            position_terms=self.embedding.position_terms(sequence.positions),
            layout=layout,
            collapsed=collapsed,
            latents=torch.cat(latents) if latents else embeddings.new_zeros((0, self.config.width)),
        )

    def decode_level(
        self,
        context: torch.Tensor,
        layout: LevelLayout,
        collapsed: list[torch.Tensor],
        embeddings: torch.Tensor,
        position_terms: torch.Tensor,
    ) -> torch.Tensor:
        """Logits of the tokens generated by `layout`, in `layout.targets` order."""
        slots = self.decoder.level(layout.level)(
            context, layout, collapsed, embeddings, position_terms
        )
        return self.decoder.slot_logits(slots)

    def forward(self, sequence: TokenSequence) -> torch.Tensor:
        """Teacher-forced logits `(n, 3)` over EMPTY, MIXED and FULL for every token."""
        encoded = self.encode(sequence)
        context = self.transformer(encoded.latents, self.class_vector(sequence.class_label))
        logits = encoded.embeddings.new_zeros((len(sequence), 3))
        for offset, level, collapsed in zip(
            encoded.layout.offsets(), encoded.layout.levels, encoded.collapsed
        ):
            level_logits = self.decode_level(
                context[offset : offset + level.num_groups],
                level,
                collapsed,
                encoded.embeddings,
                encoded.position_terms,
            )
            logits = logits.index_put((torch.as_tensor(level.targets),), level_logits)
        return logits
