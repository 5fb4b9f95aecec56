"""
Learned token embeddings.

A token is embedded as the sum of its value row, its own three axis position rows and the
three axis position rows of its successor:

    e(c_i) = v(c_i) + p_x(c_i) + p_y(c_i) + p_z(c_i) + p_x(c_i+1) + p_y(c_i+1) + p_z(c_i+1)

Every positional table ends with an END row used when a token has no successor. Value row
0 stays zero and marks tokens that are not sampled yet.
"""

from __future__ import annotations

from typing import Union

import numpy as np
import torch
from torch import nn

from octoseq.exceptions import FormatError, ShapeMismatchError
from octoseq.octree import END, TokenSequence

ArrayLike = Union[np.ndarray, torch.Tensor]


def position_table_size(max_depth: int) -> int:
    """Rows of one positional table: all ids up to `max_depth` plus END."""
    return (1 << (max_depth + 1)) - 1


class TokenEmbedding(nn.Module):
    """Value, positional and class tables of width `D`."""

    def __init__(self, width: int, max_depth: int, num_classes: int):
        super().__init__()
        self.width = width
        self.max_depth = max_depth
        self.end_index = position_table_size(max_depth) - 1
        self.values = nn.Embedding(4, width, padding_idx=0)
        self.pos_x = nn.Embedding(position_table_size(max_depth), width)
        self.pos_y = nn.Embedding(position_table_size(max_depth), width)
        self.pos_z = nn.Embedding(position_table_size(max_depth), width)
        self.classes = nn.Embedding(num_classes, width)

    def _position_index(self, positions: ArrayLike) -> torch.Tensor:
        index = torch.as_tensor(np.asarray(positions), dtype=torch.long).reshape(-1, 3)
        if len(index) and (index.min() < END or index.max() >= self.end_index):
            raise ShapeMismatchError(
                f"spatial ids must be below {self.end_index} for depth {self.max_depth}"
            )
        return index.masked_fill(index == END, self.end_index)

    def position_terms(self, positions: ArrayLike) -> torch.Tensor:
        """`p_x + p_y + p_z` for every row of `positions`; `END` rows use the END entries."""
        index = self._position_index(positions)
        return self.pos_x(index[:, 0]) + self.pos_y(index[:, 1]) + self.pos_z(index[:, 2])

    def forward(
        self, values: ArrayLike, positions: ArrayLike, successors: ArrayLike
    ) -> torch.Tensor:
        value_index = torch.as_tensor(np.asarray(values), dtype=torch.long).reshape(-1)
        if len(value_index) and (value_index.min() < 0 or value_index.max() > 3):
            raise FormatError("cell values must lie in 0..3")
        return (
            self.values(value_index)
            + self.position_terms(positions)
            + self.position_terms(successors)
        )

    def embed_token(
        self, value: int, position: tuple[int, int, int], successor: tuple[int, int, int]
    ) -> torch.Tensor:
        """Embedding of one token; `successor` is `(END, END, END)` for the last token."""
        if value not in (1, 2, 3):
            raise FormatError(f"invalid cell value {value}")
        return self.forward([value], [position], [successor])[0]

    def embed_sequence(self, sequence: TokenSequence) -> torch.Tensor:
        """`(n, D)` embeddings; token `i` sees the position of token `i + 1`."""
        return self.forward(sequence.values, sequence.positions, sequence.successor_positions())

    def embed_class(self, label: int) -> torch.Tensor:
        if not 0 <= label < self.classes.num_embeddings:
            raise ShapeMismatchError(
                f"class label {label} outside 0..{self.classes.num_embeddings - 1}"
            )
        return self.classes.weight[label]
