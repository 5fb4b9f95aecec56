"""
Sequence decoding: transformer context vectors to per-token logits.

A `LevelDecoder` mirrors its `LevelCompressor`. The context of a group is expanded by a
transposed convolution into the `b` ancestor slots and then, one local depth at a time,
into 8 child slots under every MIXED ancestor. The generated slots get their spatial
position terms added.

Dependencies between tokens decoded from the same context are restored by masked block
convolutions: slot `j` of a block receives `sum_{k < j} A[j, k] x_k`. On the generated
level `x` are the token embeddings of earlier siblings. On ancestor levels `x` are the
subtree summaries of earlier ancestors (zero for leaves); the result is pushed down to the
descendants through the bias-free transposed convolutions. Every term a slot receives
therefore depends only on tokens that precede it in the sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from octoseq.exceptions import NonFiniteError, ShapeMismatchError
from octoseq.scheme import CompressionScheme, LevelLayout


class MaskedBlockConv(nn.Module):
    """Position dependent, strictly causal mixing within consecutive blocks of `size` rows.

    Example:
        ```python
        import torch
        from octoseq.decoder import MaskedBlockConv

        conv = MaskedBlockConv(4, width=3)
        rows = torch.randn(8, 3)
        out = conv(rows)
        assert torch.equal(out[0], torch.zeros(3))
        assert torch.equal(out[4], torch.zeros(3))
        ```
    """

    def __init__(self, size: int, width: int):
        super().__init__()
        self.size = size
        self.weight = nn.Parameter(torch.empty(size, size, width, width))
        nn.init.normal_(self.weight, std=width**-0.5)
        self.register_buffer(
            "mask", torch.ones(size, size).tril(diagonal=-1)[:, :, None, None], persistent=False
        )

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if len(rows) % self.size:
            raise ShapeMismatchError(f"{len(rows)} rows do not form blocks of {self.size}")
        blocks = rows.reshape(-1, self.size, rows.shape[-1])
        weight = self.weight * self.mask.to(self.weight.dtype)
        return torch.einsum("nkd,jked->nje", blocks, weight).reshape(rows.shape)


def transposed(conv: nn.ConvTranspose1d, rows: torch.Tensor, bias: bool = True) -> torch.Tensor:
    """Expand every row of `(m, D)` into `kernel` rows; `bias=False` drops the bias term."""
    kernel = conv.kernel_size[0]
    if not len(rows):
        return rows.new_zeros((0, conv.out_channels))
    out = F.conv_transpose1d(
        rows.T.unsqueeze(0), conv.weight, conv.bias if bias else None, stride=kernel
    )
    return out.squeeze(0).T.reshape(len(rows) * kernel, -1)


@dataclass
class SlotState:
    """Slot vectors of a level's groups, one tensor per local depth aligned with
    `layout.cells`; the last one holds the generated tokens."""

    slots: list[torch.Tensor]
    layout: LevelLayout

    @property
    def targets(self) -> torch.Tensor:
        return self.slots[-1]


class LevelDecoder(nn.Module):
    def __init__(self, width: int, collapse: int, group: int):
        super().__init__()
        self.collapse_depth = collapse
        self.group = group
        self.expand = nn.ConvTranspose1d(width, width, group, stride=group)
        self.refine = nn.ModuleList(
            [nn.ConvTranspose1d(width, width, 8, stride=8) for _ in range(collapse)]
        )
        self.lift = nn.ModuleList(
            [MaskedBlockConv(group if local == 0 else 8, width) for local in range(collapse)]
        )
        block = 8 if collapse else group
        self.within: Optional[MaskedBlockConv] = None
        if block > 1:
            self.within = MaskedBlockConv(block, width)

    def upsample_group(
        self, context: torch.Tensor, layout: LevelLayout, position_terms: torch.Tensor
    ) -> SlotState:
        """Expand `(groups, D)` contexts into slots; children only under MIXED ancestors.

        params:
            context: one context row per group of `layout`.
            layout: groups of one level.
            position_terms: `p_x + p_y + p_z` of every token in the sequence.
        """
        if len(context) != layout.num_groups:
            raise ShapeMismatchError(
                f"{len(context)} context rows for {layout.num_groups} groups"
            )
        slots = [transposed(self.expand, context)]
        for local in range(layout.collapse):
            mixed = torch.as_tensor(layout.mixed[local])
            slots.append(transposed(self.refine[local], slots[-1][mixed]))
        for cells, rows in zip(layout.cells, slots):
            if len(cells) != len(rows):
                raise ShapeMismatchError("ancestor structure does not match the group layout")
        slots[-1] = slots[-1] + position_terms[torch.as_tensor(layout.targets)]
        return SlotState(slots=slots, layout=layout)

    def lift_and_redistribute(
        self, state: SlotState, collapsed: list[torch.Tensor]
    ) -> SlotState:
        """Pass finished subtree summaries on to later ancestors and their descendants.

        Leaf ancestors contribute nothing. Each ancestor level adds its masked block term
        and hands the accumulated term down to the children of its MIXED cells.
        """
        layout = state.layout
        if not layout.collapse:
            return state
        slots = list(state.slots)
        carry = torch.zeros_like(slots[0])
        for local in range(layout.collapse):
            mixed = torch.as_tensor(layout.mixed[local])
            summaries = collapsed[local] * mixed.to(collapsed[local].dtype)[:, None]
            carry = carry + self.lift[local](summaries)
            slots[local] = slots[local] + carry
            carry = transposed(self.refine[local], carry[mixed], bias=False)
        slots[-1] = slots[-1] + carry
        return SlotState(slots=slots, layout=layout)

    def block_context(self, state: SlotState, embeddings: torch.Tensor) -> SlotState:
        """Add the embeddings of earlier siblings to every generated slot."""
        if self.within is None:
            return state
        rows = embeddings[torch.as_tensor(state.layout.targets)]
        slots = list(state.slots)
        slots[-1] = slots[-1] + self.within(rows)
        return SlotState(slots=slots, layout=state.layout)

    def forward(
        self,
        context: torch.Tensor,
        layout: LevelLayout,
        collapsed: list[torch.Tensor],
        embeddings: torch.Tensor,
        position_terms: torch.Tensor,
    ) -> torch.Tensor:
        """Final slot vectors of the generated tokens, aligned with `layout.targets`."""
        state = self.upsample_group(context, layout, position_terms)
        state = self.lift_and_redistribute(state, collapsed)
        return self.block_context(state, embeddings).targets


class SequenceDecoder(nn.Module):
    """One `LevelDecoder` per level and a shared linear head to 3 logits."""

    def __init__(self, width: int, scheme: CompressionScheme, max_depth: int):
        super().__init__()
        self.levels = nn.ModuleList(
            [
                LevelDecoder(width, entry.collapse, entry.group)
                for entry in (scheme.entry(level) for level in range(1, max_depth + 1))
            ]
        )
        self.head = nn.Linear(width, 3)

    def level(self, depth: int) -> LevelDecoder:
        return self.levels[depth - 1]

    def slot_logits(self, slots: torch.Tensor) -> torch.Tensor:
        return self.head(slots)

    def slot_probabilities(self, slots: torch.Tensor) -> torch.Tensor:
        """Softmax over EMPTY, MIXED and FULL for every slot."""
        if not torch.isfinite(slots).all():
            raise NonFiniteError("slot vector contains NaN or infinite entries")
        return torch.softmax(self.slot_logits(slots), dim=-1)
