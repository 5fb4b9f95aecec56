"""
Autoregressive sampling and superresolution.

Shapes are generated level by level, group by group and token by token. Inside a group the
partial sequence is re-embedded after every token, with `0` standing for tokens not sampled
yet; thanks to the causal structure of the decoder this yields the same distribution as
teacher forcing the finished sequence. A finished group is compressed by the encoder and
its latent is appended to the transformer input.

Generation stops when the deepest level holds no MIXED cell or the maximum depth is
reached, where MIXED is masked out.

Example:
    ```python
    import torch
    from octoseq.config import ModelConfig, SampleConfig
    from octoseq.model import OctreeTransformer
    from octoseq.octree import delinearize
    from octoseq.sampler import sample_shape

    torch.manual_seed(0)
    model = OctreeTransformer(ModelConfig(width=16, heads=2, ff_width=32, max_depth=2))
    result = sample_shape(model, SampleConfig(seed=1))
    delinearize(result.sequence.values)
    assert result.grid.resolution == 4
    ```
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import anyio
import numpy as np
import torch
from asyncer import asyncify

from octoseq.config import SampleConfig
from octoseq.custom_types import CellValue
from octoseq.exceptions import (
    MalformedSequenceError,
    PrefixError,
    SequenceTooLongError,
    ShapeMismatchError,
)
from octoseq.logger import logger
from octoseq.model import OctreeTransformer
from octoseq.octree import (
    TokenSequence,
    octree_from_levels,
    octree_to_voxels,
    sequence_from_levels,
    split_levels,
)
from octoseq.scheme import plan_level
from octoseq.utils import torch_generator
from octoseq.voxels import VoxelGrid


@dataclass
class SampleResult:
    """A generated shape.

    Attributes:
        sequence: generated tokens; complete levels only.
        grid: the sequence painted at the requested resolution.
        logits: `(n, 3)` raw logits each token was drawn from; NaN rows for force-fed tokens.
        truncated: generation ran out of transformer positions.
    """

    sequence: TokenSequence
    grid: VoxelGrid
    logits: torch.Tensor
    truncated: bool = False


def temperature_scale(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """`softmax(logits / temperature)`.

    Example:
        ```python
        import torch
        from octoseq.sampler import temperature_scale

        probabilities = temperature_scale(torch.tensor([2.0, 1.0, 0.0]), 0.5)
        expected = torch.tensor([0.8668, 0.1173, 0.0159])
        assert torch.allclose(probabilities, expected, atol=1e-4)
        ```
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return torch.softmax(logits / temperature, dim=-1)


def choose_value(
    logits: torch.Tensor, temperature: float, mask_mixed: bool, generator: torch.Generator
) -> int:
    """Draw a cell value; `temperature == 0` takes the argmax."""
    if mask_mixed:
        logits = logits.clone()
        logits[CellValue.MIXED - 1] = float("-inf")
    if temperature == 0:
        return int(torch.argmax(logits)) + 1
    probabilities = temperature_scale(logits, temperature)
    return int(torch.multinomial(probabilities, 1, generator=generator)) + 1


class _Generation:
    """State of one sampling trajectory."""

    def __init__(self, model: OctreeTransformer, class_label: Optional[int]):
        self.model = model
        self.class_label = class_label
        self.class_vector = model.class_vector(class_label)
        self.levels: list[np.ndarray] = []
        self.latents: list[torch.Tensor] = []
        self.logits: list[torch.Tensor] = []

    def sequence(self) -> TokenSequence:
        return sequence_from_levels(self.levels, class_label=self.class_label)

    def force_feed(self, levels: list[np.ndarray]) -> None:
        """Append whole known levels and their latents."""
        self.levels.extend(levels)
        sequence = self.sequence()
        encoded = self.model.encode(sequence)
        self.latents = list(encoded.latents)
        self.logits = [torch.full((len(sequence), 3), float("nan"), dtype=self.model.dtype)]

    def sample_level(
        self, level: int, size: int, temperature: float, mask_mixed: bool, generator
    ) -> None:
        model = self.model
        entry = model.config.compression.entry(level)
        start = sum(len(values) for values in self.levels)
        self.levels.append(np.zeros(size, dtype=np.int8))
        layout = plan_level(self.sequence(), level, entry)
        level_logits = torch.full((size, 3), float("nan"), dtype=model.dtype)
        compressor = model.compressor.level(level)
        for group in range(layout.num_groups):
            context = model.transformer.next_context(self._latent_tensor(), self.class_vector)
            group_layout = layout.select(group)
            for slot, index in enumerate(group_layout.targets.tolist()):
                sequence = self.sequence()
                embeddings = model.embedding.embed_sequence(sequence)
                collapsed = compressor.collapse_subtrees(embeddings, group_layout)
                logits = model.decode_level(
                    context[None],
                    group_layout,
                    collapsed,
                    embeddings,
                    model.embedding.position_terms(sequence.positions),
                )[slot]
                value = choose_value(logits, temperature, mask_mixed, generator)
                self.levels[-1][index - start] = value
                level_logits[index - start] = logits
            embeddings = model.embedding.embed_sequence(self.sequence())
            self.latents.append(compressor(embeddings, group_layout)[0])
            logger.debug(f"level {level}: group {group + 1}/{layout.num_groups} done")
        self.logits.append(level_logits)

    def _latent_tensor(self) -> torch.Tensor:
        if not self.latents:
            return self.class_vector.new_zeros((0, self.model.config.width))
        return torch.stack(self.latents)

    def run(self, max_depth: int, config: SampleConfig) -> bool:
        """Sample the missing levels; returns whether generation was cut short."""
        generator = torch_generator(config.seed)
        while len(self.levels) < max_depth:
            size = 8
            if self.levels:
                size *= int(np.count_nonzero(self.levels[-1] == CellValue.MIXED))
            if not size:
                return False
            level = len(self.levels) + 1
            try:
                self.sample_level(level, size, config.temperature, level == max_depth, generator)
            except SequenceTooLongError as error:
                logger.warning(f"sampling stopped at level {level}: {error}")
                self.levels.pop()
                return True
        return False

    def result(self, resolution: int, truncated: bool) -> SampleResult:
        sequence = self.sequence()
        if self.levels:
            grid = octree_to_voxels(
                octree_from_levels(self.levels), resolution, fill_open=CellValue.FULL
            )
        else:
            grid = VoxelGrid.empty(resolution)
        logits = torch.cat(self.logits)[: len(sequence)] if self.logits else torch.zeros((0, 3))
        return SampleResult(sequence=sequence, grid=grid, logits=logits, truncated=truncated)


def _target_depth(model: OctreeTransformer, max_depth: Optional[int]) -> int:
    depth = model.config.max_depth if max_depth is None else max_depth
    if depth > model.config.max_depth:
        raise ShapeMismatchError(
            f"max depth {depth} exceeds the model depth {model.config.max_depth}"
        )
    return depth


@torch.no_grad()
def sample_shape(model: OctreeTransformer, config: SampleConfig) -> SampleResult:
    """Generate one shape at resolution `2 ** max_depth`."""
    model.eval()
    max_depth = _target_depth(model, config.max_depth)
    generation = _Generation(model, config.class_label)
    truncated = generation.run(max_depth, config)
    return generation.result(1 << max_depth, truncated)


@torch.no_grad()
def superresolve(
    model: OctreeTransformer,
    prefix: TokenSequence,
    target_depth: int,
    config: SampleConfig,
) -> SampleResult:
    """Continue a whole-level prefix down to `target_depth`.

    params:
        model: trained model.
        prefix: sequence ending exactly at a level boundary; its tokens are force-fed.
        target_depth: depth of the output; the grid has resolution `2 ** target_depth`.
        config: temperature and seed; `class_label` defaults to the prefix's label.
    """
    model.eval()
    target_depth = _target_depth(model, target_depth)
    try:
        levels = split_levels(prefix.values, allow_open=True)
    except MalformedSequenceError as error:
        if error.index == len(prefix):
            raise PrefixError("prefix does not end at a level boundary", error.index) from None
        raise
    if len(levels) > target_depth:
        raise PrefixError(f"prefix is deeper than the target depth {target_depth}", len(prefix))
    label = prefix.class_label if prefix.class_label is not None else config.class_label
    generation = _Generation(model, label)
    generation.force_feed(levels)
    truncated = generation.run(target_depth, config)
    return generation.result(1 << target_depth, truncated)


async def sample_many(
    model: OctreeTransformer,
    config: SampleConfig,
    limiter: Optional[anyio.CapacityLimiter] = None,
) -> list[SampleResult]:
    """Draw `config.count` independent samples concurrently; sample `i` uses `seed + i`.

    Example:
        ```python
        import anyio
        import torch
        from octoseq.config import ModelConfig, SampleConfig
        from octoseq.model import OctreeTransformer
        from octoseq.sampler import sample_many

        torch.manual_seed(0)
        model = OctreeTransformer(ModelConfig(width=16, heads=2, ff_width=32, max_depth=2))
        results = anyio.run(sample_many, model, SampleConfig(count=3, temperature=0))
        assert len(results) == 3
        ```
    """
    results: list[Optional[SampleResult]] = [None] * config.count

    async def draw(index: int) -> None:
        sample_config = config.model_copy(update={"seed": config.seed + index, "count": 1})
        results[index] = await asyncify(sample_shape, limiter=limiter)(model, sample_config)

    async with anyio.create_task_group() as tg:
        for index in range(config.count):
            tg.start_soon(draw, index)
    return [result for result in results if result is not None]
