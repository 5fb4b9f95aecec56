"""
Training: depth weighted loss, augmentation, the optimisation loop and bits per token.

Example:
    ```python
    import torch
    from octoseq.training import depth_weighted_nll

    logits = torch.zeros(24, 3)
    targets = torch.ones(24, dtype=torch.long)
    depths = torch.tensor([1] * 8 + [2] * 16)
    loss = depth_weighted_nll(logits, targets, depths, alpha=0.5)
    assert torch.isclose(loss, torch.log(torch.tensor(3.0)))
    ```
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from octoseq.checkpoint import save_checkpoint
from octoseq.config import ModelConfig, TrainConfig
from octoseq.exceptions import EmptyDatasetError, NonFiniteError, ShapeMismatchError
from octoseq.logger import logger
from octoseq.model import OctreeTransformer
from octoseq.octree import TokenSequence, build_octree, linearize
from octoseq.scheme import CompressionScheme, expected_latent_count
from octoseq.voxels import VoxelGrid

METRICS_COLUMNS = ("epoch", "step", "loss", "bits_per_token", "lr")


def depth_weights(depths: torch.Tensor, alpha: float) -> torch.Tensor:
    """`alpha ** (d - 1)` per token, rescaled to mean one."""
    depths = torch.as_tensor(depths)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    raw = torch.as_tensor(alpha, dtype=torch.float64) ** (depths.to(torch.float64) - 1)
    return raw / raw.mean()


def depth_weighted_nll(
    logits: torch.Tensor, targets: torch.Tensor, depths: torch.Tensor, alpha: float = 1.0
) -> torch.Tensor:
    """Mean token NLL with per-depth weights normalised to average one over the shape.

    params:
        logits: `(n, 3)` logits over EMPTY, MIXED and FULL.
        targets: `(n,)` class indices, i.e. cell value minus one.
        depths: `(n,)` token depths.
        alpha: weight factor between consecutive depths.
    """
    if not len(logits) == len(targets) == len(depths):
        raise ShapeMismatchError(
            f"{len(logits)} logits, {len(targets)} targets and {len(depths)} depths"
        )
    weights = depth_weights(depths, alpha).to(logits.dtype)
    nll = F.cross_entropy(logits, torch.as_tensor(targets, dtype=torch.long), reduction="none")
    return (weights * nll).mean()


def sequence_loss(model: OctreeTransformer, sequence: TokenSequence, alpha: float) -> torch.Tensor:
    logits = model(sequence)
    return depth_weighted_nll(
        logits,
        torch.as_tensor(sequence.values.astype(np.int64) - 1),
        torch.as_tensor(sequence.depths),
        alpha,
    )


@torch.no_grad()
def bits_per_token(model: OctreeTransformer, sequences: Sequence[TokenSequence]) -> float:
    """Unweighted mean of `-log2 p(target)` over all tokens of `sequences`."""
    if not sequences:
        raise EmptyDatasetError("bits per token of an empty dataset")
    training = model.training
    model.eval()
    total, count = 0.0, 0
    try:
        for sequence in sequences:
            log_probs = torch.log_softmax(model(sequence), dim=-1)
            targets = torch.as_tensor(sequence.values.astype(np.int64) - 1)
            total -= float(log_probs.gather(1, targets[:, None]).sum()) / math.log(2)
            count += len(sequence)
    finally:
        model.train(training)
    return total / count


def warp_axis(
    resolution: int, control_points: int, scale_range: tuple[float, float], rng: np.random.Generator
) -> np.ndarray:
    """Source index of every output index along one axis under a monotone piecewise linear map."""
    segments = control_points + 1
    slopes = rng.uniform(scale_range[0], scale_range[1], size=segments)
    knots = np.linspace(0.0, resolution, segments + 1)
    source = np.concatenate([[0.0], np.cumsum(slopes) / slopes.sum() * resolution])
    centers = np.arange(resolution) + 0.5
    return np.clip(np.floor(np.interp(centers, knots, source)), 0, resolution - 1).astype(np.int64)


def augment(grid: VoxelGrid, seed: int, config: TrainConfig) -> VoxelGrid:
    """Scale the shape independently per axis with random piecewise linear warps.

    Example:
        ```python
        from octoseq.config import TrainConfig
        from octoseq.training import augment
        from octoseq.voxels import VoxelGrid

        grid = VoxelGrid.full(8)
        assert augment(grid, seed=3, config=TrainConfig()) == grid
        ```
    """
    rng = np.random.default_rng(seed)
    x, y, z = (
        warp_axis(grid.resolution, config.control_points, config.scale_range, rng)
        for _ in range(3)
    )
    return VoxelGrid(grid.occupancy[np.ix_(z, y, x)])


def warmup_factor(step: int, warmup_steps: int) -> float:
    return min(1.0, step / warmup_steps)


def latent_length(sequence: TokenSequence, scheme: CompressionScheme) -> int:
    return sum(expected_latent_count(sequence.mixed_counts(), scheme))


@dataclass
class TrainingExample:
    grid: VoxelGrid
    sequence: TokenSequence


@dataclass
class TrainingRecord:
    epoch: int
    step: int
    loss: float
    bits_per_token: float
    lr: float


@dataclass
class TrainResult:
    model: OctreeTransformer
    history: list[TrainingRecord] = field(default_factory=list)
    examples: list[TrainingExample] = field(default_factory=list)


def length_limit(model_config: ModelConfig, config: TrainConfig) -> int:
    return min(config.max_length, model_config.max_positions)


def prepare_examples(
    grids: Sequence[VoxelGrid],
    labels: Sequence[Optional[int]],
    model_config: ModelConfig,
    config: TrainConfig,
) -> list[TrainingExample]:
    """Encode the grids and drop shapes compressing to more latents than allowed."""
    if len(grids) != len(labels):
        raise ShapeMismatchError(f"{len(grids)} grids but {len(labels)} labels")
    limit = length_limit(model_config, config)
    scheme = model_config.compression
    examples = []
    for index, (grid, label) in enumerate(zip(grids, labels)):
        if grid.depth > model_config.max_depth:
            raise ShapeMismatchError(
                f"shape {index} has resolution {grid.resolution}, "
                f"the model stops at {model_config.resolution}"
            )
        sequence = linearize(build_octree(grid), class_label=label)
        length = latent_length(sequence, scheme)
        if length > limit:
            logger.warning(f"shape {index} compresses to {length} latents > {limit}, skipped")
            continue
        examples.append(TrainingExample(grid=grid, sequence=sequence))
    logger.info(f"{len(examples)} of {len(grids)} shapes kept for training")
    return examples


def _draw_sequence(
    example: TrainingExample,
    rng: np.random.Generator,
    model_config: ModelConfig,
    config: TrainConfig,
) -> TokenSequence:
    if rng.random() >= config.augment_probability:
        return example.sequence
    seed = int(rng.integers(2**63 - 1))
    warped = augment(example.grid, seed, config)
    sequence = linearize(build_octree(warped), class_label=example.sequence.class_label)
    limit = length_limit(model_config, config)
    if latent_length(sequence, model_config.compression) > limit:
        logger.warning(f"augmented shape exceeds {limit} latents, using the original")
        return example.sequence
    return sequence


def write_metrics(history: Sequence[TrainingRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(METRICS_COLUMNS)
        for record in history:
            writer.writerow(
                [record.epoch, record.step, f"{record.loss:.6f}", f"{record.bits_per_token:.6f}",
                 f"{record.lr:.6g}"]
            )


def train(
    grids: Sequence[VoxelGrid],
    labels: Sequence[Optional[int]],
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_path: Optional[Union[str, Path]] = None,
    metrics_path: Optional[Union[str, Path]] = None,
    model: Optional[OctreeTransformer] = None,
) -> TrainResult:
    """Fit a model to the grids with Adam and a linear warmup.

    params:
        grids: training shapes.
        labels: class label per shape, `None` for unconditional shapes.
        model_config: architecture of a fresh model; ignored when `model` is given.
        config: optimisation settings.
        checkpoint_path: where the final checkpoint goes, if anywhere.
        metrics_path: where the per-epoch CSV log goes, if anywhere.
        model: continue training this model instead of a fresh one.
    """
    torch.manual_seed(config.seed)
    if model is None:
        model = OctreeTransformer(model_config)
    model_config = model.config
    examples = prepare_examples(grids, labels, model_config, config)
    if not examples:
        raise EmptyDatasetError("every shape was filtered out")

    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    warmup_steps = max(1, round(config.warmup_fraction * total_steps))
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps
    )
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: warmup_factor(step, warmup_steps)
    )
    rng = np.random.default_rng(config.seed)
    history: list[TrainingRecord] = []
    step = 0
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        losses = []
        lr = optimizer.param_groups[0]["lr"]
        for start in range(0, len(order), config.batch_size):
            if step >= total_steps:
                break
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            for index in batch:
                sequence = _draw_sequence(examples[index], rng, model_config, config)
                loss = sequence_loss(model, sequence, config.alpha) / len(batch)
                if not torch.isfinite(loss):
                    raise NonFiniteError(f"loss became {loss.item()} at step {step}")
                loss.backward()
                batch_loss += loss.item()
            lr = optimizer.param_groups[0]["lr"]
            optimizer.step()
            scheduler.step()
            step += 1
            losses.append(batch_loss)
            logger.debug(f"step {step}: loss {batch_loss:.4f}, lr {lr:.3g}")
        bpt = bits_per_token(model, [example.sequence for example in examples])
        record = TrainingRecord(
            epoch=epoch,
            step=step,
            loss=float(np.mean(losses)) if losses else float("nan"),
            bits_per_token=bpt,
            lr=lr,
        )
        history.append(record)
        logger.info(f"epoch {epoch}: loss {record.loss:.4f}, {bpt:.4f} bits/token")
        if step >= total_steps:
            break

    model.eval()
    if metrics_path is not None:
        write_metrics(history, metrics_path)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model=model, history=history, examples=examples)
