"""
Configuration models. Every model is a frozen pydantic model, so invalid values fail at
construction time.

A run can be described by one JSON file holding a `RunConfig`; every section is optional:

Example:
    ```python
    from octoseq.config import RunConfig

    config = RunConfig.model_validate_json(
        '{"model": {"width": 32, "heads": 2}, "train": {"epochs": 3}}'
    )
    assert config.model.width == 32
    assert config.train.epochs == 3
    assert config.sample.temperature == 0.8
    ```
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Optional, Union

from annotated_types import Interval
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, model_validator

from octoseq.custom_types import (
    Depth,
    NonNegativeNumber,
    PositiveNumber,
    Resolution,
    ShapeKind,
    UnitInterval,
)
from octoseq.exceptions import SchemeError
from octoseq.scheme import CompressionScheme, parse_scheme


class _Config(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ModelConfig(_Config):
    """Architecture of the octree transformer.

    Attributes:
        layers: number of transformer blocks.
        heads: attention heads per block.
        width: embedding and latent width `D`.
        ff_width: hidden width of the feed-forward layers.
        max_positions: longest transformer input, class token included.
        num_classes: size of the class table; the last label means unconditional.
        scheme: compression scheme text or preset name.
        max_depth: deepest octree level the model can represent.
        dropout: dropout rate inside transformer blocks.
    """

    layers: PositiveInt = 2
    heads: PositiveInt = 4
    width: PositiveInt = 64
    ff_width: PositiveInt = 256
    max_positions: PositiveInt = 512
    num_classes: PositiveInt = 4
    scheme: str = "0/1,0/1,0/2,0/4,0/8,1/4"
    max_depth: Depth = 5
    dropout: Annotated[float, Interval(ge=0, lt=1)] = 0.0

    @model_validator(mode="after")
    def validate_shapes(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by {self.heads} heads")
        try:
            parse_scheme(self.scheme)
        except SchemeError as error:
            raise ValueError(str(error)) from None
        return self

    @property
    def compression(self) -> CompressionScheme:
        return parse_scheme(self.scheme)

    @property
    def resolution(self) -> int:
        return 1 << self.max_depth

    @property
    def unconditional_label(self) -> int:
        return self.num_classes - 1


class TrainConfig(_Config):
    """Optimisation and data settings.

    Attributes:
        learning_rate: peak Adam learning rate.
        warmup_fraction: share of the steps spent ramping the learning rate up from zero.
        epochs: passes over the dataset.
        batch_size: shapes whose gradients are accumulated per optimizer step.
        alpha: depth weight factor; depth `d` is weighted `alpha ** (d - 1)` before
            normalisation. `1` disables weighting.
        max_length: shapes compressing to more latents are left out.
        temperature: default sampling temperature recorded alongside the run.
        seed: seeds parameter init, shuffling and augmentation.
        control_points: interior control points of the augmentation warp.
        scale_range: range the warp segment slopes are drawn from.
        augment_probability: chance that a shape is warped when it is drawn.
        betas: Adam betas.
        eps: Adam epsilon.
        max_steps: optional cap on optimizer steps.
    """

    learning_rate: NonNegativeNumber = 1e-3
    warmup_fraction: UnitInterval = 0.1
    epochs: PositiveInt = 1
    batch_size: PositiveInt = 1
    alpha: PositiveNumber = 1.0
    max_length: PositiveInt = 3400
    temperature: NonNegativeNumber = 0.8
    seed: NonNegativeInt = 0
    control_points: NonNegativeInt = 2
    scale_range: tuple[PositiveNumber, PositiveNumber] = (0.75, 1.25)
    augment_probability: Annotated[float, Interval(ge=0, le=1)] = 0.5
    betas: tuple[Annotated[float, Interval(ge=0, lt=1)], Annotated[float, Interval(ge=0, lt=1)]] = (
        0.9,
        0.999,
    )
    eps: PositiveNumber = 1e-8
    max_steps: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def validate_scale_range(self):
        low, high = self.scale_range
        if low > high:
            raise ValueError(f"scale range ({low}, {high}) is empty")
        return self


class SampleConfig(_Config):
    """Sampling settings.

    Attributes:
        temperature: logits are divided by it before the softmax; `0` means argmax.
        max_depth: deepest level to generate; defaults to the model's depth.
        class_label: class to condition on; `None` samples unconditionally.
        seed: seed of the first sample; sample `i` uses `seed + i`.
        count: number of samples.
    """

    temperature: NonNegativeNumber = 0.8
    max_depth: Optional[Depth] = None
    class_label: Optional[NonNegativeInt] = None
    seed: NonNegativeInt = 0
    count: PositiveInt = 1


class DatasetSpec(_Config):
    """Procedural dataset description.

    Attributes:
        kind: primitive family; `union` mixes all of them.
        resolution: grid resolution of every shape.
        count: number of shapes.
        seed: dataset seed, shape `i` derives its own seed from it.
        max_primitives: shapes are unions of 1 to `max_primitives` primitives.
    """

    kind: ShapeKind = ShapeKind.UNION
    resolution: Resolution = 16
    count: PositiveInt = 10
    seed: NonNegativeInt = 0
    max_primitives: PositiveInt = 3


class RunConfig(_Config):
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sample: SampleConfig = Field(default_factory=SampleConfig)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)

    @classmethod
    def load(cls, path: Union[str, Path]) -> RunConfig:
        return cls.model_validate_json(Path(path).read_text())
