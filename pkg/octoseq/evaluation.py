"""
Set-level metrics for generated shapes: coverage (COV) and minimum matching distance (MMD).

Both metrics are computed from a pairwise distance between shapes. The distance is
pluggable; `IoUDistance` compares voxel grids directly.

Example:
    ```python
    import numpy as np
    from octoseq.evaluation import IoUDistance, coverage, mmd
    from octoseq.voxels import VoxelGrid

    shapes = [VoxelGrid(np.random.default_rng(i).random((4, 4, 4)) > 0.5) for i in range(3)]
    assert coverage(shapes, shapes, IoUDistance()) == 100.0
    assert mmd(shapes, shapes, IoUDistance()) == 0.0
    ```
"""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import anyio
import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, NonNegativeInt

from octoseq.config import SampleConfig
from octoseq.exceptions import EmptyDatasetError, ShapeMismatchError
from octoseq.logger import logger
from octoseq.model import OctreeTransformer
from octoseq.sampler import sample_many
from octoseq.voxels import VoxelGrid


class BaseShapeDistance(BaseModel, ABC):
    """
    Distance between two voxel grids. Subclasses must be symmetric, zero on identical
    shapes and bounded to `[0, 1]`.

    Example:
        ```python
        from typing import Literal

        from octoseq.evaluation import BaseShapeDistance
        from octoseq.voxels import VoxelGrid


        class VolumeDistance(BaseShapeDistance):
            kind: Literal["volume"] = "volume"

            def distance(self, a: VoxelGrid, b: VoxelGrid) -> float:
                return abs(a.count() - b.count()) / a.resolution**3
        ```
    """

    model_config = ConfigDict(frozen=True)

    kind: str

    @abstractmethod
    def distance(self, a: VoxelGrid, b: VoxelGrid) -> float:
        """Distance between two grids of equal resolution."""

    def pairwise(self, rows: Sequence[VoxelGrid], columns: Sequence[VoxelGrid]) -> np.ndarray:
        return np.array([[self.distance(a, b) for b in columns] for a in rows], dtype=np.float64)


class IoUDistance(BaseShapeDistance):
    """`1 - |A and B| / |A or B|`; two empty grids are at distance 0."""

    kind: Literal["iou"] = "iou"

    def distance(self, a: VoxelGrid, b: VoxelGrid) -> float:
        if a.resolution != b.resolution:
            raise ShapeMismatchError(
                f"cannot compare resolutions {a.resolution} and {b.resolution}"
            )
        union = np.count_nonzero(a.occupancy | b.occupancy)
        if not union:
            return 0.0
        return 1.0 - np.count_nonzero(a.occupancy & b.occupancy) / union

    def pairwise(self, rows: Sequence[VoxelGrid], columns: Sequence[VoxelGrid]) -> np.ndarray:
        if len({grid.resolution for grid in (*rows, *columns)}) > 1:
            raise ShapeMismatchError("all shapes must share one resolution")
        if not len(rows) or not len(columns):
            return np.zeros((len(rows), len(columns)))
        a = np.stack([grid.occupancy.ravel() for grid in rows]).astype(np.int64)
        b = np.stack([grid.occupancy.ravel() for grid in columns]).astype(np.int64)
        intersection = a @ b.T
        union = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - intersection
        with np.errstate(invalid="ignore", divide="ignore"):
            distances = 1.0 - intersection / union
        return np.where(union == 0, 0.0, distances)


def _check_sets(generated: Sequence[VoxelGrid], reference: Sequence[VoxelGrid]) -> None:
    if not generated or not reference:
        raise EmptyDatasetError("coverage and MMD need nonempty generated and reference sets")


def coverage_from_distances(distances: np.ndarray) -> float:
    """COV from a `(generated, reference)` distance matrix; ties go to the lowest index."""
    matched = np.unique(np.argmin(distances, axis=1))
    return 100.0 * len(matched) / distances.shape[1]


def mmd_from_distances(distances: np.ndarray) -> float:
    return float(distances.min(axis=0).mean())


def coverage(
    generated: Sequence[VoxelGrid], reference: Sequence[VoxelGrid], distance: BaseShapeDistance
) -> float:
    """Percentage of reference shapes that are the nearest neighbour of a generated shape."""
    _check_sets(generated, reference)
    return coverage_from_distances(distance.pairwise(generated, reference))


def mmd(
    generated: Sequence[VoxelGrid], reference: Sequence[VoxelGrid], distance: BaseShapeDistance
) -> float:
    """Mean over reference shapes of the distance to the closest generated shape."""
    _check_sets(generated, reference)
    return mmd_from_distances(distance.pairwise(generated, reference))


class MetricsReport(BaseModel):
    """Outcome of one evaluation.

    Attributes:
        coverage: COV in percent.
        mmd: raw minimum matching distance.
        mmd_scaled: `mmd * 1e4`, the scale tables usually report.
        generated: number of generated shapes.
        reference: number of reference shapes.
        distance: kind of the shape distance.
        seed: sampling seed.
    """

    coverage: float
    mmd: NonNegativeFloat
    mmd_scaled: NonNegativeFloat
    generated: NonNegativeInt
    reference: NonNegativeInt
    distance: str
    seed: NonNegativeInt

    def write_csv(self, path: Union[str, Path]) -> None:
        row = self.model_dump()
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)


def evaluate_model(
    model: OctreeTransformer,
    reference: Sequence[VoxelGrid],
    multiplier: int,
    config: SampleConfig,
    distance: Optional[BaseShapeDistance] = None,
    generated: Optional[Sequence[VoxelGrid]] = None,
) -> MetricsReport:
    """Sample `multiplier * len(reference)` shapes and compare them to `reference`.

    params:
        model: trained model.
        reference: reference shapes, all at one resolution.
        multiplier: generated shapes per reference shape.
        config: sampling settings; `count` and `max_depth` are derived from the references.
        distance: shape distance, `IoUDistance` by default.
        generated: use these shapes instead of sampling.
    """
    if not reference:
        raise EmptyDatasetError("evaluation needs reference shapes")
    distance = distance or IoUDistance()
    if generated is None:
        depth = reference[0].depth
        sample_config = config.model_copy(
            update={"count": multiplier * len(reference), "max_depth": depth}
        )
        logger.info(f"sampling {sample_config.count} shapes at resolution {1 << depth}")
        results = anyio.run(sample_many, model, sample_config)
        generated = [result.grid for result in results]
    distances = distance.pairwise(generated, reference)
    value = mmd_from_distances(distances)
    report = MetricsReport(
        coverage=coverage_from_distances(distances),
        mmd=value,
        mmd_scaled=value * 1e4,
        generated=len(generated),
        reference=len(reference),
        distance=distance.kind,
        seed=config.seed,
    )
    logger.info(f"COV {report.coverage:.2f}%, MMD {report.mmd:.6f}")
    return report
