"""
Procedural shape corpora.

Shapes are unions of 1 to `max_primitives` axis-aligned primitives of a single kind; the
class label of a shape is the index of its primitive kind (box 0, sphere 1, cylinder 2).
A voxel is full when its center lies inside a primitive.

A corpus directory holds one OCTV file per shape and a `manifest.csv` with the filename,
class, kind and primitive parameters of every shape.

Example:
    ```python
    from octoseq.datasets import sphere_grid

    grid = sphere_grid(8, center=(4.0, 4.0, 4.0), radius=2.0)
    assert grid.occupancy[4, 4, 4] and not grid.occupancy[0, 0, 0]
    ```
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from octoseq.config import DatasetSpec
from octoseq.custom_types import ShapeKind
from octoseq.exceptions import EmptyDatasetError
from octoseq.logger import logger
from octoseq.utils import derive_seed
from octoseq.voxels import VoxelGrid

PRIMITIVE_KINDS = (ShapeKind.BOX, ShapeKind.SPHERE, ShapeKind.CYLINDER)
MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("filename", "class", "kind", "primitives")


def voxel_centers(resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center coordinates broadcastable against `[z, y, x]` grids."""
    axis = np.arange(resolution) + 0.5
    return axis[None, None, :], axis[None, :, None], axis[:, None, None]


def box_grid(resolution: int, low: tuple[float, ...], high: tuple[float, ...]) -> VoxelGrid:
    x, y, z = voxel_centers(resolution)
    inside = (
        (x >= low[0]) & (x <= high[0])
        & (y >= low[1]) & (y <= high[1])
        & (z >= low[2]) & (z <= high[2])
    )
    return VoxelGrid(inside)


def sphere_grid(resolution: int, center: tuple[float, ...], radius: float) -> VoxelGrid:
    x, y, z = voxel_centers(resolution)
    inside = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= radius**2
    return VoxelGrid(inside)


def cylinder_grid(
    resolution: int, center: tuple[float, ...], radius: float, half_length: float, axis: int
) -> VoxelGrid:
    """Cylinder whose axis is parallel to coordinate `axis` (0 = x, 1 = y, 2 = z)."""
    coords = voxel_centers(resolution)
    offsets = [c - center[i] for i, c in enumerate(coords)]
    along = offsets[axis]
    across = [offset for i, offset in enumerate(offsets) if i != axis]
    inside = (across[0] ** 2 + across[1] ** 2 <= radius**2) & (np.abs(along) <= half_length)
    return VoxelGrid(inside)


def _random_primitive(kind: ShapeKind, resolution: int, rng: np.random.Generator) -> dict:
    center = rng.uniform(0.3 * resolution, 0.7 * resolution, size=3).round(3).tolist()
    if kind == ShapeKind.BOX:
        half = rng.uniform(0.1 * resolution, 0.3 * resolution, size=3).round(3)
        return {
            "low": [c - h for c, h in zip(center, half.tolist())],
            "high": [c + h for c, h in zip(center, half.tolist())],
        }
    radius = round(float(rng.uniform(0.1 * resolution, 0.3 * resolution)), 3)
    if kind == ShapeKind.SPHERE:
        return {"center": center, "radius": radius}
    return {
        "center": center,
        "radius": radius,
        "half_length": round(float(rng.uniform(0.1 * resolution, 0.35 * resolution)), 3),
        "axis": int(rng.integers(3)),
    }


def primitive_grid(kind: ShapeKind, resolution: int, parameters: dict) -> VoxelGrid:
    if kind == ShapeKind.BOX:
        return box_grid(resolution, parameters["low"], parameters["high"])
    if kind == ShapeKind.SPHERE:
        return sphere_grid(resolution, parameters["center"], parameters["radius"])
    if kind == ShapeKind.CYLINDER:
        return cylinder_grid(
            resolution,
            parameters["center"],
            parameters["radius"],
            parameters["half_length"],
            parameters["axis"],
        )
    raise ValueError(f"{kind} is not a primitive kind")


@dataclass
class GeneratedShape:
    grid: VoxelGrid
    label: int
    kind: ShapeKind
    primitives: list[dict] = field(default_factory=list)


def generate_shape(spec: DatasetSpec, index: int) -> GeneratedShape:
    """Shape `index` of the corpus described by `spec`."""
    rng = np.random.default_rng(derive_seed(spec.seed, index))
    kind = spec.kind
    if kind == ShapeKind.UNION:
        kind = PRIMITIVE_KINDS[int(rng.integers(len(PRIMITIVE_KINDS)))]
    count = int(rng.integers(1, spec.max_primitives + 1))
    primitives = [_random_primitive(kind, spec.resolution, rng) for _ in range(count)]
    occupancy = np.zeros((spec.resolution,) * 3, dtype=bool)
    for parameters in primitives:
        occupancy |= primitive_grid(kind, spec.resolution, parameters).occupancy
    return GeneratedShape(
        grid=VoxelGrid(occupancy),
        label=PRIMITIVE_KINDS.index(kind),
        kind=kind,
        primitives=primitives,
    )


def generate_dataset(spec: DatasetSpec) -> list[GeneratedShape]:
    return [generate_shape(spec, index) for index in range(spec.count)]


def make_dataset(spec: DatasetSpec, directory: Union[str, Path]) -> list[Path]:
    """Write the corpus of `spec` into `directory`; returns the OCTV paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(directory / MANIFEST_NAME, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_COLUMNS)
        for index, shape in enumerate(generate_dataset(spec)):
            path = directory / f"shape_{index:05d}.octv"
            shape.grid.save(path)
            writer.writerow(
                [path.name, shape.label, shape.kind.value, json.dumps(shape.primitives)]
            )
            paths.append(path)
    logger.info(f"wrote {len(paths)} shapes to {directory}")
    return paths


@dataclass
class CorpusEntry:
    path: Path
    grid: VoxelGrid
    label: Optional[int] = None


def load_corpus(directory: Union[str, Path]) -> list[CorpusEntry]:
    """Read every OCTV file of `directory`, with labels from its manifest when present."""
    directory = Path(directory)
    labels: dict[str, Optional[int]] = {}
    manifest = directory / MANIFEST_NAME
    if manifest.exists():
        with open(manifest, newline="") as handle:
            for row in csv.DictReader(handle):
                labels[row["filename"]] = int(row["class"]) if row["class"] else None
    entries = [
        CorpusEntry(path=path, grid=VoxelGrid.load(path), label=labels.get(path.name))
        for path in sorted(directory.glob("*.octv"))
    ]
    if not entries:
        raise EmptyDatasetError(f"no OCTV files in {directory}")
    logger.debug(f"loaded {len(entries)} shapes from {directory}")
    return entries
