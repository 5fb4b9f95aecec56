"""
Qualitative export of voxel grids.

`obj` writes one unit cube (8 vertices, 12 outward facing triangles) per full voxel,
without welding shared vertices. `slices` writes one binary PGM per z slice, full voxels
white.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from octoseq.custom_types import ExportFormat
from octoseq.exceptions import FormatError
from octoseq.logger import logger
from octoseq.octree import CHILD_OFFSETS
from octoseq.voxels import VoxelGrid

CUBE_TRIANGLES = np.array(
    [
        [0, 2, 3], [0, 3, 1],  # z = 0
        [4, 5, 7], [4, 7, 6],  # z = 1
        [0, 1, 5], [0, 5, 4],  # y = 0
        [2, 6, 7], [2, 7, 3],  # y = 1
        [0, 4, 6], [0, 6, 2],  # x = 0
        [1, 3, 7], [1, 7, 5],  # x = 1
    ],
    dtype=np.int64,
)


def obj_text(grid: VoxelGrid) -> str:
    voxels = np.argwhere(grid.occupancy)[:, ::-1]
    vertices = (voxels[:, None, :] + CHILD_OFFSETS[None]).reshape(-1, 3)
    faces = (CUBE_TRIANGLES[None] + 8 * np.arange(len(voxels))[:, None, None]).reshape(-1, 3) + 1
    lines = [f"# {len(voxels)} voxels at resolution {grid.resolution}"]
    lines += [f"v {x} {y} {z}" for x, y, z in vertices.tolist()]
    lines += [f"f {a} {b} {c}" for a, b, c in faces.tolist()]
    return "\n".join(lines) + "\n"


def write_obj(grid: VoxelGrid, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(obj_text(grid))
    return path


def pgm_bytes(image: np.ndarray) -> bytes:
    height, width = image.shape
    pixels = np.where(image, 255, 0).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes()


def write_slices(grid: VoxelGrid, directory: Union[str, Path]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for z, image in enumerate(grid.occupancy):
        path = directory / f"slice_{z:04d}.pgm"
        path.write_bytes(pgm_bytes(image))
        paths.append(path)
    return paths


def export_grid(grid: VoxelGrid, format: str, out: Union[str, Path]) -> list[Path]:
    """Export `grid` as `obj` (a file) or `slices` (a directory of images)."""
    try:
        kind = ExportFormat(format)
    except ValueError:
        raise FormatError(f"unknown export format {format!r}") from None
    paths = [write_obj(grid, out)] if kind == ExportFormat.OBJ else write_slices(grid, out)
    logger.info(f"exported {grid!r} to {out}")
    return paths
