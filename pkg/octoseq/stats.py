"""
Corpus statistics: token and latent counts per resolution.

For every resolution the 90th percentile of the token count is taken per depth and the
percentiles are summed; latent counts follow from those per-depth counts under each scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from rich.table import Table

from octoseq.exceptions import EmptyDatasetError
from octoseq.octree import build_octree
from octoseq.scheme import CompressionScheme, latent_counts_from_sizes
from octoseq.voxels import VoxelGrid

PERCENTILE = 90


@dataclass
class ResolutionStatistics:
    resolution: int
    shapes: int
    level_tokens: list[int]
    latents: list[int] = field(default_factory=list)

    @property
    def tokens(self) -> int:
        return sum(self.level_tokens)


def percentile_level_sizes(level_sizes: Sequence[Sequence[int]]) -> list[int]:
    """Per-depth percentile of token counts; missing levels count as zero tokens."""
    depth = max(len(sizes) for sizes in level_sizes)
    table = np.zeros((len(level_sizes), depth), dtype=np.int64)
    for row, sizes in enumerate(level_sizes):
        table[row, : len(sizes)] = sizes
    return np.percentile(table, PERCENTILE, axis=0, method="higher").astype(np.int64).tolist()


def corpus_statistics(
    grids: Sequence[VoxelGrid], schemes: Sequence[CompressionScheme]
) -> list[ResolutionStatistics]:
    if not grids:
        raise EmptyDatasetError("statistics of an empty corpus")
    by_resolution: dict[int, list[list[int]]] = {}
    for grid in grids:
        by_resolution.setdefault(grid.resolution, []).append(build_octree(grid).level_sizes())
    rows = []
    for resolution in sorted(by_resolution):
        sizes = percentile_level_sizes(by_resolution[resolution])
        rows.append(
            ResolutionStatistics(
                resolution=resolution,
                shapes=len(by_resolution[resolution]),
                level_tokens=sizes,
                latents=[sum(latent_counts_from_sizes(sizes, scheme)) for scheme in schemes],
            )
        )
    return rows


def statistics_table(
    rows: Sequence[ResolutionStatistics], schemes: Sequence[CompressionScheme]
) -> Table:
    table = Table(title=f"Sequence lengths ({PERCENTILE}th percentile per depth)")
    table.add_column("Res", justify="right")
    table.add_column("Shapes", justify="right")
    table.add_column("Octree tokens", justify="right")
    for scheme in schemes:
        table.add_column(scheme.to_text(), justify="right")
    for row in rows:
        table.add_row(
            str(row.resolution), str(row.shapes), str(row.tokens), *map(str, row.latents)
        )
    return table
