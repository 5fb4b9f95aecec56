"""
Octrees and their breadth-first token sequences.

An octree is built by recursively subdividing every cell that holds both empty and full
voxels. The root is always subdivided, so every sequence starts with exactly 8 depth-1
tokens. Children of a cell are numbered `4 * z + 2 * y + x` from the bits of their offset
inside the parent.

A sequence enumerates the cell values level by level. Mixed cells are the only cells with
children and they always have 8, so level sizes follow from the values alone:

Example:
    ```python
    from octoseq.octree import build_octree, delinearize, linearize
    from octoseq.voxels import VoxelGrid

    grid = VoxelGrid.empty(4)
    occupancy = grid.occupancy.copy()
    occupancy[0, 0, 0] = True
    sequence = linearize(build_octree(VoxelGrid(occupancy)))
    assert len(sequence) == 16
    assert sequence.values[:8].tolist() == [2, 1, 1, 1, 1, 1, 1, 1]
    assert delinearize(sequence.values) == build_octree(VoxelGrid(occupancy))
    ```

Every token also carries a spatial id per axis. Ids enumerate the cells along one axis
from coarse to fine, `id(d, i) = 2**d - 2 + i`, so ids of different depths never collide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from octoseq.custom_types import CellValue
from octoseq.exceptions import FormatError, InvalidTreeError, MalformedSequenceError
from octoseq.voxels import VoxelGrid

CHILD_OFFSETS = np.array([[k & 1, (k >> 1) & 1, (k >> 2) & 1] for k in range(8)], dtype=np.int64)
"""Offset `(x, y, z)` of child `k` inside its parent."""

END = -1
"""Spatial id marking "no successor" in successor position arrays."""

SEQUENCE_MAGIC = "#octoseq"
SEQUENCE_VERSION = "v1"

EMPTY, MIXED, FULL = int(CellValue.EMPTY), int(CellValue.MIXED), int(CellValue.FULL)


def spatial_ids(depth: int, coords: Sequence[int]) -> tuple[int, int, int]:
    """Per-axis spatial ids of the cell at `coords` on level `depth`.

    Example:
        ```python
        from octoseq.octree import spatial_ids

        assert spatial_ids(2, (3, 0, 1)) == (5, 2, 3)
        assert spatial_ids(3, (0, 7, 0)) == (6, 13, 6)
        ```
    """
    size = 1 << depth
    if depth < 1 or len(coords) != 3 or any(not 0 <= int(c) < size for c in coords):
        raise FormatError(f"coords {tuple(coords)} are outside level {depth}")
    offset = size - 2
    x, y, z = (offset + int(c) for c in coords)
    return x, y, z


def spatial_id_array(depth: int, coords: np.ndarray) -> np.ndarray:
    return np.asarray(coords, dtype=np.int64) + ((1 << depth) - 2)


def _child_coords(parent_coords: np.ndarray) -> np.ndarray:
    return (2 * parent_coords[:, None, :] + CHILD_OFFSETS[None]).reshape(-1, 3)


def _geometry(levels: Sequence[np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Cell coordinates and parent indices implied by per-level values."""
    coords: list[np.ndarray] = []
    parents: list[np.ndarray] = []
    parent_coords = np.zeros((1, 3), dtype=np.int64)
    parent_index = np.array([-1], dtype=np.int64)
    offset = 0
    for depth, level in enumerate(levels, start=1):
        expected = 8 * len(parent_coords)
        if len(level) != expected:
            raise MalformedSequenceError(
                f"level {depth} has {len(level)} tokens, expected {expected}",
                offset + min(len(level), expected),
            )
        level_coords = _child_coords(parent_coords)
        coords.append(level_coords)
        parents.append(np.repeat(parent_index, 8))
        mixed = np.flatnonzero(np.asarray(level) == MIXED)
        parent_coords, parent_index = level_coords[mixed], mixed
        offset += len(level)
    return coords, parents


@dataclass(eq=False)
class Octree:
    """Octree stored level by level; index 0 holds depth 1 (the root is implicit).

    Attributes:
        values: per level, the `CellValue` codes of its cells.
        coords: per level, `(n, 3)` integer `(x, y, z)` cell indices at that depth.
        parents: per level, the index of each cell's parent in the previous level
            (`-1` for depth 1, whose parent is the root).
    """

    values: list[np.ndarray]
    coords: list[np.ndarray] = field(default_factory=list)
    parents: list[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.values)

    @property
    def is_open(self) -> bool:
        """Whether the deepest level still holds MIXED cells without children."""
        return bool(self.values) and bool((self.values[-1] == MIXED).any())

    def level_sizes(self) -> list[int]:
        return [len(level) for level in self.values]

    def mixed_counts(self) -> list[int]:
        return [int(np.count_nonzero(level == MIXED)) for level in self.values]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Octree):
            return NotImplemented
        if self.depth != other.depth:
            return False
        return all(
            np.array_equal(a, b)
            for mine, theirs in (
                (self.values, other.values),
                (self.coords, other.coords),
                (self.parents, other.parents),
            )
            for a, b in zip(mine, theirs)
        )

    __hash__ = None  # type: ignore[assignment]


def octree_from_levels(levels: Sequence[np.ndarray]) -> Octree:
    values = [np.asarray(level, dtype=np.int8) for level in levels]
    coords, parents = _geometry(values)
    return Octree(values=values, coords=coords, parents=parents)


def build_octree(grid: VoxelGrid) -> Octree:
    """Subdivide `grid` into an octree; leaves are uniform regions."""
    if not isinstance(grid, VoxelGrid):
        raise FormatError(f"expected a VoxelGrid, got {type(grid).__name__}")
    resolution, occupancy = grid.resolution, grid.occupancy
    values: list[np.ndarray] = []
    coords: list[np.ndarray] = []
    parents: list[np.ndarray] = []
    parent_coords = np.zeros((1, 3), dtype=np.int64)
    parent_index = np.array([-1], dtype=np.int64)
    for depth in range(1, grid.depth + 1):
        cells, side = 1 << depth, resolution >> depth
        level_coords = _child_coords(parent_coords)
        counts = occupancy.reshape(cells, side, cells, side, cells, side).sum(axis=(1, 3, 5))
        filled = counts[level_coords[:, 2], level_coords[:, 1], level_coords[:, 0]]
        level = np.full(len(level_coords), MIXED, dtype=np.int8)
        level[filled == 0] = EMPTY
        level[filled == side**3] = FULL
        values.append(level)
        coords.append(level_coords)
        parents.append(np.repeat(parent_index, 8))
        mixed = np.flatnonzero(level == MIXED)
        if not len(mixed):
            break
        parent_coords, parent_index = level_coords[mixed], mixed
    return Octree(values=values, coords=coords, parents=parents)


def octree_to_voxels(
    tree: Octree, resolution: int, fill_open: Optional[CellValue] = None
) -> VoxelGrid:
    """Paint every leaf of `tree` uniformly into a grid of `resolution`.

    params:
        tree: octree to paint.
        resolution: output resolution, at least `2 ** tree.depth`.
        fill_open: how MIXED cells of the deepest level are painted when the tree is open
            (truncated at a level boundary). `None` rejects open trees.
    """
    if resolution < 2 or resolution & (resolution - 1):
        raise FormatError(f"resolution must be a power of two >= 2, got {resolution}")
    max_depth = resolution.bit_length() - 1
    if tree.depth > max_depth:
        raise InvalidTreeError(f"tree of depth {tree.depth} does not fit resolution {resolution}")
    occupancy = np.zeros((resolution,) * 3, dtype=bool)
    for depth, (level, level_coords) in enumerate(zip(tree.values, tree.coords), start=1):
        paint = level == FULL
        if depth == tree.depth:
            open_cells = level == MIXED
            if open_cells.any():
                if fill_open is None:
                    raise InvalidTreeError(f"MIXED leaf without children at depth {depth}")
                if fill_open == CellValue.FULL:
                    paint = paint | open_cells
        if not paint.any():
            continue
        coarse = np.zeros((1 << depth,) * 3, dtype=bool)
        painted = level_coords[paint]
        coarse[painted[:, 2], painted[:, 1], painted[:, 0]] = True
        side = resolution >> depth
        occupancy |= coarse.repeat(side, axis=0).repeat(side, axis=1).repeat(side, axis=2)
    return VoxelGrid(occupancy)


@dataclass(eq=False)
class TokenSequence:
    """Breadth-first linearization of an octree.

    Attributes:
        values: `(n,)` cell values; `0` marks tokens not sampled yet.
        depths: `(n,)` depth of every token, starting at 1.
        positions: `(n, 3)` per-axis spatial ids.
        class_label: optional class the shape belongs to.
    """

    values: np.ndarray
    depths: np.ndarray
    positions: np.ndarray
    class_label: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        self.depths = np.asarray(self.depths, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1, 3)
        if not len(self.values) == len(self.depths) == len(self.positions):
            raise FormatError("values, depths and positions must have equal length")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def depth(self) -> int:
        return int(self.depths[-1]) if len(self) else 0

    def level_bounds(self) -> list[tuple[int, int]]:
        """`(start, stop)` token range of every level, depth 1 first."""
        stops = np.searchsorted(self.depths, np.arange(1, self.depth + 1), side="right")
        starts = np.concatenate([[0], stops[:-1]])
        return [(int(start), int(stop)) for start, stop in zip(starts, stops)]

    def levels(self) -> list[np.ndarray]:
        return [self.values[start:stop] for start, stop in self.level_bounds()]

    def level_sizes(self) -> list[int]:
        return [stop - start for start, stop in self.level_bounds()]

    def mixed_counts(self) -> list[int]:
        return [int(np.count_nonzero(level == MIXED)) for level in self.levels()]

    def successor_positions(self) -> np.ndarray:
        """Spatial ids of every token's successor; `END` rows where there is none.

        The successor of the last token is the first child of the first MIXED token of the
        deepest level, which only exists for open (truncated) sequences.
        """
        successors = np.full((len(self), 3), END, dtype=np.int64)
        if not len(self):
            return successors
        successors[:-1] = self.positions[1:]
        start, stop = self.level_bounds()[-1]
        mixed = np.flatnonzero(self.values[start:stop] == MIXED)
        if len(mixed):
            depth = self.depth
            coords = self.positions[start + mixed[0]] - ((1 << depth) - 2)
            successors[-1] = spatial_id_array(depth + 1, 2 * coords)
        return successors

    def truncate(self, depth: int) -> TokenSequence:
        """The whole-level prefix holding depths `1..depth`."""
        stop = int(np.searchsorted(self.depths, depth, side="right"))
        return TokenSequence(
            values=self.values[:stop].copy(),
            depths=self.depths[:stop].copy(),
            positions=self.positions[:stop].copy(),
            class_label=self.class_label,
        )

    def copy(self) -> TokenSequence:
        return self.truncate(self.depth)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.class_label == other.class_label
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.depths, other.depths)
            and np.array_equal(self.positions, other.positions)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_text(self, resolution: Optional[int] = None) -> str:
        label = "none" if self.class_label is None else str(self.class_label)
        header = f"{SEQUENCE_MAGIC} {SEQUENCE_VERSION} class={label}"
        if resolution is not None:
            header += f" resolution={resolution}"
        rows = [
            f"{value} {depth} {x} {y} {z}"
            for value, depth, (x, y, z) in zip(
                self.values.tolist(), self.depths.tolist(), self.positions.tolist()
            )
        ]
        return "\n".join([header, *rows]) + "\n"


def sequence_from_levels(
    levels: Sequence[np.ndarray], class_label: Optional[int] = None
) -> TokenSequence:
    """Assemble a sequence from per-level values, recomputing every spatial id."""
    coords, _ = _geometry(levels)
    if not levels:
        return TokenSequence(
            values=np.zeros(0), depths=np.zeros(0), positions=np.zeros((0, 3)),
            class_label=class_label,
        )
    return TokenSequence(
        values=np.concatenate(levels),
        depths=np.concatenate(
            [np.full(len(level), depth) for depth, level in enumerate(levels, start=1)]
        ),
        positions=np.concatenate(
            [spatial_id_array(depth, c) for depth, c in enumerate(coords, start=1)]
        ),
        class_label=class_label,
    )


def linearize(tree: Octree, class_label: Optional[int] = None) -> TokenSequence:
    return sequence_from_levels(tree.values, class_label=class_label)


def split_levels(values: Sequence[int], allow_open: bool = False) -> list[np.ndarray]:
    """Cut a value sequence into its levels, validating the counting rule."""
    values = np.asarray(values, dtype=np.int64)
    invalid = np.flatnonzero(~np.isin(values, (EMPTY, MIXED, FULL)))
    if len(invalid):
        index = int(invalid[0])
        raise MalformedSequenceError(f"invalid cell value {values[index]}", index)
    levels: list[np.ndarray] = []
    start, expected, total = 0, 8, len(values)
    while expected:
        stop = start + expected
        if stop > total:
            if allow_open and start == total and levels:
                break
            raise MalformedSequenceError(
                f"level {len(levels) + 1} needs {expected} tokens, {total - start} left", total
            )
        level = values[start:stop].astype(np.int8)
        levels.append(level)
        expected = 8 * int(np.count_nonzero(level == MIXED))
        start = stop
    if start < total:
        raise MalformedSequenceError(f"{total - start} tokens after the last level", start)
    return levels


def delinearize(values: Sequence[int], allow_open: bool = False) -> Octree:
    """Rebuild the octree encoded by a breadth-first value sequence.

    params:
        values: token values in sequence order.
        allow_open: accept sequences that stop exactly at a level boundary while the last
            level still holds MIXED cells.
    """
    return octree_from_levels(split_levels(values, allow_open=allow_open))


def parse_sequence_text(text: str) -> tuple[TokenSequence, Optional[int]]:
    """Parse the line oriented sequence format; returns the sequence and its resolution."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise FormatError("empty sequence file")
    header = lines[0].split()
    if header[:2] != [SEQUENCE_MAGIC, SEQUENCE_VERSION]:
        raise FormatError(f"bad sequence header {lines[0]!r}")
    fields = dict(item.split("=", 1) for item in header[2:] if "=" in item)
    try:
        label = None if fields.get("class", "none") == "none" else int(fields["class"])
        resolution = int(fields["resolution"]) if "resolution" in fields else None
        rows = np.array(
            [[int(part) for part in line.split()] for line in lines[1:]], dtype=np.int64
        )
    except ValueError as error:
        raise FormatError(f"bad sequence file: {error}") from None
    if len(rows) and rows.shape[1] != 5:
        raise FormatError("every token line needs `value depth idx idy idz`")
    rows = rows.reshape(-1, 5)
    expected = linearize(delinearize(rows[:, 0], allow_open=True), class_label=label)
    if not (
        np.array_equal(expected.depths, rows[:, 1])
        and np.array_equal(expected.positions, rows[:, 2:])
    ):
        raise FormatError("token depths or spatial ids disagree with the values")
    return expected, resolution


def save_sequence(
    sequence: TokenSequence, path: Union[str, Path], resolution: Optional[int] = None
) -> None:
    Path(path).write_text(sequence.to_text(resolution=resolution))


def load_sequence(path: Union[str, Path]) -> tuple[TokenSequence, Optional[int]]:
    return parse_sequence_text(Path(path).read_text())
