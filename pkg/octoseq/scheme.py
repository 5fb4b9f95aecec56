"""
Compression schemes and the token to latent group partition they induce.

A scheme assigns a pair `a/b` to every octree level. For level `l`, subtrees of depth `a`
are collapsed into their depth `l - a` ancestor, and `b` consecutive ancestors are merged
into one latent. `0/1` leaves the level uncompressed. Schemes shorter than the tree repeat
their last entry.

Example:
    ```python
    from octoseq.scheme import expected_latent_count, parse_scheme

    scheme = parse_scheme("0/4")
    assert expected_latent_count([8], scheme) == [2]
    assert parse_scheme("baseline").to_text() == "0/1,0/1,0/2,0/4,0/8,1/4"
    ```

Depth `l - a` cells are taken in sequence order and cut into aligned runs of `b`. A group
covers its ancestors' subtrees down to depth `l` and generates the depth `l` tokens among
them; a group whose ancestors are all leaves still yields a latent but generates nothing.
Level sizes are multiples of 8, so runs never need padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, ValidationError, model_validator

from octoseq.custom_types import CellValue, GroupSize
from octoseq.exceptions import SchemeError
from octoseq.octree import TokenSequence

SCHEME_PRESETS: dict[str, str] = {
    "baseline": "0/1,0/1,0/2,0/4,0/8,1/4",
    "later": "0/1,0/1,0/1,0/1,0/8,1/8",
    "stronger": "0/1,0/1,0/4,0/8,1/4,1/8",
}


class SchemeEntry(BaseModel):
    """Compression of one level.

    Attributes:
        collapse: depth `a` of the subtrees collapsed into their ancestor.
        group: number `b` of consecutive ancestors merged into one latent.
    """

    model_config = ConfigDict(frozen=True)

    collapse: NonNegativeInt = 0
    group: GroupSize = 1

    def __str__(self) -> str:
        return f"{self.collapse}/{self.group}"


class CompressionScheme(BaseModel):
    """Per-level compression, level 1 first."""

    model_config = ConfigDict(frozen=True)

    entries: tuple[SchemeEntry, ...]

    @model_validator(mode="after")
    def validate_collapse_depth(self):
        if not self.entries:
            raise ValueError("a scheme needs at least one entry")
        for level, entry in enumerate(self.entries, start=1):
            if entry.collapse >= level:
                raise ValueError(
                    f"level {level} cannot collapse subtrees of depth {entry.collapse}"
                )
        return self

    def entry(self, level: int) -> SchemeEntry:
        """Entry for `level`; deeper levels reuse the last entry."""
        if level < 1:
            raise SchemeError(f"levels start at 1, got {level}")
        return self.entries[min(level, len(self.entries)) - 1]

    def to_text(self) -> str:
        return ",".join(str(entry) for entry in self.entries)

    def __str__(self) -> str:
        return self.to_text()


def parse_scheme(text: str) -> CompressionScheme:
    """Parse `a/b[,a/b...]` or the name of a preset."""
    text = SCHEME_PRESETS.get(text.strip(), text)
    entries = []
    for part in text.split(","):
        pieces = part.strip().split("/")
        if len(pieces) != 2 or not all(piece.strip().isdigit() for piece in pieces):
            raise SchemeError(f"malformed scheme entry {part.strip()!r}, expected `a/b`")
        entries.append({"collapse": int(pieces[0]), "group": int(pieces[1])})
    try:
        return CompressionScheme(entries=entries)
    except ValidationError as error:
        raise SchemeError(f"invalid scheme {text!r}: {error.errors()[0]['msg']}") from None


@dataclass
class LevelLayout:
    """Groups generating one level.

    Every per-depth array is ordered like the sequence; local depth `r` is depth
    `level - a + r`, so local depth `a` holds the generated tokens.

    Attributes:
        level: depth of the generated tokens.
        collapse: `a` of the scheme entry.
        group: `b` of the scheme entry.
        cells: per local depth, global token indices covered by the groups.
        mixed: per local depth below `a`, which of those cells are MIXED.
        group_ids: per local depth, the group (counted within the level) of every cell.
        num_groups: number of latents this level contributes.
    """

    level: int
    collapse: int
    group: int
    cells: list[np.ndarray]
    mixed: list[np.ndarray]
    group_ids: list[np.ndarray]
    num_groups: int

    @property
    def targets(self) -> np.ndarray:
        """Global indices of the generated tokens in generation order."""
        return self.cells[self.collapse]

    @property
    def target_groups(self) -> np.ndarray:
        return self.group_ids[self.collapse]

    def select(self, group: int) -> LevelLayout:
        """Layout of a single group of this level."""
        if not 0 <= group < self.num_groups:
            raise IndexError(f"level {self.level} has no group {group}")
        keep = [ids == group for ids in self.group_ids]
        return LevelLayout(
            level=self.level,
            collapse=self.collapse,
            group=self.group,
            cells=[cells[k] for cells, k in zip(self.cells, keep)],
            mixed=[mixed[k] for mixed, k in zip(self.mixed, keep)],
            group_ids=[np.zeros(int(k.sum()), dtype=np.int64) for k in keep],
            num_groups=1,
        )


@dataclass
class GroupLayout:
    """Group partition of a whole sequence, level-major."""

    levels: list[LevelLayout]

    @property
    def num_groups(self) -> int:
        return sum(level.num_groups for level in self.levels)

    def group_counts(self) -> list[int]:
        return [level.num_groups for level in self.levels]

    def offsets(self) -> list[int]:
        """Index of the first latent of every level."""
        return np.concatenate([[0], np.cumsum(self.group_counts())[:-1]]).astype(int).tolist()

    def token_groups(self, length: int) -> np.ndarray:
        """Global group index of every generated token."""
        groups = np.full(length, -1, dtype=np.int64)
        for offset, level in zip(self.offsets(), self.levels):
            groups[level.targets] = offset + level.target_groups
        return groups


def plan_level(sequence: TokenSequence, level: int, entry: SchemeEntry) -> LevelLayout:
    """Partition the depth `level` tokens of `sequence` into groups of `entry`."""
    a, b = entry.collapse, entry.group
    if a >= level:
        raise SchemeError(f"level {level} cannot collapse subtrees of depth {a}")
    bounds = sequence.level_bounds()
    if level > len(bounds):
        raise SchemeError(f"sequence has no level {level}")
    cells, mixed, group_ids = [], [], []
    for local in range(a + 1):
        start, stop = bounds[level - a + local - 1]
        level_cells = np.arange(start, stop, dtype=np.int64)
        if local == 0:
            ids = np.arange(len(level_cells), dtype=np.int64) // b
        else:
            parent_groups = group_ids[-1][mixed[-1]]
            ids = np.repeat(parent_groups, 8)
        if len(ids) != len(level_cells):
            raise SchemeError(f"level {level - a + local} does not match its parents")
        cells.append(level_cells)
        group_ids.append(ids)
        if local < a:
            mixed.append(sequence.values[level_cells] == CellValue.MIXED)
    return LevelLayout(
        level=level,
        collapse=a,
        group=b,
        cells=cells,
        mixed=mixed,
        group_ids=group_ids,
        num_groups=-(-len(cells[0]) // b),
    )


def plan_groups(sequence: TokenSequence, scheme: CompressionScheme) -> GroupLayout:
    return GroupLayout(
        levels=[
            plan_level(sequence, level, scheme.entry(level))
            for level in range(1, sequence.depth + 1)
        ]
    )


def latent_counts_from_sizes(level_sizes: Sequence[int], scheme: CompressionScheme) -> list[int]:
    """Latents per level given the token count of every level."""
    counts = []
    for level, size in enumerate(level_sizes, start=1):
        if size <= 0:
            break
        entry = scheme.entry(level)
        ancestors = level_sizes[level - entry.collapse - 1]
        counts.append(-(-int(ancestors) // entry.group))
    return counts


def expected_latent_count(
    mixed_counts: Sequence[int], scheme: CompressionScheme
) -> list[int]:
    """Latents per level of a tree with the given MIXED count per level.

    Example:
        ```python
        from octoseq.scheme import expected_latent_count, parse_scheme

        # fully subdivided res-4 tree: 8 + 64 tokens
        assert expected_latent_count([8, 0], parse_scheme("0/8")) == [1, 8]
        assert expected_latent_count([8, 0], parse_scheme("0/1,1/8")) == [8, 1]
        ```
    """
    sizes = [8] + [8 * int(count) for count in mixed_counts[:-1]]
    return latent_counts_from_sizes(sizes, scheme)
