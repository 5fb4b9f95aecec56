"""
Binary voxel grids and the OCTV file format.

A `VoxelGrid` is a cubic occupancy grid whose resolution is a power of two. Occupancy is
kept as a boolean numpy array indexed `[z, y, x]`, so flattening it in C order walks
x fastest, then y, then z. That is also the bit order of OCTV files.

Example:
    ```python
    import numpy as np
    from octoseq.voxels import VoxelGrid

    grid = VoxelGrid.empty(4)
    occupancy = grid.occupancy.copy()
    occupancy[0, 0, 0] = True
    grid = VoxelGrid(occupancy)
    assert VoxelGrid.from_bytes(grid.to_bytes()) == grid
    ```

OCTV layout: magic `OCTV`, version byte `1`, little-endian u32 resolution, then
`ceil(res**3 / 8)` bytes of occupancy bits, bit 0 of each byte first.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from octoseq.exceptions import FormatError

OCTV_MAGIC = b"OCTV"
OCTV_VERSION = 1
_HEADER = struct.Struct("<4sBI")


class VoxelGrid:
    """Cubic binary occupancy grid.

    Attributes:
        occupancy: boolean array of shape `(res, res, res)` indexed `[z, y, x]`.
    """

    __slots__ = ("occupancy",)

    def __init__(self, occupancy: np.ndarray):
        occupancy = np.asarray(occupancy)
        if occupancy.ndim != 3 or len(set(occupancy.shape)) != 1:
            raise FormatError(f"voxel grid must be cubic, got shape {occupancy.shape}")
        resolution = occupancy.shape[0]
        if resolution < 2 or resolution & (resolution - 1):
            raise FormatError(f"resolution must be a power of two >= 2, got {resolution}")
        self.occupancy = np.ascontiguousarray(occupancy, dtype=bool)

    @classmethod
    def empty(cls, resolution: int) -> VoxelGrid:
        return cls(np.zeros((resolution,) * 3, dtype=bool))

    @classmethod
    def full(cls, resolution: int) -> VoxelGrid:
        return cls(np.ones((resolution,) * 3, dtype=bool))

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @property
    def depth(self) -> int:
        """Number of octree levels needed to reach single voxels."""
        return self.resolution.bit_length() - 1

    def count(self) -> int:
        return int(self.occupancy.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return bool(np.array_equal(self.occupancy, other.occupancy))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"VoxelGrid(resolution={self.resolution}, full={self.count()})"

    def to_bytes(self) -> bytes:
        bits = np.packbits(self.occupancy.ravel(), bitorder="little")
        return _HEADER.pack(OCTV_MAGIC, OCTV_VERSION, self.resolution) + bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> VoxelGrid:
        if len(data) < _HEADER.size:
            raise FormatError("OCTV data shorter than its header")
        magic, version, resolution = _HEADER.unpack_from(data)
        if magic != OCTV_MAGIC:
            raise FormatError(f"bad OCTV magic {magic!r}")
        if version != OCTV_VERSION:
            raise FormatError(f"unsupported OCTV version {version}")
        if resolution < 2 or resolution & (resolution - 1):
            raise FormatError(f"resolution must be a power of two >= 2, got {resolution}")
        voxels = resolution**3
        payload = data[_HEADER.size :]
        if len(payload) != (voxels + 7) // 8:
            raise FormatError(
                f"OCTV payload has {len(payload)} bytes, expected {(voxels + 7) // 8}"
            )
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
        return cls(bits[:voxels].astype(bool).reshape((resolution,) * 3))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> VoxelGrid:
        return cls.from_bytes(Path(path).read_bytes())
