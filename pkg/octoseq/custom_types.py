from enum import IntEnum, auto
from typing import Annotated, Literal, Union

from annotated_types import Interval
from pydantic import AfterValidator

from octoseq.utils import StrEnum


class CellValue(IntEnum):
    """Token value of an octree cell. Code 0 is reserved for padding / not yet sampled."""

    EMPTY = 1
    """No voxel inside the cell is occupied."""
    MIXED = 2
    """The cell holds both empty and full voxels and has exactly 8 children."""
    FULL = 3
    """Every voxel inside the cell is occupied."""


class ShapeKind(StrEnum):
    BOX = auto()
    """Unions of axis-aligned boxes."""
    SPHERE = auto()
    """Unions of balls."""
    CYLINDER = auto()
    """Unions of axis-aligned cylinders."""
    UNION = auto()
    """Every shape picks one of the primitive kinds at random."""


class ExportFormat(StrEnum):
    OBJ = auto()
    """One unit cube per full voxel in a Wavefront OBJ file."""
    SLICES = auto()
    """One binary PGM image per z slice."""


def _power_of_two(value: int) -> int:
    if value < 2 or value & (value - 1):
        raise ValueError(f"resolution must be a power of two >= 2, got {value}")
    return value


Resolution = Annotated[int, AfterValidator(_power_of_two)]
GroupSize = Literal[1, 2, 4, 8]
Depth = Annotated[int, Interval(ge=1, le=16)]
UnitInterval = Annotated[float, Interval(gt=0, lt=1)]
PositiveNumber = Annotated[Union[int, float], Interval(gt=0)]
NonNegativeNumber = Annotated[Union[int, float], Interval(ge=0)]
