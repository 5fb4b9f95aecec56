class BaseOctoseqException(Exception):
    """Base exception for octoseq."""


class FormatError(BaseOctoseqException, ValueError):
    """A voxel file, sequence file, scheme or identifier is malformed."""


class MalformedSequenceError(FormatError):
    """A value sequence is not a consistent breadth-first octree encoding."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (at index {index})")
        self.index = index


class PrefixError(MalformedSequenceError):
    """A superresolution prefix does not end exactly at a level boundary."""


class SchemeError(FormatError):
    """A compression scheme is malformed or does not fit the octree depth."""


class InvalidTreeError(BaseOctoseqException, ValueError):
    """An octree cannot be painted into a voxel grid."""


class ShapeMismatchError(BaseOctoseqException, ValueError):
    """Tensor shapes, labels or checkpoint contents disagree with the configuration."""


class CheckpointError(FormatError):
    """A checkpoint file cannot be read."""


class ChecksumError(CheckpointError):
    """A checkpoint file is truncated or corrupted."""


class CheckpointVersionError(CheckpointError):
    """A checkpoint file was written by an unsupported format version."""


class SequenceTooLongError(BaseOctoseqException, OverflowError):
    """A latent sequence does not fit into the transformer's positions."""


class EmptyDatasetError(BaseOctoseqException, ValueError):
    """Nothing is left to train on, count or compare."""


class NonFiniteError(BaseOctoseqException, ArithmeticError):
    """A loss or slot vector became NaN or infinite."""
