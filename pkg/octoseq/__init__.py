from octoseq.checkpoint import load_checkpoint, save_checkpoint
from octoseq.config import DatasetSpec, ModelConfig, RunConfig, SampleConfig, TrainConfig
from octoseq.custom_types import CellValue
from octoseq.evaluation import IoUDistance, MetricsReport, coverage, evaluate_model, mmd
from octoseq.model import OctreeTransformer
from octoseq.octree import Octree, TokenSequence, build_octree, delinearize, linearize
from octoseq.octree import octree_to_voxels
from octoseq.sampler import sample_many, sample_shape, superresolve
from octoseq.scheme import CompressionScheme, parse_scheme, plan_groups
from octoseq.training import bits_per_token, train
from octoseq.voxels import VoxelGrid

__all__ = [
    "CellValue",
    "CompressionScheme",
    "DatasetSpec",
    "IoUDistance",
    "MetricsReport",
    "ModelConfig",
    "Octree",
    "OctreeTransformer",
    "RunConfig",
    "SampleConfig",
    "TokenSequence",
    "TrainConfig",
    "VoxelGrid",
    "bits_per_token",
    "build_octree",
    "coverage",
    "delinearize",
    "evaluate_model",
    "linearize",
    "load_checkpoint",
    "mmd",
    "octree_to_voxels",
    "parse_scheme",
    "plan_groups",
    "sample_many",
    "sample_shape",
    "save_checkpoint",
    "superresolve",
    "train",
]

__version__ = "0.1.0"
