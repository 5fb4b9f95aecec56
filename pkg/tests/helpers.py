import numpy as np
import torch

from octoseq.config import ModelConfig
from octoseq.model import OctreeTransformer
from octoseq.octree import TokenSequence, build_octree, linearize
from octoseq.voxels import VoxelGrid


def random_grid(rng: np.random.Generator, resolution: int) -> VoxelGrid:
    """Blocky random shape with uniform regions at several scales and some voxel noise."""
    block = int(rng.choice([1, 2, 4])) if resolution >= 4 else 1
    cells = max(resolution // block, 1)
    coarse = rng.random((cells,) * 3) < rng.uniform(0.2, 0.8)
    occupancy = coarse.repeat(block, axis=0).repeat(block, axis=1).repeat(block, axis=2)
    noise = rng.random((resolution,) * 3) < rng.uniform(0.0, 0.05)
    return VoxelGrid(occupancy ^ noise)


def random_sequence(
    rng: np.random.Generator, resolution: int, class_label=None
) -> TokenSequence:
    return linearize(build_octree(random_grid(rng, resolution)), class_label=class_label)


def mixed_sequence(rng: np.random.Generator, resolution: int) -> TokenSequence:
    """Random sequence reaching single voxels, so every level is present."""
    while True:
        sequence = random_sequence(rng, resolution)
        if sequence.depth == resolution.bit_length() - 1:
            return sequence


def checkerboard(resolution: int) -> VoxelGrid:
    z, y, x = np.indices((resolution,) * 3)
    return VoxelGrid((x + y + z) % 2 == 0)


def small_model(
    max_depth: int = 3,
    scheme: str = "0/1,0/2",
    dtype: torch.dtype = torch.float64,
    seed: int = 0,
    **overrides,
) -> OctreeTransformer:
    torch.manual_seed(seed)
    settings = dict(
        layers=1,
        heads=2,
        width=16,
        ff_width=32,
        max_positions=512,
        num_classes=4,
        scheme=scheme,
        max_depth=max_depth,
    )
    settings.update(overrides)
    return OctreeTransformer(ModelConfig(**settings)).to(dtype).eval()
