import numpy as np
import pytest
import torch

from octoseq.compressor import LevelCompressor, SequenceCompressor, strided
from octoseq.exceptions import ShapeMismatchError
from octoseq.octree import build_octree, linearize
from octoseq.scheme import SchemeEntry, expected_latent_count, parse_scheme, plan_groups, plan_level
from octoseq.voxels import VoxelGrid
from tests.helpers import mixed_sequence, random_sequence


def single_voxel_sequence():
    occupancy = np.zeros((4, 4, 4), dtype=bool)
    occupancy[0, 0, 0] = True
    return linearize(build_octree(VoxelGrid(occupancy)))


def summing(conv: torch.nn.Conv1d) -> None:
    """Make a stride-equals-kernel convolution add up its inputs."""
    width, _, kernel = conv.weight.shape
    with torch.no_grad():
        conv.weight.copy_(torch.eye(width)[:, :, None].expand(-1, -1, kernel))
        conv.bias.zero_()


def test_identity_compression():
    sequence = single_voxel_sequence()
    compressor = LevelCompressor(6, collapse=0, group=1)
    summing(compressor.merge)
    embeddings = torch.randn(len(sequence), 6)
    layout = plan_level(sequence, 1, SchemeEntry(collapse=0, group=1))
    assert torch.allclose(compressor(embeddings, layout), embeddings[:8])


def test_sibling_pairs():
    sequence = single_voxel_sequence()
    compressor = LevelCompressor(6, collapse=0, group=2)
    summing(compressor.merge)
    embeddings = torch.randn(len(sequence), 6)
    layout = plan_level(sequence, 2, SchemeEntry(collapse=0, group=2))
    latents = compressor(embeddings, layout)
    assert latents.shape == (4, 6)
    assert torch.allclose(latents[1], embeddings[10] + embeddings[11])


def test_collapse_replaces_mixed_parents():
    sequence = single_voxel_sequence()
    torch.manual_seed(0)
    compressor = LevelCompressor(6, collapse=1, group=8)
    embeddings = torch.randn(len(sequence), 6)
    layout = plan_level(sequence, 2, SchemeEntry(collapse=1, group=8))
    collapsed = compressor.collapse_subtrees(embeddings, layout)
    assert len(collapsed) == 2
    summary = strided(compressor.collapse[0], embeddings[8:16])
    assert torch.allclose(collapsed[0][0], summary[0])
    assert torch.equal(collapsed[0][1:], embeddings[1:8])
    assert torch.equal(collapsed[1], embeddings[8:16])
    assert compressor(embeddings, layout).shape == (1, 6)


def test_latents_only_see_their_group():
    rng = np.random.default_rng(0)
    torch.manual_seed(0)
    sequence = mixed_sequence(rng, 8)
    entry = SchemeEntry(collapse=1, group=4)
    layout = plan_level(sequence, 3, entry)
    compressor = LevelCompressor(8, collapse=1, group=4).double()
    embeddings = torch.randn(len(sequence), 8, dtype=torch.float64)
    latents = compressor(embeddings, layout)

    for group in range(layout.num_groups):
        members = [cells[ids == group] for cells, ids in zip(layout.cells, layout.group_ids)]
        inside = np.concatenate(members)
        outside = np.setdiff1d(np.arange(len(sequence)), inside)
        perturbed = embeddings.clone()
        perturbed[torch.as_tensor(outside)] += 1.0
        assert torch.equal(compressor(perturbed, layout)[group], latents[group])


def test_layout_mismatch():
    sequence = single_voxel_sequence()
    compressor = LevelCompressor(6, collapse=0, group=4)
    layout = plan_level(sequence, 2, SchemeEntry(collapse=0, group=2))
    with pytest.raises(ShapeMismatchError):
        compressor(torch.randn(len(sequence), 6), layout)


@pytest.mark.parametrize(
    "text", ["0/1", "0/2", "0/4", "0/8", "0/1,1/4", "0/1,1/8", "0/1,0/2,1/4,2/8"]
)
def test_latent_count_matches_compression(text):
    rng = np.random.default_rng(1)
    scheme = parse_scheme(text)
    torch.manual_seed(0)
    compressor = SequenceCompressor(8, scheme, max_depth=4)
    for _ in range(25):
        sequence = random_sequence(rng, 16)
        embeddings = torch.randn(len(sequence), 8)
        with torch.no_grad():
            latents = compressor.compress(embeddings, plan_groups(sequence, scheme))
        assert len(latents) == sum(expected_latent_count(sequence.mixed_counts(), scheme))


def test_compression_is_deterministic():
    rng = np.random.default_rng(2)
    scheme = parse_scheme("0/1,0/2,1/4")
    torch.manual_seed(0)
    compressor = SequenceCompressor(8, scheme, max_depth=3)
    sequence = random_sequence(rng, 8)
    embeddings = torch.randn(len(sequence), 8)
    plan = plan_groups(sequence, scheme)
    assert torch.equal(
        compressor(embeddings, plan).latents, compressor(embeddings, plan).latents
    )
