import numpy as np
import pytest
import torch

from octoseq.config import SampleConfig
from octoseq.custom_types import CellValue
from octoseq.exceptions import PrefixError, ShapeMismatchError
from octoseq.octree import EMPTY, FULL, MIXED, TokenSequence, build_octree, delinearize, linearize
from octoseq.octree import octree_to_voxels, sequence_from_levels
from octoseq.sampler import (
    choose_value,
    sample_many,
    sample_shape,
    superresolve,
    temperature_scale,
)
from octoseq.utils import torch_generator
from octoseq.voxels import VoxelGrid
from tests.helpers import checkerboard, mixed_sequence, small_model


def assert_valid(result, max_depth: int) -> None:
    sequence = result.sequence
    tree = delinearize(sequence.values)
    assert sequence.depth <= max_depth
    assert result.grid.resolution == 1 << max_depth
    assert octree_to_voxels(tree, result.grid.resolution) == result.grid
    if sequence.depth == max_depth:
        assert not (sequence.levels()[-1] == MIXED).any()


def test_temperature_scale():
    logits = torch.tensor([2.0, 1.0, 0.0])
    expected = torch.tensor([0.8668, 0.1173, 0.0159])
    assert torch.allclose(temperature_scale(logits, 0.5), expected, atol=1e-4)
    assert torch.allclose(temperature_scale(logits, 1e6), torch.full((3,), 1 / 3), atol=1e-5)
    with pytest.raises(ValueError):
        temperature_scale(logits, 0.0)


def test_choose_value():
    generator = torch_generator(0)
    logits = torch.tensor([0.0, 10.0, 0.0])
    assert choose_value(logits, 0.0, False, generator) == 2
    for _ in range(20):
        assert choose_value(logits, 1.0, True, generator) != 2
    assert logits[1] == 10.0
    assert choose_value(torch.tensor([0.0, 0.0, 5.0]), 0.0, True, generator) == 3


def test_samples_are_valid_octrees():
    model = small_model(max_depth=2, dtype=torch.float32)
    for seed in range(10):
        result = sample_shape(model, SampleConfig(temperature=1.0, seed=seed))
        assert not result.truncated
        assert_valid(result, 2)


@pytest.mark.slow
def test_many_samples_are_valid_octrees():
    model = small_model(max_depth=3, scheme="0/1,0/2,1/4", dtype=torch.float32)
    for seed in range(100):
        assert_valid(sample_shape(model, SampleConfig(temperature=1.0, seed=seed)), 3)


def test_sampling_is_reproducible():
    model = small_model(max_depth=2, dtype=torch.float32)
    first = sample_shape(model, SampleConfig(temperature=0.8, seed=7))
    second = sample_shape(model, SampleConfig(temperature=0.8, seed=7))
    assert first.sequence == second.sequence

    greedy = sample_shape(model, SampleConfig(temperature=0, seed=1))
    assert greedy.sequence == sample_shape(model, SampleConfig(temperature=0, seed=2)).sequence


def test_sampling_matches_teacher_forcing():
    model = small_model(max_depth=3, scheme="0/1,0/2,1/4")
    for seed in range(3):
        result = sample_shape(model, SampleConfig(temperature=1.0, seed=seed, class_label=1))
        assert result.sequence.class_label == 1
        with torch.no_grad():
            forced = model(result.sequence)
        assert result.logits.shape == forced.shape
        assert torch.allclose(result.logits, forced, rtol=0, atol=1e-9)


def test_superresolution_keeps_the_prefix():
    rng = np.random.default_rng(0)
    model = small_model(max_depth=3, scheme="0/1,0/2,1/4", dtype=torch.float32)
    for seed in range(5):
        sequence = mixed_sequence(rng, 8)
        prefix = sequence.truncate(1 + seed % 2)
        result = superresolve(model, prefix, 3, SampleConfig(temperature=1.0, seed=seed))
        assert np.array_equal(result.sequence.values[: len(prefix)], prefix.values)
        assert torch.isnan(result.logits[: len(prefix)]).all()
        assert_valid(result, 3)


def test_superresolution_of_a_complete_prefix():
    rng = np.random.default_rng(1)
    model = small_model(max_depth=3, dtype=torch.float32)
    sequence = mixed_sequence(rng, 8)
    result = superresolve(model, sequence, 3, SampleConfig())
    assert result.sequence == sequence
    assert result.grid == octree_to_voxels(delinearize(sequence.values), 8)


def test_superresolution_rejects_bad_prefixes():
    rng = np.random.default_rng(2)
    model = small_model(max_depth=3, dtype=torch.float32)
    sequence = mixed_sequence(rng, 8)
    cut = TokenSequence(
        values=sequence.values[:10],
        depths=sequence.depths[:10],
        positions=sequence.positions[:10],
    )
    with pytest.raises(PrefixError):
        superresolve(model, cut, 3, SampleConfig())
    with pytest.raises(PrefixError):
        superresolve(model, sequence, 2, SampleConfig())
    with pytest.raises(ShapeMismatchError):
        superresolve(model, sequence, 4, SampleConfig())


def coarse_prefix(rng: np.random.Generator) -> TokenSequence:
    """Depth-2 open sequence with one or two MIXED cells on each level."""
    levels = []
    cells = 8
    for _ in range(2):
        level = rng.choice([EMPTY, FULL], cells)
        level[rng.choice(cells, int(rng.integers(1, 3)), replace=False)] = MIXED
        levels.append(level)
        cells = 8 * int(np.count_nonzero(level == MIXED))
    return sequence_from_levels(levels)


@pytest.mark.slow
def test_superresolution_from_depth_two_to_five():
    rng = np.random.default_rng(5)
    model = small_model(
        max_depth=5, scheme="0/1,0/2,1/4", dtype=torch.float32, max_positions=2048
    )
    with torch.no_grad():
        model.decoder.head.weight.zero_()
        model.decoder.head.bias.copy_(torch.log(torch.tensor([0.25, 0.5, 0.25])))

    reached = 0
    for seed in range(100):
        prefix = coarse_prefix(rng)
        coarse = delinearize(prefix.values, allow_open=True)
        assert octree_to_voxels(coarse, 4, fill_open=CellValue.FULL).resolution == 4

        result = superresolve(model, prefix, 5, SampleConfig(temperature=1.0, seed=seed))
        assert not result.truncated
        assert np.array_equal(result.sequence.values[: len(prefix)], prefix.values)
        assert_valid(result, 5)
        assert result.grid.resolution == 32
        inner = octree_to_voxels(coarse, 32, fill_open=CellValue.EMPTY).occupancy
        outer = octree_to_voxels(coarse, 32, fill_open=CellValue.FULL).occupancy
        assert np.all(inner <= result.grid.occupancy)
        assert np.all(result.grid.occupancy <= outer)
        reached += result.sequence.depth == 5
    assert reached >= 95


def test_running_out_of_positions():
    model = small_model(max_depth=3, dtype=torch.float32, max_positions=12)
    prefix = linearize(build_octree(checkerboard(8))).truncate(1)
    result = superresolve(model, prefix, 3, SampleConfig(seed=0))
    assert result.truncated
    assert result.sequence == prefix
    assert result.grid == VoxelGrid.full(8)


@pytest.mark.asyncio
async def test_sample_many():
    model = small_model(max_depth=2, dtype=torch.float32)
    config = SampleConfig(temperature=1.0, seed=3, count=4)
    results = await sample_many(model, config)
    assert len(results) == 4
    for index, result in enumerate(results):
        expected = sample_shape(model, SampleConfig(temperature=1.0, seed=3 + index))
        assert result.sequence == expected.sequence
