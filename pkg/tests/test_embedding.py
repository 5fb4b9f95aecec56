import numpy as np
import pytest
import torch
from torch.func import functional_call

from octoseq.embedding import TokenEmbedding, position_table_size
from octoseq.exceptions import FormatError, ShapeMismatchError
from octoseq.octree import END, build_octree, linearize
from octoseq.voxels import VoxelGrid
from tests.helpers import random_sequence


def one_hot_embedding() -> TokenEmbedding:
    """Depth 1 tables whose rows are one-hot in disjoint column blocks."""
    size = position_table_size(1)
    width = 4 + 3 * size
    embedding = TokenEmbedding(width, max_depth=1, num_classes=2).double()
    eye = torch.eye(width, dtype=torch.float64)
    with torch.no_grad():
        embedding.values.weight.copy_(eye[:4])
        embedding.pos_x.weight.copy_(eye[4 : 4 + size])
        embedding.pos_y.weight.copy_(eye[4 + size : 4 + 2 * size])
        embedding.pos_z.weight.copy_(eye[4 + 2 * size :])
    return embedding


def test_position_table_size():
    assert position_table_size(1) == 3
    assert position_table_size(5) == 63


def test_one_hot_token_embedding():
    embedding = one_hot_embedding()
    vector = embedding.embed_token(3, (0, 0, 0), (1, 0, 0))
    expected = torch.zeros(embedding.width, dtype=torch.float64)
    expected[3] = 1  # FULL
    expected[4] = 1  # own x
    expected[5] = 1  # successor x
    expected[7] = 2  # own and successor y
    expected[10] = 2  # own and successor z
    assert torch.equal(vector, expected)

    last = embedding.embed_token(1, (1, 1, 1), (END, END, END))
    assert last[4 + 2] == 1 and last[7 + 2] == 1 and last[10 + 2] == 1


def test_zero_tables_give_zero_vectors():
    embedding = TokenEmbedding(8, max_depth=2, num_classes=2)
    with torch.no_grad():
        for parameter in embedding.parameters():
            parameter.zero_()
    vector = embedding.embed_token(2, (1, 2, 3), (END, END, END))
    assert torch.equal(vector, torch.zeros(8))


def test_successor_term_is_linear():
    torch.manual_seed(0)
    embedding = TokenEmbedding(8, max_depth=2, num_classes=2).double()
    a = embedding.embed_token(2, (0, 1, 0), (3, 2, 2))
    b = embedding.embed_token(2, (0, 1, 0), (4, 2, 2))
    difference = embedding.pos_x.weight[3] - embedding.pos_x.weight[4]
    assert torch.allclose(a - b, difference, atol=1e-12)


def test_sequence_embedding_is_local():
    rng = np.random.default_rng(0)
    torch.manual_seed(0)
    embedding = TokenEmbedding(8, max_depth=4, num_classes=2).double()
    sequence = random_sequence(rng, 16)
    rows = embedding.embed_sequence(sequence)
    assert rows.shape == (len(sequence), 8)

    leaves = np.flatnonzero(sequence.values != 2)
    k = int(leaves[len(leaves) // 2])
    changed = sequence.copy()
    changed.values[k] = 4 - changed.values[k]
    other = embedding.embed_sequence(changed)
    mask = torch.ones(len(sequence), dtype=torch.bool)
    mask[k] = False
    assert torch.equal(rows[mask], other[mask])
    assert not torch.equal(rows[k], other[k])


def test_uniform_sequence_ends_with_end_row():
    torch.manual_seed(0)
    embedding = TokenEmbedding(8, max_depth=2, num_classes=2).double()
    sequence = linearize(build_octree(VoxelGrid.empty(4)))
    rows = embedding.embed_sequence(sequence)
    end = embedding.end_index
    expected = (
        embedding.values.weight[1]
        + embedding.position_terms(sequence.positions[-1:])[0]
        + embedding.pos_x.weight[end]
        + embedding.pos_y.weight[end]
        + embedding.pos_z.weight[end]
    )
    assert torch.allclose(rows[-1], expected, atol=1e-12)


def test_empty_sequence():
    embedding = TokenEmbedding(8, max_depth=2, num_classes=2)
    rows = embedding(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
    assert rows.shape == (0, 8)


def test_invalid_inputs():
    embedding = TokenEmbedding(8, max_depth=2, num_classes=2)
    with pytest.raises(FormatError):
        embedding.embed_token(0, (0, 0, 0), (1, 0, 0))
    with pytest.raises(FormatError):
        embedding([5], [(0, 0, 0)], [(1, 0, 0)])
    with pytest.raises(ShapeMismatchError):
        embedding.embed_token(1, (6, 0, 0), (1, 0, 0))
    with pytest.raises(ShapeMismatchError):
        embedding.embed_class(2)
    assert embedding.embed_class(1).shape == (8,)


def test_table_gradients():
    rng = np.random.default_rng(1)
    torch.manual_seed(1)
    embedding = TokenEmbedding(4, max_depth=3, num_classes=2).double()
    sequence = random_sequence(rng, 8)
    successors = sequence.successor_positions()
    for name in ("values.weight", "pos_x.weight", "pos_y.weight", "pos_z.weight"):
        weight = dict(embedding.named_parameters())[name].detach().clone().requires_grad_()

        def embed(table, name=name):
            rows = functional_call(
                embedding, {name: table}, (sequence.values, sequence.positions, successors)
            )
            return (rows**2).sum()

        assert torch.autograd.gradcheck(embed, (weight,))
