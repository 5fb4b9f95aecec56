import numpy as np
import pytest
import torch

from octoseq.exceptions import ShapeMismatchError
from octoseq.octree import MIXED
from octoseq.training import sequence_loss
from tests.helpers import mixed_sequence, random_sequence, small_model


def test_logits_for_every_token():
    rng = np.random.default_rng(0)
    model = small_model(scheme="0/1,0/2,1/4")
    for _ in range(5):
        sequence = random_sequence(rng, 8)
        logits = model(sequence)
        assert logits.shape == (len(sequence), 3)
        assert torch.isfinite(logits).all()


def test_class_conditioning():
    rng = np.random.default_rng(1)
    model = small_model()
    sequence = mixed_sequence(rng, 8)
    conditioned = sequence.copy()
    conditioned.class_label = 0
    unconditional = sequence.copy()
    unconditional.class_label = model.config.unconditional_label
    assert not torch.allclose(model(conditioned), model(sequence))
    assert torch.equal(model(unconditional), model(sequence))


def test_sequence_deeper_than_model():
    rng = np.random.default_rng(2)
    model = small_model(max_depth=2)
    with pytest.raises(ShapeMismatchError):
        model(mixed_sequence(rng, 8))


def test_logits_only_depend_on_earlier_tokens():
    rng = np.random.default_rng(3)
    model = small_model(scheme="0/1,0/2,1/4")
    checked = 0
    while checked < 50:
        sequence = mixed_sequence(rng, 8)
        leaves = np.flatnonzero(sequence.values != MIXED)
        for k in rng.choice(leaves, size=min(5, len(leaves)), replace=False).tolist():
            flipped = sequence.copy()
            flipped.values[k] = 4 - flipped.values[k]
            with torch.no_grad():
                logits, changed = model(sequence), model(flipped)
            assert torch.equal(changed[: k + 1], logits[: k + 1])
            if k + 1 < len(sequence):
                assert not torch.equal(changed[k + 1 :], logits[k + 1 :])
            checked += 1


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    model = small_model(max_depth=3, scheme="0/1,0/2")
    sequence = mixed_sequence(rng, 8)
    model.zero_grad()
    sequence_loss(model, sequence, alpha=1.0).backward()
    parameters = list(model.named_parameters())
    step = 1e-6
    for _ in range(32):
        name, parameter = parameters[int(rng.integers(len(parameters)))]
        index = int(rng.integers(parameter.numel()))
        flat = parameter.data.view(-1)
        original = float(flat[index])
        with torch.no_grad():
            flat[index] = original + step
            upper = float(sequence_loss(model, sequence, alpha=1.0))
            flat[index] = original - step
            lower = float(sequence_loss(model, sequence, alpha=1.0))
            flat[index] = original
        numeric = (upper - lower) / (2 * step)
        analytic = 0.0 if parameter.grad is None else float(parameter.grad.view(-1)[index])
        assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-7, name
