import json
import struct

import pytest

from octoseq.checkpoint import save_checkpoint
from octoseq.cli import EXIT_DATA, EXIT_RUNTIME, EXIT_USAGE, main
from tests.helpers import small_model

RUN_CONFIG = {
    "model": {
        "layers": 1,
        "heads": 2,
        "width": 16,
        "ff_width": 32,
        "max_positions": 128,
        "scheme": "0/1,0/2",
        "max_depth": 2,
    },
    "train": {"epochs": 1, "augment_probability": 0.0},
    "sample": {"temperature": 1.0},
}


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "corpus"
    assert main(["make-dataset", "--out", str(path), "--resolution", "4", "--count", "3"]) == 0
    return path


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(RUN_CONFIG))
    return path


def test_encode_decode_round_trip(tmp_path, corpus):
    shape = corpus / "shape_00000.octv"
    text = tmp_path / "shape.txt"
    assert main(["encode", str(shape), "--out", str(text), "--class", "1"]) == 0
    assert text.read_text().startswith("#octoseq v1 class=1 resolution=4")
    assert main(["decode", str(text), "--out", str(tmp_path / "back.octv")]) == 0
    assert (tmp_path / "back.octv").read_bytes() == shape.read_bytes()


def test_stats(corpus):
    assert main(["stats", str(corpus), "--scheme", "baseline", "--scheme", "0/8"]) == 0
    assert main(["stats", str(corpus), "--scheme", "0/3"]) == EXIT_USAGE


def test_usage_errors(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["encode"]) == EXIT_USAGE
    assert main(["sample", "--bogus"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"bogus": 1}}))
    assert main(["make-dataset", "--out", str(tmp_path / "c"), "--config", str(bad)]) == EXIT_USAGE


def test_data_errors(tmp_path):
    garbage = tmp_path / "garbage.txt"
    garbage.write_text("not a sequence\n")
    assert main(["decode", str(garbage), "--out", str(tmp_path / "x.octv")]) == EXIT_DATA
    broken = tmp_path / "broken.octv"
    broken.write_bytes(b"OCTV\x01")
    assert main(["export", str(broken), "--format", "obj", "--out", str(tmp_path / "x.obj")]) == (
        EXIT_DATA
    )
    (tmp_path / "empty").mkdir()
    assert main(["stats", str(tmp_path / "empty")]) == EXIT_DATA
    checkpoint = tmp_path / "model.octm"
    save_checkpoint(small_model(max_depth=2), checkpoint)
    corrupted = bytearray(checkpoint.read_bytes())
    corrupted[struct.calcsize("<4sHB") + 4] ^= 0x01
    checkpoint.write_bytes(bytes(corrupted))
    assert main(["sample", "--checkpoint", str(checkpoint), "--out", str(tmp_path / "s")]) == (
        EXIT_DATA
    )


def test_runtime_errors(tmp_path):
    missing = tmp_path / "missing.octm"
    assert main(["sample", "--checkpoint", str(missing), "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_train_sample_evaluate(tmp_path, corpus, run_config):
    model = tmp_path / "model.octm"
    config = ["--config", str(run_config)]
    assert main(["train", str(corpus), "--out", str(model), "--metrics",
                 str(tmp_path / "metrics.csv"), *config]) == 0
    assert model.exists()

    samples = tmp_path / "samples"
    assert main(["sample", "--checkpoint", str(model), "--out", str(samples), "--count", "2",
                 "--seed", "3", *config]) == 0
    assert sorted(path.name for path in samples.iterdir()) == [
        "sample_000.octv", "sample_000.txt", "sample_001.octv", "sample_001.txt"
    ]

    text = tmp_path / "shape.txt"
    assert main(["encode", str(corpus / "shape_00001.octv"), "--out", str(text)]) == 0
    assert main(["upres", str(text), "--checkpoint", str(model), "--prefix-depth", "1",
                 "--out", str(tmp_path / "up.octv"), *config]) == 0

    report = tmp_path / "report.csv"
    assert main(["eval", str(corpus), "--checkpoint", str(model), "--multiplier", "1",
                 "--out", str(report), *config]) == 0
    assert report.read_text().startswith("coverage,mmd,mmd_scaled")

    assert main(["export", str(text), "--format", "slices", "--out", str(tmp_path / "s")]) == 0
    assert len(list((tmp_path / "s").iterdir())) == 4
    assert main(["export", str(corpus / "shape_00001.octv"), "--format", "obj",
                 "--out", str(tmp_path / "shape.obj")]) == 0
