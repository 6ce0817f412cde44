import numpy as np
import pytest

from _factories import random_stack
from amerbsde.checkpoint import (MAGIC, CheckpointDimError, CheckpointError, CheckpointTruncatedError,
                                 CheckpointVersionError, checkpoint_load, checkpoint_save, load_file, save_file)
from amerbsde.netcore import EnsembleModel


@pytest.fixture(scope="module")
def model():
    return random_stack(np.random.default_rng(5), d=3, N=6, J=3, C=2)


def test_round_trip_bytes_and_values(model, tmp_path):
    blob = checkpoint_save(model)
    again = checkpoint_load(blob)
    assert checkpoint_save(again) == blob
    s = 100 + 10 * np.random.default_rng(0).standard_normal((20, 3))
    for n in (0, 3, 5):
        y0, z0 = model.value_and_delta(n, s)
        y1, z1 = again.value_and_delta(n, s)
        np.testing.assert_array_equal(y0, y1)
        np.testing.assert_array_equal(z0, z1)
    save_file(model, tmp_path / "m.bsdenet")
    assert checkpoint_save(load_file(tmp_path / "m.bsdenet")) == blob


def test_incomplete_model_refused(model):
    empty = EnsembleModel(model.mp, model.payoff, 4, 2, 1.0)
    with pytest.raises(CheckpointError):
        checkpoint_save(empty)


def test_version_mismatch(model):
    blob = bytearray(checkpoint_save(model))
    blob[len(MAGIC)] = 99
    with pytest.raises(CheckpointVersionError):
        checkpoint_load(bytes(blob))


def test_bad_magic(model):
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_load(b"X" + checkpoint_save(model)[1:])


@pytest.mark.parametrize("cut", [3, 20, 200, 8])
def test_truncation(model, cut):
    blob = checkpoint_save(model)
    with pytest.raises(CheckpointTruncatedError):
        checkpoint_load(blob[:cut] if cut < 100 else blob[:-cut])


def test_trailing_bytes(model):
    with pytest.raises(CheckpointDimError):
        checkpoint_load(checkpoint_save(model) + b"\0" * 8)


def test_dimension_mismatch(model):
    blob = checkpoint_save(model)
    bad = blob.replace(b"\nwidth=8\n", b"\nwidth=9\n")
    assert bad != blob
    with pytest.raises(CheckpointDimError):
        checkpoint_load(bad)
