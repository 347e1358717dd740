"""Shared fixtures: seeded generators, tiny model configs and on-disk datasets."""

import numpy as np
import pytest

from app.data import gen_synthetic, load_dataset
from app.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """One block, base 2: small enough for exhaustive gradient checks."""
    return ModelConfig(base=2, num_blocks=1, layers_per_block=2, aux_heads=("h1",))


@pytest.fixture
def small_config():
    """Three-block model with both aux heads at a size that trains in seconds."""
    return ModelConfig(base=4, aux_heads=("h1", "h2"))


@pytest.fixture
def dataset_dir(tmp_path):
    root = tmp_path / "data"
    gen_synthetic(4, 64, seed=3, out_dir=root)
    return root


@pytest.fixture
def dataset(dataset_dir):
    return load_dataset(dataset_dir)


@pytest.fixture
def deterministic(monkeypatch):
    """Run the training pipeline single-threaded."""
    from app.core.config import settings

    monkeypatch.setattr(settings, "deterministic", True)
    yield settings
