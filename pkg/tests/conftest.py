import os
from pathlib import Path

import pytest

from crosschain_tracer.dataset_io import Dataset
from crosschain_tracer.models import ChainRegistry, default_registry
from crosschain_tracer.simgen import SybilSpec, World, WorldSpec, generate_world, plant_sybil, write_world


@pytest.fixture
def test_dir():
    return os.path.dirname(os.path.abspath(__file__))


@pytest.fixture
def data_dir(test_dir) -> Path:
    return Path(test_dir) / "data"


@pytest.fixture(scope="session")
def registry() -> ChainRegistry:
    return default_registry()


@pytest.fixture(scope="session")
def planted_world() -> World:
    """Two pairs, a few swaps each, light background traffic."""
    spec = WorldSpec(
        seed=7,
        pairs=["BTC/BTC->ETH/ETH", "ETH/ETH->BTC/BTC"],
        swap_count=5,
        duration=2 * 86400,
        background_rate=0.05,
    )
    return generate_world(spec)


@pytest.fixture(scope="session")
def sybil_world() -> World:
    spec = WorldSpec(seed=11, pairs=["BTC/BTC->ETH/ETH"], swap_count=0, duration=3 * 86400)
    world, _ = plant_sybil(generate_world(spec), SybilSpec(leaf_count=5, depth=3))
    return world


@pytest.fixture(scope="session")
def sybil_dataset_dir(sybil_world, tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("sybil-dataset")
    write_world(sybil_world, directory)
    return directory


@pytest.fixture(scope="session")
def planted_dataset_dir(planted_world, tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("planted-dataset")
    write_world(planted_world, directory)
    return directory


@pytest.fixture(scope="session")
def planted_dataset(planted_dataset_dir) -> Dataset:
    return Dataset(planted_dataset_dir)
