import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from limbnet import dataset as ds  # noqa: E402
from limbnet.model import ModelConfig  # noqa: E402

# reduced architecture used for whole-network gradient checks
REDUCED = dict(window_len=16, conv_specs=((3, 2), (3, 2), (3, 2)), attention_dim=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def reduced_config():
    return ModelConfig(**REDUCED, dense_hidden=6, seed=5)


@pytest.fixture(scope="session")
def synthetic_dataset():
    return ds.generate_synthetic_dataset(22, 2560, rng=np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    """6-subject synthetic dataset written to disk with its manifest."""
    root = tmp_path_factory.mktemp("small")
    data = ds.generate_synthetic_dataset(6, 1024, rng=np.random.default_rng(3))
    manifest = ds.write_dataset(data, root / "data")
    return manifest


@pytest.fixture(scope="session")
def full_dataset_dir(tmp_path_factory, synthetic_dataset):
    root = tmp_path_factory.mktemp("full")
    return ds.write_dataset(synthetic_dataset, root / "data")


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
