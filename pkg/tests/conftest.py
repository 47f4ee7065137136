import numpy as np
import pytest
import torch
from hypothesis import settings

from logicalad.edges import extract_edge_map
from logicalad.generator import GeneratorConfig, train_generator
from logicalad.toy import make_toy_dataset
from logicalad.dataset_io import DatasetSpec, load_dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_dataset(root, "toy_box", n_train=8, n_test_good=4, n_test_per_defect=2, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_train(toy_root):
    return load_dataset(DatasetSpec(toy_root, "toy_box", (64, 64), "train")).images


@pytest.fixture(scope="session")
def small_generator(toy_train):
    """A briefly trained generator: enough for plumbing tests, not for quality checks."""
    cfg = GeneratorConfig(base_channels=8, num_residual_blocks=1, epochs=3, batch_size=4)
    pairs = [(extract_edge_map(im), im) for im in toy_train]
    return train_generator(pairs, cfg, seed=0, category="toy_box")


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects the one-line pass/fail verdicts printed after the test session."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
