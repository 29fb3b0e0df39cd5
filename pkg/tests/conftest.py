import pathlib

import numpy as np
import pytest

from fftfem import grid_field


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the slow scale and timing tests",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: scale or timing test (needs --run-slow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cache_dir(tmp_path: pathlib.Path) -> str:
    path = tmp_path / "cache"
    return str(path)


@pytest.fixture
def dense_pencil():
    """Assembled ``(𝒜, 𝒞)`` of a ``(K, n)`` mesh as dense arrays."""

    def make(size: int, order: int):
        return (
            grid_field.dense_matrix(size, order, "stiffness"),
            grid_field.dense_matrix(size, order, "mass"),
        )

    return make
