import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("SPARSECERT_MNIST_DIR", "/root/data/mnist"))


def random_net(rng, dims):
    from sparsecert import Network

    return Network([rng.standard_normal((dims[k], dims[k - 1])) for k in range(1, len(dims))])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists():
        pytest.skip(f"MNIST not found in {MNIST_DIR} (set SPARSECERT_MNIST_DIR)")
    return MNIST_DIR


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Print and remember one PASS/FAIL line, then assert."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
