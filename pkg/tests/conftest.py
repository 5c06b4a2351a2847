import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CIFAR_DIR = os.environ.get("FACTORIZENET_DATA", os.path.join(ROOT, "data", "cifar-10-batches-bin"))


def cifar_available():
    return os.path.isfile(os.path.join(CIFAR_DIR, "data_batch_1.bin"))


requires_cifar = pytest.mark.skipif(not cifar_available(), reason=f"CIFAR-10 binaries not found in {CIFAR_DIR}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cifar_dir():
    if not cifar_available():
        pytest.skip(f"CIFAR-10 binaries not found in {CIFAR_DIR}")
    return CIFAR_DIR


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)
