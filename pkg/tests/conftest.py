import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import bright_square_cascade, synthetic_cascade  # noqa: E402

from facecheck import synthetic  # noqa: E402


@pytest.fixture(scope="session")
def face_cascade():
    """Cascade trained on synthetic faces; about 20 s on one core."""
    return synthetic_cascade()


@pytest.fixture(scope="session")
def square_cascade():
    return bright_square_cascade()


@pytest.fixture(scope="session")
def face_dataset(tmp_path_factory):
    """Six synthetic subjects, 40 chips each."""
    d = tmp_path_factory.mktemp("faces")
    synthetic.write_face_dataset(d, 6, 40, seed=0)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
