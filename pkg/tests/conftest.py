import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybrid_ccnn.core import ParameterPoint, SnapshotSet  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_set(bits, delta=0.0, rb=1.0):
    return SnapshotSet(ParameterPoint(delta, rb), np.asarray(bits, dtype=np.uint8))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
