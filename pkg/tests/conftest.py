import sys
from pathlib import Path

import numpy as np
import pytest

# helper modules (oracles, gradcases) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

from deepmot.geometry import FrameDims  # noqa: E402
from deepmot.tracks import TrackFile  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dims():
    return FrameDims(100.0, 100.0)


@pytest.fixture
def make_trackfile(dims):
    """Build a TrackFile from {frame: [(id, box), ...]}."""

    def build(frames, n_frames=None, allow_duplicate_ids=False):
        tf = TrackFile(dims=dims, n_frames=n_frames, allow_duplicate_ids=allow_duplicate_ids)
        for t, entries in frames.items():
            for ident, box in entries:
                tf.add(t, ident, box)
        return tf

    return build


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
