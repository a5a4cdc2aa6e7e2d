import time
from contextlib import contextmanager

import numpy as np
import pytest

from scpa.codec import LandClassSet
from scpa.rasters import LabelRaster

ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def label_pair():
    """Factory for random co-registered label rasters."""

    def make(h, w, n_classes, seed=0, p_change=0.5):
        g = np.random.default_rng(seed)
        classes = LandClassSet(n_classes)
        src = g.integers(0, n_classes, size=(h, w))
        dst = np.where(g.random((h, w)) < p_change, g.integers(0, n_classes, size=(h, w)), src)
        return LabelRaster(src, classes), LabelRaster(dst, classes)

    return make


@pytest.fixture
def criterion():
    """Time an acceptance criterion and log a PASS/FAIL line for the summary."""

    @contextmanager
    def run(number, title, budget_s):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - t0
            assert elapsed < budget_s, f"criterion {number} took {elapsed:.2f}s, budget {budget_s}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            status = "PASS" if ok else "FAIL"
            line = f"[{status}] criterion {number:>2}: {title} ({elapsed:.2f}s, budget {budget_s}s)"
            ACCEPTANCE_LINES[number] = line
            print(line)

    return run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
