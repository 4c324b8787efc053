import os

import numpy as np
import pytest

from fairadv.data import Dataset

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ADULT_PATH = os.environ.get("FAIRADV_ADULT", os.path.join(ROOT, "data", "adult.data"))

# (criterion id, passed, detail) appended by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def adult_path():
    if not os.path.exists(ADULT_PATH):
        pytest.skip(f"adult.data not found at {ADULT_PATH}")
    return ADULT_PATH


@pytest.fixture(scope="session")
def adult_split(adult_path):
    from fairadv.data import prepare_adult

    return prepare_adult(adult_path, 0)


def make_toy(n=200, d=6, seed=0, sparse=True):
    """Small random dataset with y, z correlated to the first two features."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    if sparse:
        X[:, 3:] = (rng.random((n, d - 3)) < 0.3).astype(float)
    y = (X[:, 0] + 0.3 * rng.normal(size=n) > 0).astype(np.int8)
    z = (X[:, 1] + 0.5 * X[:, 0] > 0).astype(np.int8)
    return Dataset(X, y, z)


@pytest.fixture
def toy():
    return make_toy()
