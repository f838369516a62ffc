from pathlib import Path

import numpy as np
import pytest

from xaigan.data import Dataset

ROOT = Path(__file__).resolve().parents[1]
MNIST5K = ROOT / "data" / "mnist5k"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist5k():
    from xaigan.data import load_idx

    return load_idx(MNIST5K / "images-idx3-ubyte.gz", MNIST5K / "labels-idx1-ubyte.gz", name="mnist5k")


def toy_dataset(n=256, channels=1, seed=0):
    """Random images in [-1, 1] with blob structure, enough to drive a few GAN steps."""
    g = np.random.default_rng(seed)
    images = np.tanh(g.normal(-1.0, 1.0, size=(n, channels, 32, 32)))
    return Dataset(images, g.integers(0, 10, n), name="toy")


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}


class Criterion:
    """Records the outcome of one acceptance criterion for the summary lines."""

    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        if exc_type is not None and not issubclass(exc_type, AssertionError):
            self.note(f"{exc_type.__name__}: {exc}")
        ACCEPTANCE[self.number] = (status, self.title, "; ".join(self.details))
        return False


def report_only(number, title, text):
    ACCEPTANCE[number] = ("REPORT", title, text)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, details = ACCEPTANCE[number]
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" -- {details}" if details else ""))
