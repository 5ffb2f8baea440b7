import numpy as np
import pytest

from flipconcept.denoiser import build_denoiser, embed_prompt
from flipconcept.field import Rng
from flipconcept.schedule import linear_schedule


@pytest.fixture(scope="session")
def sched():
    return linear_schedule()


@pytest.fixture(scope="session")
def den():
    return build_denoiser(0)


@pytest.fixture(scope="session")
def den3():
    return build_denoiser(0, channels=3)


@pytest.fixture(scope="session")
def cond():
    return embed_prompt("a photo of a cat", 32)


def uniform_image(seed, shape=(16, 16, 1)):
    """Deterministic test image with values in [-1, 1)."""
    n = int(np.prod(shape))
    return (Rng(10_000 + seed).uniform(n).reshape(shape) * 2 - 1).astype(np.float32)


# -- acceptance reporting -----------------------------------------------------

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(label, ok, detail=""):
        _ACCEPTANCE.append((label, bool(ok), detail))
        print(f"{label}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
