import copy

import numpy as np
import pytest

from splatrig import codec
from splatrig.asset import generate_synthetic_asset

FULL_SPLATS = 533_695
FULL_SEED = 7


@pytest.fixture(scope="session")
def small_asset():
    """20k raw splats; fast enough for per-module tests."""
    return generate_synthetic_asset(splat_count=20_000, seed=3)


@pytest.fixture(scope="session")
def small_compressed(small_asset):
    a = generate_synthetic_asset(splat_count=20_000, seed=3)
    a.splats = codec.compress_splats(a.splats)
    return a


@pytest.fixture(scope="session")
def full_raw():
    return generate_synthetic_asset(splat_count=FULL_SPLATS, seed=FULL_SEED)


@pytest.fixture(scope="session")
def full_asset(full_raw):
    """Full-size avatar with default-profile compressed splats."""
    a = copy.copy(full_raw)
    a.splats = codec.compress_splats(full_raw.splats)
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, one per criterion, printed at the end of the run
ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
