import numpy as np
import pytest

from asymcoop.model import ChannelSet, SinrSpec


def random_channels(rng, K, N, L, spread_db=0.0):
    """Rayleigh channels with an optional per-(k, n) lognormal power spread."""
    h = (rng.standard_normal((K, N, L)) + 1j * rng.standard_normal((K, N, L))) / np.sqrt(2)
    if spread_db:
        h *= 10 ** (rng.normal(0, spread_db, size=(K, N, 1)) / 20)
    return ChannelSet(h)


def uniform_spec(K, gamma_db=10.0, noise_dbm=0.0):
    return SinrSpec.uniform(K, gamma_db, noise_dbm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# lines collected by test_acceptance.py, repeated at the end of the session
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
