import numpy as np
import pytest

from risfl.channel import ChannelRealization, SystemParams, cn, random_phases


def random_realization(rng, M, N, L):
    return ChannelRealization(cn((N, M), rng), cn((N, L), rng), cn((L, M), rng))


def unit_vector(rng, N):
    f = cn(N, rng)
    return f / np.linalg.norm(f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_instance(rng):
    """Random unit-scale channel with 4 devices, 3 antennas and 8 RIS elements."""
    M, N, L = 4, 3, 8
    real = random_realization(rng, M, N, L)
    counts = np.array([3, 5, 2, 7])
    params = SystemParams(num_antennas=N, num_ris_elements=L, num_devices=M,
                          max_power=0.5, noise_power=0.2)
    return real, counts, params, unit_vector(rng, N), random_phases(L, rng)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
