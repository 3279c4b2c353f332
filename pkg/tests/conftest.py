import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sigmaflow import NoiseSignalSpec, estimate_moments, gen_noise_signal, whiten  # noqa: E402


def make_whitened(n=120, d_noise=1, d_signal=2, seed=0, **kw):
    raw = gen_noise_signal(NoiseSignalSpec(n=n, d_noise=d_noise, d_signal=d_signal, seed=seed, **kw))
    mo = estimate_moments(raw)
    return whiten(raw, mo), mo


@pytest.fixture
def small():
    """Whitened d = 3, n = 120 noise-plus-sine sample."""
    return make_whitened()[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary so the
# verdicts are visible without -s
ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
