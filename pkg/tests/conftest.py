"""Shared configurations, frozen noise constants and the acceptance summary hook."""
import math

import numpy as np
import pytest

from cddsense.model import TWO_PI, DriveConfig
from cddsense.noise import NoiseConfig, OUProcess

# scaled units: Omega1 / 2 pi = 10 per time unit
OMEGA0 = TWO_PI * 500
OMEGA1 = TWO_PI * 10
OMEGA2 = TWO_PI * 1.5
G = TWO_PI * 0.2

# coherence ladder in time units: T2* = 0.37, x55, x6.5 (T1 = 2 x 481)
LADDER = {"T2_star": 0.37, "T2_1": 0.37 * 55, "T2_12": 0.37 * 55 * 6.5}
T1_SCALED = 961.8

# noise amplitudes frozen from calibrate(LADDER, seed=1234, n_traj=512)
FROZEN_NOISE = NoiseConfig(OUProcess(3.8222, 9.25), OUProcess(6.2968e-4, 10.0),
                           OUProcess(5.3990e-3, 10.0))


@pytest.fixture
def scaled_cfg():
    return DriveConfig.on_resonance(OMEGA0, OMEGA1, OMEGA2, g=G)


@pytest.fixture
def single_cfg():
    return DriveConfig.on_resonance(OMEGA0, OMEGA1, 0.0, g=G)


@pytest.fixture
def frozen_noise():
    return FROZEN_NOISE


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = []
    config.addinivalue_line("markers", "acceptance: acceptance criteria")


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per criterion; printed in the terminal summary."""
    lines = request.config.acceptance_lines

    def log(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


def rel(a, b):
    return abs(a / b - 1) if b else math.inf
