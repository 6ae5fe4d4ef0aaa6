import numpy as np
import pytest

from su11oam import SourceConfig, build_grid, decompose, radial_kernels, redistribute


@pytest.fixture(scope="session")
def small_config():
    return SourceConfig(gap_distance=15e-3, n_theta=64, n_phi=64, l_max=8, p_max=4)


@pytest.fixture(scope="session")
def small_truth(small_config):
    grid = build_grid(small_config)
    dec = decompose(radial_kernels(small_config, grid), small_config.p_max)
    return grid, dec, redistribute(dec, small_config.gain)


@pytest.fixture(scope="session")
def fig3_truth():
    """Full-resolution ground truth of the L = 15 mm, G0 = 7.6 source."""
    config = SourceConfig(gap_distance=15e-3, gain=7.6)
    grid = build_grid(config)
    dec = decompose(radial_kernels(config, grid), config.p_max)
    return config, grid, dec, redistribute(dec, config.gain)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def equal_mode_truth(n_modes, G0=6.0, n_theta=16, n_phi=16):
    """Grid, decomposition and spectrum with ``n_modes`` equal l = 0 modes."""
    from su11oam import PolarGrid
    from su11oam.model import RadialKernel

    grid = PolarGrid.uniform(0.01, n_theta, n_phi)
    matrix = np.zeros((n_theta, n_theta), dtype=complex)
    for p in range(n_modes):
        matrix[2 * p + 1, 2 * p + 1] = 1.0
    dec = decompose([RadialKernel(0, matrix, grid.theta)], p_max=n_modes)
    return grid, dec, redistribute(dec, G0)


@pytest.fixture
def equal_modes():
    return equal_mode_truth


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
