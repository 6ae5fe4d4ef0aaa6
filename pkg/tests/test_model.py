import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import j0

from su11oam import (ConfigError, PolarGrid, QuadratureWarning, SourceConfig, build_grid,
                     load_config, parse_config, radial_kernel, radial_kernels, tpa_pointwise)
from su11oam.model import emission_envelope, format_config, interference_phase, save_config

angles = st.floats(0.0, 0.03, allow_nan=False)
azimuths = st.floats(0.0, 2 * math.pi, allow_nan=False)


def test_defaults_are_valid():
    cfg = SourceConfig()
    assert cfg.crystal_length == 2e-3
    assert cfg.pi_distance == 18e-3
    assert cfg.n_theta == cfg.n_phi == 256


@pytest.mark.parametrize("changes", [
    {"crystal_length": 0.0}, {"gap_distance": -1e-3}, {"gain": -1.0},
    {"detect_wavelength": 760e-9}, {"n_theta": 8}, {"pump_fwhm": float("nan")},
])
def test_invalid_config_rejected(changes):
    with pytest.raises(ConfigError):
        SourceConfig(**changes)


def test_config_roundtrip(tmp_path):
    cfg = SourceConfig(gap_distance=15e-3, gain=7.6, kerr_coeff=0.0025, n_theta=128)
    path = tmp_path / "c.cfg"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert parse_config(format_config(cfg)) == cfg


def test_config_errors_name_key_and_line():
    with pytest.raises(ConfigError, match=r"<config>:3: unknown config key 'gap'"):
        parse_config("# comment\ngain = 7\ngap = 0.015\n")
    with pytest.raises(ConfigError, match=r":1: bad value 'abc' for config key 'gain'"):
        parse_config("gain = abc")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("gain = 1\ngain = 2")


def test_config_overrides_keep_base():
    base = SourceConfig(gap_distance=15e-3)
    cfg = parse_config("gain = 5", base=base)
    assert cfg.gap_distance == 15e-3 and cfg.gain == 5.0


def test_collinear_deamplification_at_pi_distance():
    cfg = SourceConfig(gap_distance=18e-3, pump_power=0.0)
    assert interference_phase(cfg, 0.0, 0.0) == pytest.approx(math.pi, abs=1e-15)
    assert abs(tpa_pointwise(cfg, 0, 0, 0, 0)) < 1e-15


def test_collinear_period_is_twice_pi_distance():
    cfg = SourceConfig(gap_distance=11e-3)
    moved = cfg.replace(gap_distance=11e-3 + 2 * cfg.pi_distance)
    dpsi = interference_phase(moved, 0.0, 0.0) - interference_phase(cfg, 0.0, 0.0)
    assert dpsi == pytest.approx(2 * math.pi, rel=1e-14)
    assert abs(tpa_pointwise(moved, 0, 0, 0, 0)) == pytest.approx(abs(tpa_pointwise(cfg, 0, 0, 0, 0)), rel=1e-12)


def test_kerr_moves_minimum_linearly():
    kappa = 0.3
    for P in (0.5, 1.0, 2.0):
        cfg = SourceConfig(kerr_coeff=kappa, pump_power=P)
        L_min = cfg.pi_distance * (1 - kappa * P / math.pi)
        assert interference_phase(cfg.replace(gap_distance=L_min), 0.0, 0.0) == pytest.approx(math.pi)


def test_anticollinear_pair_has_unit_pump_factor():
    # q_s = -q_i: the pump envelope is 1 and only the phase-matching factors remain
    cfg = SourceConfig(gap_distance=15e-3)
    theta = 3e-3
    f = tpa_pointwise(cfg, theta, 0.3, theta, 0.3 + math.pi)
    assert abs(f) ** 2 == pytest.approx(float(emission_envelope(cfg, theta)), rel=1e-12)


def test_pump_envelope_matches_fourier_transform_of_gaussian_beam():
    # Hankel transform of a field whose intensity has the configured FWHM
    cfg = SourceConfig(pump_fwhm=170e-6, gap_distance=9e-3)
    sigma_field = cfg.pump_fwhm / math.sqrt(2 * math.log(2))
    field = lambda r: math.exp(-r * r / sigma_field ** 2)
    norm = quad(lambda r: field(r) * r, 0, 10 * sigma_field)[0]
    for Q in (0.0, 5e3, 1.2e4, 2.5e4):
        ft = quad(lambda r: field(r) * j0(Q * r) * r, 0, 10 * sigma_field,
                  limit=400, epsabs=1e-13, epsrel=1e-12)[0] / norm
        # parallel photons at theta = Q / 2k: |q_s + q_i| = Q and |q_s - q_i| = 0
        theta = Q / (2 * cfg.k)
        model = tpa_pointwise(cfg, theta, 0.0, theta, 0.0) / tpa_pointwise(cfg, 0, 0, 0, 0)
        assert abs(model) == pytest.approx(ft, abs=1e-8)


@given(angles, azimuths, angles, azimuths, st.floats(0, 2 * math.pi))
@settings(max_examples=60, deadline=None)
def test_tpa_invariant_under_common_rotation(ts, ps, ti, pi_, c):
    cfg = SourceConfig(gap_distance=15e-3)
    a = tpa_pointwise(cfg, ts, ps, ti, pi_)
    b = tpa_pointwise(cfg, ts, ps + c, ti, pi_ + c)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@given(angles, azimuths, angles, azimuths)
@settings(max_examples=60, deadline=None)
def test_tpa_symmetric_in_signal_and_idler(ts, ps, ti, pi_):
    cfg = SourceConfig(gap_distance=15e-3)
    assert tpa_pointwise(cfg, ts, ps, ti, pi_) == pytest.approx(tpa_pointwise(cfg, ti, pi_, ts, ps), abs=1e-14)


def test_build_grid_tail_criterion():
    cfg = SourceConfig()
    grid = build_grid(cfg)
    assert 0.01 < grid.theta_max < 0.1
    env = emission_envelope(cfg, np.linspace(1e-6, grid.theta_max, 4000))
    assert env[-1] < 0.01 * env.max()
    assert grid.n_theta == 256 and grid.n_phi == 256
    assert np.all(np.diff(grid.theta) > 0)
    # weights integrate theta dtheta dphi over the disc
    assert grid.weights.sum() == pytest.approx(math.pi * grid.theta_max ** 2, rel=1e-12)


def test_build_grid_plane_wave_pump_keeps_grid():
    cfg = SourceConfig()
    wide = cfg.replace(pump_fwhm=1e9)
    assert build_grid(wide).theta_max == build_grid(cfg).theta_max


def test_plane_wave_pump_collapses_correlation_width():
    # the kernel concentrates on theta_s == theta_i as the pump widens
    widths = []
    for fwhm in (170e-6, 1e-3, 4e-3):
        cfg = SourceConfig(gap_distance=15e-3, pump_fwhm=fwhm, n_theta=96, n_phi=64, l_max=4)
        grid = build_grid(cfg)
        m = np.abs(radial_kernel(cfg, grid, 0).matrix)
        i = np.argmax(np.diag(m))
        widths.append(np.sum(m[i]) / m[i, i])
    assert widths[0] > widths[1] > widths[2]


def test_build_grid_cap():
    cfg = SourceConfig(crystal_length=1e-9, gap_distance=1e-9, pi_distance=1e-9)
    with pytest.raises(ValueError, match="0.2 rad"):
        build_grid(cfg)


def test_build_grid_minimum_nodes():
    with pytest.raises(ValueError):
        build_grid(SourceConfig(), n_theta=8)


def test_grid_spec_roundtrip():
    grid = PolarGrid.uniform(0.04, 32, 48)
    again = PolarGrid.from_spec(grid.spec())
    assert np.array_equal(grid.theta, again.theta) and np.array_equal(grid.phi, again.phi)


def test_kernels_for_opposite_l_identical(small_config, small_truth):
    grid = small_truth[0]
    ks = radial_kernels(small_config, grid, ls=[-3, 3])
    assert np.array_equal(ks[0].matrix, ks[1].matrix)
    assert np.all(np.isfinite(ks[0].matrix))


def test_kernel_symmetric(small_config, small_truth):
    grid = small_truth[0]
    for l in (0, 2, 5):
        m = radial_kernel(small_config, grid, l).matrix
        assert np.max(np.abs(m - m.T)) <= 1e-14 * np.max(np.abs(m))


def test_kernel_matches_direct_quadrature(small_config, small_truth):
    grid = small_truth[0]
    l = 2
    m = radial_kernel(small_config, grid, l).matrix
    i, j = 20, 23
    ts, ti = grid.theta[i], grid.theta[j]
    dphi = np.arange(grid.n_phi) * 2 * np.pi / grid.n_phi
    f = tpa_pointwise(small_config, ts, dphi, ti, 0.0)
    direct = np.mean(f * np.exp(-1j * l * (dphi - np.pi))) * math.sqrt(ts * ti)
    assert m[i, j] == pytest.approx(direct, rel=1e-10, abs=1e-15)


def test_kernel_parseval():
    # 256 azimuthal nodes resolve the full bandwidth, so the omitted
    # Nyquist harmonic is negligible
    cfg = SourceConfig(gap_distance=15e-3, n_theta=48, n_phi=256, l_max=127)
    grid = build_grid(cfg)
    ks = radial_kernels(cfg, grid, ls=range(-127, 128))
    lhs = sum(np.sum(np.abs(k.matrix) ** 2) for k in ks)
    dphi = np.arange(grid.n_phi) * 2 * np.pi / grid.n_phi
    ts, ti, dp = np.meshgrid(grid.theta, grid.theta, dphi, indexing="ij")
    f = tpa_pointwise(cfg, ts, dp, ti, 0.0)
    rhs = np.sum(np.mean(np.abs(f) ** 2, axis=-1) * np.outer(grid.theta, grid.theta))
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_first_donut_where_psi_is_two_pi():
    cfg = SourceConfig(gap_distance=15e-3, n_theta=256, n_phi=64, l_max=4)
    grid = build_grid(cfg)

    def psi(theta):
        # independent evaluation for an anti-collinear pair, |q_s - q_i| = 2 k theta
        q2 = (2 * cfg.k * theta) ** 2
        return (q2 / (4 * cfg.crystal_index * cfg.k) * cfg.crystal_length
                + math.pi * cfg.gap_distance / cfg.pi_distance
                + q2 * cfg.gap_distance / (4 * cfg.k))

    star = brentq(lambda t: psi(t) - 2 * math.pi, 1e-5, grid.theta_max)
    diag = np.abs(np.diag(radial_kernel(cfg, grid, 0).matrix))
    inner = grid.theta < 1.6 * star
    peak = grid.theta[inner][np.argmax(diag[inner])]
    assert abs(peak - star) < 0.05 * star


def test_quadrature_warning_on_coarse_phi():
    cfg = SourceConfig(gap_distance=15e-3, n_theta=32, n_phi=16, l_max=2)
    grid = build_grid(cfg)
    with pytest.warns(QuadratureWarning):
        radial_kernels(cfg, grid, check_convergence=True)


def test_l_limits():
    cfg = SourceConfig(n_theta=32, n_phi=16, l_max=12)
    grid = build_grid(cfg)
    with pytest.raises(ValueError):
        radial_kernel(cfg, grid, 13)
    with pytest.raises(ValueError):
        radial_kernel(cfg, grid, 8)
