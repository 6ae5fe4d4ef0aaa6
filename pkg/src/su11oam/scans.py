"""Parameter scans of the mode numbers, Kerr-shift and gain calibrations."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .model import SourceConfig, build_grid, radial_kernels, tpa_pointwise
from .schmidt import (GainedSpectrum, SchmidtDecomposition, decompose, mode_counts,
                      radial_intensity, redistribute)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScanPoint:
    value: float
    G0: float
    K: float
    K_OAM: float
    collinear: float
    l_values: np.ndarray
    l_weights: np.ndarray
    p_weights: np.ndarray
    decomposition: SchmidtDecomposition = field(repr=False)
    spectrum: GainedSpectrum = field(repr=False)
    theta: np.ndarray = field(repr=False)
    radial: np.ndarray = field(repr=False)

    def l_weight(self, l: int) -> float:
        return float(self.l_weights[np.flatnonzero(self.l_values == l)[0]])


@dataclass(frozen=True, eq=False)
class ScanResult:
    variable: str
    values: np.ndarray
    points: list
    config: SourceConfig

    def __post_init__(self):
        if len(self.points) != self.values.size:
            raise ValueError("one record per scan value required")
        if self.values.size > 1 and not (np.all(np.diff(self.values) > 0)
                                         or np.all(np.diff(self.values) < 0)):
            raise ValueError("scan values must be strictly monotone")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    @property
    def K(self) -> np.ndarray:
        return self.column("K")

    @property
    def K_OAM(self) -> np.ndarray:
        return self.column("K_OAM")

    def rows(self, l_show: int = 5):
        """Header and one row per point: value, G0, K, K_OAM, collinear, Lambda_0..l_show."""
        header = [self.variable, "G0", "K", "K_OAM", "collinear"] + [f"Lambda_l{l}" for l in range(l_show + 1)]
        rows = []
        for p in self.points:
            lw = [p.l_weight(l) if l <= p.l_values.max() else 0.0 for l in range(l_show + 1)]
            rows.append([p.value, p.G0, p.K, p.K_OAM, p.collinear] + lw)
        return header, rows


def collinear_intensity(dec: SchmidtDecomposition, spec: GainedSpectrum, grid) -> float:
    """Mean intensity at the innermost theta node relative to its peak."""
    radial = radial_intensity(dec, spec, grid)
    return float(radial[0] / radial.max())


def _evaluate(config: SourceConfig, value: float, dec=None, grid=None) -> ScanPoint:
    if dec is None:
        grid = build_grid(config)
        dec = decompose(radial_kernels(config, grid), config.p_max)
    spec = redistribute(dec, config.gain)
    counts = mode_counts(spec)
    radial = radial_intensity(dec, spec, grid)
    return ScanPoint(value=float(value), G0=float(config.gain), K=counts.K,
                     K_OAM=counts.K_OAM, collinear=float(radial[0] / radial.max()),
                     l_values=spec.l_values.copy(), l_weights=spec.l_marginal,
                     p_weights=spec.p_marginal, decomposition=dec, spectrum=spec,
                     theta=grid.theta, radial=radial)


def _run(jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda job: job(), jobs))
    return [job() for job in jobs]


def _check_values(values: Sequence[float], name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError(f"empty {name} range")
    return values


def scan_power(config: SourceConfig, powers: Sequence[float], gain_coeff: float | None = None,
               threads: int = 1) -> ScanResult:
    """Mode counts versus pump power with ``G0 = gain_coeff * sqrt(P)`` and Kerr phase ``kappa P``.

    Without ``gain_coeff`` it is taken from the configuration,
    ``gain / sqrt(pump_power)``.  The decomposition is shared by all points
    when ``kerr_coeff`` is zero.
    """
    powers = _check_values(powers, "power")
    if np.any(powers <= 0):
        raise ValueError("powers must be > 0")
    if gain_coeff is None:
        if config.pump_power <= 0:
            raise ValueError("gain_coeff needed when the config has no pump_power")
        gain_coeff = config.gain / math.sqrt(config.pump_power)
    configs = [config.replace(pump_power=float(P), gain=float(gain_coeff * math.sqrt(P)))
               for P in powers]
    if config.kerr_coeff == 0:
        grid = build_grid(config)
        dec = decompose(radial_kernels(config, grid, threads=threads), config.p_max, threads=threads)
        jobs = [lambda c=c, P=P: _evaluate(c, P, dec, grid) for c, P in zip(configs, powers)]
    else:
        jobs = [lambda c=c, P=P: _evaluate(c, P) for c, P in zip(configs, powers)]
    return ScanResult("pump_power", powers, _run(jobs, threads), config)


def scan_distance(config: SourceConfig, distances: Sequence[float], threads: int = 1) -> ScanResult:
    """Mode counts and collinear intensity versus the gap between the crystals."""
    distances = _check_values(distances, "distance")
    if np.any(distances < 7e-3 - 1e-12) or np.any(distances > 27e-3 + 1e-12):
        raise ValueError("distances must lie within 7..27 mm")
    jobs = [lambda L=L: _evaluate(config.replace(gap_distance=float(L)), L) for L in distances]
    return ScanResult("gap_distance", distances, _run(jobs, threads), config)


def collinear_tpa(config: SourceConfig) -> float:
    """|F|^2 for both photons emitted exactly along the pump."""
    return abs(tpa_pointwise(config, 0.0, 0.0, 0.0, 0.0)) ** 2


def collinear_minimum(config: SourceConfig, window: float | None = None) -> float:
    """Gap distance of complete collinear destructive interference nearest L_pi.

    Searched over ``L_pi +- window`` (default one L_pi) for the configured
    pump power and Kerr coefficient.
    """
    window = config.pi_distance if window is None else window
    lo = max(config.pi_distance - window, 1e-6)
    hi = config.pi_distance + window
    res = minimize_scalar(lambda L: collinear_tpa(config.replace(gap_distance=L)),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * config.pi_distance})
    return float(res.x)


class KerrCalibration(NamedTuple):
    kappa: float
    offset: float
    residual: float


def kerr_phase_from_shift(L_min, pi_distance: float = 18e-3):
    """Pump phase implied by a shifted collinear minimum, pi (L_pi - L_min) / L_pi."""
    return np.pi * (pi_distance - np.asarray(L_min, dtype=float)) / pi_distance


def kerr_calibration(observations, pi_distance: float = 18e-3) -> KerrCalibration:
    """Linear fit of the Kerr phase versus power from ``(P, L_min)`` pairs.

    ``L_min`` must not increase with ``P``; the slope is ``kappa``.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 2 or obs.shape[0] < 2:
        raise CalibrationError("need at least two (P, L_min) observations")
    obs = obs[np.argsort(obs[:, 0])]
    if np.any(np.diff(obs[:, 0]) == 0):
        raise CalibrationError("duplicate powers")
    if np.any(np.diff(obs[:, 1]) > 0):
        raise CalibrationError("L_min must decrease monotonically with power")
    phase = kerr_phase_from_shift(obs[:, 1], pi_distance)
    slope, offset = np.polyfit(obs[:, 0], phase, 1)
    resid = phase - (slope * obs[:, 0] + offset)
    return KerrCalibration(float(slope), float(offset), float(np.sqrt(np.mean(resid ** 2))))


@dataclass(frozen=True)
class GainCalibration:
    """Fit of ``I = amplitude * sinh^2(coeff * sqrt(P))``."""

    coeff: float
    amplitude: float
    residual: float

    def G0(self, power):
        return self.coeff * np.sqrt(np.asarray(power, dtype=float))

    def intensity(self, power):
        return self.amplitude * np.sinh(self.G0(power)) ** 2


def calibrate_gain(data, n_grid: int = 400) -> GainCalibration:
    """Least-squares fit of PDC intensity versus pump power to ``A sinh^2(c sqrt(P))``.

    Residuals are relative so that the spontaneous (low-power) and
    high-gain points carry comparable weight.  The coefficient is bracketed
    by a log-spaced grid search before refinement.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise CalibrationError("need at least three (P, I) points")
    arr = arr[np.argsort(arr[:, 0])]
    P, I = arr[:, 0], arr[:, 1]
    if np.any(P <= 0) or np.any(I <= 0):
        raise CalibrationError("powers and intensities must be > 0")
    if np.any(np.diff(I) <= 0):
        raise CalibrationError("intensity must increase with power")
    root = np.sqrt(P)

    def best_amplitude(c):
        shape = np.sinh(c * root) ** 2
        # minimizes sum((A shape / I - 1)^2)
        ratio = shape / I
        return np.sum(ratio) / np.sum(ratio ** 2)

    def cost(c):
        shape = np.sinh(c * root) ** 2
        return np.sum((best_amplitude(c) * shape / I - 1) ** 2)

    top = 30.0 / root.max()
    trial = np.geomspace(top * 1e-6, top, n_grid)
    with np.errstate(over="ignore", invalid="ignore"):
        costs = np.array([cost(c) for c in trial])
    costs = np.where(np.isfinite(costs), costs, np.inf)
    c0 = trial[int(np.argmin(costs))]
    x0 = np.array([math.log(best_amplitude(c0)), math.log(c0)])

    def residual(x):
        return np.exp(x[0]) * np.sinh(np.exp(x[1]) * root) ** 2 / I - 1

    fit = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not fit.success:
        raise CalibrationError(f"gain fit failed: {fit.message}")
    return GainCalibration(coeff=float(np.exp(fit.x[1])), amplitude=float(np.exp(fit.x[0])),
                           residual=float(np.sqrt(np.mean(fit.fun ** 2))))
