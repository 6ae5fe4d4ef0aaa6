"""Inverse pipeline: covariance of reduced single-shot spectra and mode recovery."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from .model import PolarGrid
from .schmidt import GainedSpectrum, SchmidtDecomposition
from .synthesis import FrameStack


class ReconstructionWarning(UserWarning):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Spectra:
    """Per-frame 1D spectra ``values[frame, i]`` over ``coords``."""

    values: np.ndarray
    coords: np.ndarray
    kind: str


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    matrix: np.ndarray
    coords: np.ndarray
    kind: str
    n_samples: int

    def quadrant(self, name: str) -> np.ndarray:
        """Block of a signed-theta covariance: '++', '--', '+-' or '-+'.

        Blocks are returned with both axes ordered by increasing |theta|.
        """
        if self.kind != "theta":
            raise ValueError("quadrants exist only for signed-theta covariances")
        n = self.coords.size // 2
        neg = slice(n - 1, None, -1)
        pos = slice(n, None)
        pick = {"+": pos, "-": neg}
        rows, cols = pick[name[0]], pick[name[1]]
        return self.matrix[rows][:, cols]


def _sector_mask(phi: np.ndarray, center: float, half_angle: float) -> np.ndarray:
    offset = np.angle(np.exp(1j * (phi - center)))
    return np.abs(offset) <= half_angle * (1 + 1e-9)


def radial_sector_reduce(stack: FrameStack, half_angle: float = math.radians(4.5)) -> Spectra:
    """Integrate each frame over azimuthal sectors around 0 and pi.

    The result lives on signed theta: ``theta > 0`` from the sector around
    ``phi = 0`` and ``theta < 0`` from the sector around ``phi = pi``.
    Values are photon numbers per (theta bin, sector).
    """
    grid = stack.grid
    if 2 * half_angle < grid.dphi:
        raise ValueError("sector is narrower than one phi node")
    plus = _sector_mask(grid.phi, 0.0, half_angle)
    minus = _sector_mask(grid.phi, math.pi, half_angle)
    frames = stack.frames
    pos = frames[:, :, plus].sum(axis=2, dtype=float) * grid.theta_weights * grid.dphi
    neg = frames[:, :, minus].sum(axis=2, dtype=float) * grid.theta_weights * grid.dphi
    coords = np.concatenate([-grid.theta[::-1], grid.theta])
    return Spectra(np.concatenate([neg[:, ::-1], pos], axis=1), coords, "theta")


def azimuth_annulus_reduce(stack: FrameStack, theta_center: float,
                           half_width: float = 1.1e-3) -> Spectra:
    """Integrate each frame over ``|theta - theta_center| <= half_width``."""
    grid = stack.grid
    if theta_center + half_width < 0 or theta_center - half_width > grid.theta_max:
        raise ValueError("annulus lies outside the grid")
    rows = np.abs(grid.theta - theta_center) <= half_width
    if not rows.any():
        raise ValueError("annulus contains no theta node")
    w = grid.theta_weights[rows] * grid.dphi
    values = np.einsum("njk,j->nk", stack.frames[:, rows, :].astype(float), w)
    return Spectra(values, grid.phi.copy(), "phi")


def donut_peak(stack_or_radial, grid: PolarGrid | None = None) -> float:
    """Theta of the brightest ring of the azimuthally averaged mean intensity."""
    if isinstance(stack_or_radial, FrameStack):
        grid = stack_or_radial.grid
        radial = stack_or_radial.mean_frame().mean(axis=1)
    else:
        radial = np.asarray(stack_or_radial)
    return float(grid.theta[int(np.argmax(radial))])


class CovarianceAccumulator:
    """Mergeable running mean and co-moment (pairwise update of Chan et al.)."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.comoment = np.zeros((dim, dim))

    def update(self, batch: np.ndarray) -> "CovarianceAccumulator":
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        other = CovarianceAccumulator(batch.shape[1])
        other.count = batch.shape[0]
        # shift by the first sample so that constant columns stay exactly zero
        shifted = batch - batch[0]
        shift_mean = shifted.mean(axis=0)
        other.mean = batch[0] + shift_mean
        centered = shifted - shift_mean
        other.comoment = centered.T @ centered
        return self.merge(other)

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.comoment = (self.comoment + other.comoment
                         + np.outer(delta, delta) * (self.count * other.count / n))
        self.mean = self.mean + delta * (other.count / n)
        self.count = n
        return self

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("covariance needs at least two samples")
        cov = self.comoment / (self.count - 1)
        return (cov + cov.T) / 2


def covariance(spectra, coords=None, kind: str | None = None,
               batch: int = 512) -> CovarianceMatrix:
    """Unbiased sample covariance <S S'> - <S><S'> of per-frame spectra."""
    if isinstance(spectra, Spectra):
        coords = spectra.coords if coords is None else coords
        kind = spectra.kind if kind is None else kind
        spectra = spectra.values
    values = np.asarray(spectra, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("covariance needs a (n_frames >= 2, n_coords) array")
    acc = CovarianceAccumulator(values.shape[1])
    for start in range(0, values.shape[0], batch):
        acc.update(values[start:start + batch])
    coords = np.arange(values.shape[1]) if coords is None else np.asarray(coords)
    return CovarianceMatrix(acc.covariance(), coords, kind or "index", values.shape[0])


class RadialModes(NamedTuple):
    weights: np.ndarray
    profiles: np.ndarray
    theta: np.ndarray
    clipped_fraction: float


def radial_modes_from_cov(cov: CovarianceMatrix, p_rec: int = 2, block: str = "auto",
                          theta_max: float | None = None) -> RadialModes:
    """Radial Schmidt modes from the square root of the auto-correlation block.

    ``block='auto'`` averages the ++ and -- quadrants, ``'cross'`` uses the
    +- quadrant.  Negative entries are clipped before the elementwise square
    root; singular values of the result, normalized to unit sum over the
    first ``p_rec + 1``, are the radial weights.
    """
    if block == "auto":
        part = (cov.quadrant("++") + cov.quadrant("--")) / 2
    elif block == "cross":
        part = (cov.quadrant("+-") + cov.quadrant("-+").T) / 2
    else:
        raise ValueError(f"unknown block {block!r}")
    theta = cov.coords[cov.coords.size // 2:]
    if theta_max is not None:
        keep = theta <= theta_max
        part, theta = part[np.ix_(keep, keep)], theta[keep]
    part = (part + part.T) / 2
    total = np.abs(part).sum()
    clipped = -part[part < 0].sum() / total if total > 0 else 0.0
    if clipped > 0.05:
        warnings.warn(f"clipped {clipped:.1%} of the covariance mass before the square root",
                      ReconstructionWarning, stacklevel=2)
    root = np.sqrt(np.clip(part, 0.0, None))
    u, s, _ = np.linalg.svd(root)
    n = p_rec + 1
    s = s[:n]
    vecs = u[:, :n].T
    peak = np.abs(vecs).argmax(axis=1)
    vecs = vecs * np.sign(vecs[np.arange(n), peak])[:, None]
    return RadialModes(s / s.sum(), vecs, theta, float(clipped))


def dphi_average(cov) -> tuple[np.ndarray, np.ndarray]:
    """Average a covariance on a uniform phi grid along phi + phi'.

    Returns ``(dphi, C)`` with ``C[m]`` the circular mean of entries with
    ``phi - phi' = m * 2 pi / n``.
    """
    matrix = cov.matrix if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValueError("covariance must be square")
    cols = np.arange(n)
    rows = (cols[None, :] + np.arange(n)[:, None]) % n
    profile = matrix[rows, cols[None, :]].mean(axis=1)
    return np.arange(n) * (2 * np.pi / n), profile


@dataclass(frozen=True, eq=False)
class OAMSpectrum:
    l_values: np.ndarray
    weights: np.ndarray
    background: float
    residual: float
    K_OAM: float
    scale: float = field(default=1.0, repr=False)

    def weight(self, l: int) -> float:
        return float(self.weights[np.flatnonzero(self.l_values == l)[0]])


def oam_model(dphi, half_weights, background=0.0):
    """``[sum_l w_l exp(i l dphi)]^2 + b`` with ``w_-l = w_l``; ``half_weights`` holds l >= 0."""
    dphi = np.asarray(dphi, dtype=float)
    w = np.asarray(half_weights, dtype=float)
    ls = np.arange(w.size)
    series = w[0] + 2 * np.cos(np.outer(dphi, ls[1:])) @ w[1:]
    return series ** 2 + background


def _sign_patterns(root: np.ndarray, max_flips: int):
    """Candidate signs for ``sqrt(C - min C)``: the series may change sign where it nears zero.

    Flips are placed at local minima of ``root`` on ``[0, pi]`` and mirrored,
    since the series is even in dphi.  The unflipped pattern comes first.
    """
    n = root.size
    half = np.arange(1, n // 2 + 1)
    prev, nxt = root[half - 1], root[(half + 1) % n]
    low = half[(root[half] <= prev) & (root[half] <= nxt) & (root[half] < 0.3 * root.max())]
    low = low[np.argsort(root[low])][:max_flips]
    patterns = [np.ones(n)]
    for mask in range(1, 2 ** low.size):
        flips = np.sort(low[[bool(mask >> b & 1) for b in range(low.size)]])
        sign = np.ones(n // 2 + 1)
        for f in flips:
            sign[f:] *= -1
        full = np.empty(n)
        full[: n // 2 + 1] = sign
        full[n // 2 + 1:] = sign[1:(n + 1) // 2][::-1]
        patterns.append(full)
    return patterns


def fit_oam_weights(dphi, profile, l_fit: int = 3, max_nfev: int = 5000) -> OAMSpectrum:
    """Fit ``[sum_l L_l e^{i l dphi}]^2 + b`` with L_l = L_-l >= 0 and b <= 0.

    Weights are renormalized to ``sum_l L_l = 1`` over ``-l_fit..l_fit``.
    Initial weights come from the cosine transform of ``sqrt(C - min C)``;
    because only the square of the series is observed, the transform is
    also tried with the sign flipped across near-zero minima, and the
    start with the lowest final cost wins.  All starts are deterministic.
    """
    dphi = np.asarray(dphi, dtype=float)
    c = np.asarray(profile, dtype=float)
    if l_fit < 0:
        raise ValueError("l_fit must be >= 0")
    if 4 * l_fit >= c.size:
        raise ValueError(f"l_fit={l_fit} exceeds the bandwidth resolvable with {c.size} samples")
    scale = float(np.abs(c).max())
    if scale == 0:
        raise FitError("covariance profile is identically zero")
    y = c / scale
    ls = np.arange(l_fit + 1)
    basis = np.cos(np.outer(dphi, ls)) * np.where(ls == 0, 1.0, 2.0)

    def residual(x):
        return (basis @ x[:-1]) ** 2 + x[-1] - y

    def jacobian(x):
        series = basis @ x[:-1]
        return np.column_stack([2 * series[:, None] * basis, np.ones_like(series)])

    lower = np.append(np.zeros(l_fit + 1), -np.inf)
    upper = np.append(np.full(l_fit + 1, np.inf), 0.0)
    root = np.sqrt(np.clip(y - y.min(), 0.0, None))
    best = None
    for sign in _sign_patterns(root, max_flips=min(2 * l_fit, 6)):
        init = np.array([np.mean(sign * root * np.cos(l * dphi)) for l in ls])
        if not np.any(root > 0):
            init = np.zeros(l_fit + 1)
            init[0] = math.sqrt(max(y.max(), 1e-12))
        init = np.clip(init, 1e-3 * max(init.max(), 1e-12), None)
        b0 = min(0.0, float(np.min(y - (basis @ init) ** 2)))
        x0 = np.clip(np.append(init, b0), lower, upper)
        result = least_squares(residual, x0, jac=jacobian, bounds=(lower, upper), method="trf",
                               xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
        if result.status > 0 and (best is None or result.cost < best.cost):
            best = result
    if best is None:
        raise FitError("OAM fit did not converge from any start")
    half = best.x[:-1]
    norm = half[0] + 2 * half[1:].sum()
    if norm <= 0:
        raise FitError("fitted weights vanish")
    signed = np.arange(-l_fit, l_fit + 1)
    weights = half[np.abs(signed)] / norm
    rms = float(np.sqrt(np.mean(best.fun ** 2)))
    k_oam = float(1.0 / np.sum(weights ** 2))
    return OAMSpectrum(signed, weights, background=float(best.x[-1] * scale),
                       residual=rms, K_OAM=k_oam, scale=scale * norm ** 2)


class G2Result(NamedTuple):
    g2: float
    K: float
    stderr: float
    defined: bool


def g2_and_K(data, n_sigma: float = 2.0) -> G2Result:
    """g2 = <N^2>/<N>^2 and K = 1/(g2 - 1) for a scalar intensity series.

    A :class:`FrameStack` is reduced to its per-frame integrated intensity.
    K is reported as NaN (``defined=False``) when g2 - 1 is not above
    ``n_sigma`` jackknife standard errors.
    """
    n_series = data.totals() if isinstance(data, FrameStack) else np.asarray(data, float).ravel()
    n = n_series.size
    if n < 2:
        raise ValueError("need at least two samples")
    if n < 100:
        warnings.warn("fewer than 100 samples; g2 is poorly determined",
                      ReconstructionWarning, stacklevel=2)
    mean = n_series.mean()
    g2 = float(np.mean(n_series ** 2) / mean ** 2)
    s1, s2 = n_series.sum(), np.sum(n_series ** 2)
    loo = ((s2 - n_series ** 2) / (n - 1)) / ((s1 - n_series) / (n - 1)) ** 2
    stderr = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    defined = g2 - 1 > n_sigma * stderr
    return G2Result(g2, 1.0 / (g2 - 1) if defined else math.nan, stderr, bool(defined))


# Analytic second moments of the synthesized frames.

def _field_tables(dec: SchmidtDecomposition, spec: GainedSpectrum, grid: PolarGrid):
    scale = 1.0 / np.sqrt(2 * np.pi * grid.theta * grid.dtheta)
    radial = dec.profiles * scale
    g = spec.mode_gains
    occupation = np.sinh(g) ** 2 + 0.5
    anomalous = np.sinh(g) * np.cosh(g)
    return radial, occupation, anomalous


def _azimuthal_sums(dec, spec, grid, rows_a, rows_b, dphis):
    """Correlation functions between theta rows a and b at azimuth offsets.

    Returns ``(normal_s, normal_i, anomalous)`` with shape
    ``(n_dphi, len(rows_a), len(rows_b))`` for ``dphi = phi_b - phi_a``:
    ``normal_s = <E_s*(a) E_s(b)>``, ``normal_i = <E_i*(a) E_i(b)>`` and
    ``anomalous = <E_s(a) E_i(b)>``.
    """
    radial, occ, anom = _field_tables(dec, spec, grid)
    ra, rb = radial[:, :, rows_a], radial[:, :, rows_b]
    ls = dec.l_values
    # idler profiles differ from the signal ones by unit-modulus pair phases,
    # so both arms share the same normal correlation up to the sign of l
    normal = np.einsum("lp,lpa,lpb->lab", occ, ra.conj(), rb)
    oam_sq = (1j ** ls) ** 2
    cross = np.einsum("l,lp,lp,lpa,lpb->lab", oam_sq, anom, dec.pair_phases, ra, rb)
    phase = np.exp(1j * np.outer(dphis, ls))
    normal_s = np.einsum("dl,lab->dab", phase, normal)
    normal_i = np.einsum("dl,lab->dab", phase.conj(), normal)
    anomalous = np.einsum("dl,lab->dab", phase.conj(), cross)
    return normal_s, normal_i, anomalous


def analytic_pixel_covariance(dec, spec, grid, rows_a, rows_b, dphis,
                              detection_mode: str = "degenerate", n_freq: int = 1):
    """Cov(I(theta_a, phi), I(theta_b, phi + dphi)) of rendered frames."""
    ns, ni, an = _azimuthal_sums(dec, spec, grid, rows_a, rows_b, dphis)
    cov = np.abs(ns) ** 2
    if detection_mode == "degenerate":
        _, _, an_rev = _azimuthal_sums(dec, spec, grid, rows_b, rows_a, -np.asarray(dphis))
        cov = cov + np.abs(ni) ** 2 + np.abs(an) ** 2 + np.abs(an_rev.transpose(0, 2, 1)) ** 2
    return cov / n_freq


def analytic_sector_covariance(dec, spec, grid, half_angle: float = math.radians(4.5),
                               detection_mode: str = "degenerate", n_freq: int = 1):
    """Expected covariance of :func:`radial_sector_reduce` spectra (signed theta)."""
    plus = np.flatnonzero(_sector_mask(grid.phi, 0.0, half_angle))
    minus = np.flatnonzero(_sector_mask(grid.phi, math.pi, half_angle))
    rows = np.arange(grid.n_theta)
    w = grid.theta_weights * grid.dphi
    blocks = {}
    for name_a, sec_a in (("+", plus), ("-", minus)):
        for name_b, sec_b in (("+", plus), ("-", minus)):
            offsets = (grid.phi[sec_b][None, :] - grid.phi[sec_a][:, None]).ravel()
            cov = analytic_pixel_covariance(dec, spec, grid, rows, rows, offsets,
                                            detection_mode, n_freq)
            blocks[name_a + name_b] = cov.sum(axis=0) * np.outer(w, w)
    n = grid.n_theta
    full = np.empty((2 * n, 2 * n))
    rev = slice(None, None, -1)
    full[:n, :n] = blocks["--"][rev][:, rev]
    full[:n, n:] = blocks["-+"][rev]
    full[n:, :n] = blocks["+-"][:, rev]
    full[n:, n:] = blocks["++"]
    coords = np.concatenate([-grid.theta[::-1], grid.theta])
    return CovarianceMatrix((full + full.T) / 2, coords, "theta", 0)


def analytic_annulus_covariance(dec, spec, grid, theta_center: float,
                                half_width: float = 1.1e-3,
                                detection_mode: str = "degenerate", n_freq: int = 1):
    """Expected covariance of :func:`azimuth_annulus_reduce` spectra."""
    rows = np.flatnonzero(np.abs(grid.theta - theta_center) <= half_width)
    w = grid.theta_weights[rows] * grid.dphi
    offsets = np.arange(grid.n_phi) * grid.dphi
    per_offset = analytic_pixel_covariance(dec, spec, grid, rows, rows, offsets,
                                           detection_mode, n_freq)
    profile = np.einsum("dab,a,b->d", per_offset, w, w)
    idx = (np.arange(grid.n_phi)[None, :] - np.arange(grid.n_phi)[:, None]) % grid.n_phi
    # entry (k, k') depends on phi_k' - phi_k
    return CovarianceMatrix(profile[idx], grid.phi.copy(), "phi", 0)
