"""Schmidt decomposition of the radial kernels and high-gain weight redistribution."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import PolarGrid, RadialKernel

LOG_SPACE_ABOVE = 20.0


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    """Pooled Schmidt eigenvalues and radial profiles, indexed ``[l_index, p]``.

    ``profiles[i, p]`` is the unit-norm (discrete) radial profile of mode
    ``(l_values[i], p)`` on ``theta``, phased real-positive at its largest
    magnitude.  ``pair_phases`` restores the kernel:
    ``K_l = sum_p sqrt(s_lp) * pair_phases * outer(u_lp, u_lp)`` where
    ``s_lp`` are the unnormalized squared singular values.  The physical
    ``i**l`` factor of each mode is kept apart (see :meth:`oam_phase`).
    """

    l_values: np.ndarray
    eigenvalues: np.ndarray
    profiles: np.ndarray
    pair_phases: np.ndarray
    singular_values: np.ndarray
    theta: np.ndarray = field(repr=False)

    @property
    def p_max(self) -> int:
        return self.eigenvalues.shape[1]

    @property
    def l_max(self) -> int:
        return int(np.abs(self.l_values).max())

    def index(self, l: int) -> int:
        hits = np.flatnonzero(self.l_values == l)
        if not hits.size:
            raise KeyError(f"no modes with l={l}")
        return int(hits[0])

    def eigenvalue(self, l: int, p: int) -> float:
        return float(self.eigenvalues[self.index(l), p])

    def profile(self, l: int, p: int) -> np.ndarray:
        return self.profiles[self.index(l), p]

    @staticmethod
    def oam_phase(l) -> complex:
        return 1j ** np.asarray(l)

    def reconstruct_kernel(self, l: int) -> np.ndarray:
        i = self.index(l)
        u = self.profiles[i]
        coeff = self.singular_values[i] * self.pair_phases[i]
        return np.einsum("p,pa,pb->ab", coeff, u, u)


def _phase_fix(vectors: np.ndarray) -> np.ndarray:
    """Rotate each row so that its largest-magnitude entry is real positive."""
    peak = np.abs(vectors).argmax(axis=1)
    rows = np.arange(vectors.shape[0])
    ref = vectors[rows, peak]
    out = vectors * (np.abs(ref) / ref)[:, None]
    out[rows, peak] = np.abs(ref)
    return out


def _svd_modes(matrix: np.ndarray, p_max: int):
    if not np.all(np.isfinite(matrix)):
        raise np.linalg.LinAlgError("kernel has non-finite entries")
    u, s, _ = np.linalg.svd(matrix)
    s = s[:p_max]
    profiles = _phase_fix(u[:, :p_max].T)
    # the kernel is complex symmetric, so each left vector pairs with its own
    # transpose up to one phase: u^H K conj(u) = s * phase
    proj = np.einsum("pa,ab,pb->p", profiles.conj(), matrix, profiles.conj())
    with np.errstate(invalid="ignore", divide="ignore"):
        phases = np.where(np.abs(proj) > 0, proj / np.abs(proj), 1.0)
    return s, profiles, phases


def decompose(kernels: Sequence[RadialKernel], p_max: int = 8,
              threads: int = 1) -> SchmidtDecomposition:
    """Per-l SVD, eigenvalues pooled over all (l, p) and normalized to unit sum."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    kernels = sorted(kernels, key=lambda kern: kern.l)
    ls = np.array([kern.l for kern in kernels])
    if len(set(ls.tolist())) != ls.size:
        raise ValueError("duplicate l in kernels")
    l_top = int(np.abs(ls).max())
    if set(ls.tolist()) != set(range(-l_top, l_top + 1)):
        raise ValueError("kernels must cover l = -l_max..l_max")
    n = kernels[0].matrix.shape[0]
    if p_max > n:
        raise ValueError("p_max exceeds the number of theta nodes")

    unique = {}
    for kern in kernels:
        unique.setdefault(abs(kern.l), kern.matrix)
    keys = sorted(unique)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = dict(zip(keys, pool.map(lambda a: _svd_modes(unique[a], p_max), keys)))
    else:
        results = {a: _svd_modes(unique[a], p_max) for a in keys}

    sv = np.array([results[abs(l)][0] for l in ls])
    profiles = np.array([results[abs(l)][1] for l in ls])
    phases = np.array([results[abs(l)][2] for l in ls])
    lam = sv ** 2
    lam = lam / lam.sum()
    return SchmidtDecomposition(l_values=ls, eigenvalues=lam, profiles=profiles,
                                pair_phases=phases, singular_values=sv,
                                theta=kernels[0].theta)


@dataclass(frozen=True, eq=False)
class GainedSpectrum:
    """High-gain mode weights ``Lambda_lp`` on the decomposition's (l, p) layout."""

    l_values: np.ndarray
    weights: np.ndarray
    gain: float
    G0: float
    mode_gains: np.ndarray = field(repr=False)

    @property
    def l_marginal(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def p_marginal(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def weight(self, l: int, p: int) -> float:
        return float(self.weights[np.flatnonzero(self.l_values == l)[0], p])


def log_sinh2(x: np.ndarray) -> np.ndarray:
    """log(sinh(x)^2), switching to the asymptotic form above x = 20."""
    x = np.asarray(x, dtype=float)
    small = np.minimum(x, LOG_SPACE_ABOVE)
    with np.errstate(divide="ignore"):
        direct = 2 * np.log(np.sinh(small))
    large = 2 * x - 2 * np.log(2.0) + 2 * np.log1p(-np.exp(-2 * np.maximum(x, LOG_SPACE_ABOVE)))
    return np.where(x > LOG_SPACE_ABOVE, large, direct)


def redistribute(dec: SchmidtDecomposition, G0: float) -> GainedSpectrum:
    """Gain-redistributed weights sinh^2(G sqrt(lambda)) / sum, G = G0 / sqrt(lambda_max)."""
    if not G0 >= 0:
        raise ValueError("G0 must be >= 0")
    lam = dec.eigenvalues
    gain = G0 / np.sqrt(lam.max())
    g = gain * np.sqrt(lam)
    if G0 == 0:
        weights = lam / lam.sum()
    else:
        logw = log_sinh2(g)
        weights = np.exp(logw - logsumexp(logw))
    return GainedSpectrum(l_values=dec.l_values.copy(), weights=weights,
                          gain=float(gain), G0=float(G0), mode_gains=g)


class ModeCounts(NamedTuple):
    K: float
    K_OAM: float


def mode_counts(spec) -> ModeCounts:
    """Schmidt number over all (l, p) and over the OAM marginal.

    Accepts a :class:`GainedSpectrum` or a :class:`SchmidtDecomposition`
    (low-gain counts).
    """
    weights = spec.weights if isinstance(spec, GainedSpectrum) else spec.eigenvalues
    weights = weights / weights.sum()
    K = 1.0 / np.sum(weights ** 2)
    K_oam = 1.0 / np.sum(weights.sum(axis=1) ** 2)
    return ModeCounts(float(K), float(K_oam))


def radial_intensity(dec: SchmidtDecomposition, spec: GainedSpectrum, grid: PolarGrid) -> np.ndarray:
    """Azimuthally uniform mean intensity as a function of theta, unit integral."""
    if dec.profiles.shape[-1] != grid.n_theta:
        raise ValueError("decomposition and grid have different theta nodes")
    density = np.einsum("lp,lpj->j", spec.weights, np.abs(dec.profiles) ** 2)
    radial = density / (2 * np.pi * grid.theta * grid.dtheta)
    return radial / np.sum(radial * grid.theta_weights * 2 * np.pi)


def mean_intensity(dec: SchmidtDecomposition, spec: GainedSpectrum, grid: PolarGrid) -> np.ndarray:
    """Mean far-field intensity I(theta, phi), normalized to unit integral."""
    radial = radial_intensity(dec, spec, grid)
    return np.repeat(radial[:, None], grid.n_phi, axis=1)


def count_rings(radial: np.ndarray, threshold: float = 0.05) -> int:
    """Local maxima of a radial profile above ``threshold`` times its peak."""
    r = np.asarray(radial)
    inner = (r[1:-1] > r[:-2]) & (r[1:-1] >= r[2:]) & (r[1:-1] > threshold * r.max())
    return int(inner.sum())


def profile_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap of profile magnitudes, sum |a||b| / (|a| |b|)."""
    a = np.abs(a)
    b = np.abs(b)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def weights_rows(dec: SchmidtDecomposition, spec: GainedSpectrum):
    """Rows (l, p, lambda_lp, Lambda_lp) sorted by descending Lambda."""
    rows = []
    for i, l in enumerate(dec.l_values):
        for p in range(dec.p_max):
            rows.append((int(l), p, float(dec.eigenvalues[i, p]), float(spec.weights[i, p])))
    rows.sort(key=lambda r: (-r[3], abs(r[0]), -r[0], r[1]))
    return rows
