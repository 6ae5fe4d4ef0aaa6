"""Two-crystal source configuration, angular grids and the two-photon amplitude.

Angles are emission angles in radians (small-angle regime), transverse wave
vectors are ``q = k * theta`` with ``k = 2 pi / detect_wavelength``.  The
two-photon amplitude (TPA) of the two-crystal (SU(1,1)) scheme is

    F = E_p(|q_s + q_i|) * sinc(D L_c / 2) * exp(i D L_c / 2) * (1 + exp(i Psi)) / 2

with the phase mismatch ``D = |q_s - q_i|^2 / (4 n k) + D0`` inside a crystal
of index ``n`` and the interferometer phase

    Psi = D L_c + pi L / L_pi + |q_s - q_i|^2 L / (4 k) + kappa P,

i.e. the crystal mismatch plus the same paraxial mismatch accumulated in the
air gap, a calibrated dispersive offset and the Kerr phase of the pump.

Because the pump carries no orbital angular momentum, ``F`` depends on the
azimuths only through ``phi_s - phi_i`` and splits into independent radial
kernels, one per OAM index ``l``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

THETA_CAP = 0.2
TAIL_FRACTION = 0.01


class ConfigError(ValueError):
    """Invalid source configuration or configuration file."""


class QuadratureWarning(UserWarning):
    """The azimuthal quadrature did not converge to the requested tolerance."""


@dataclass(frozen=True)
class SourceConfig:
    """Physical parameters of the two-crystal source (SI units).

    ``crystal_index`` scales the wave number inside the crystals; ``l_max``,
    ``p_max``, ``n_theta`` and ``n_phi`` are numerical settings carried with
    the configuration so that a config file fully specifies a run.
    """

    pump_wavelength: float = 354.67e-9
    detect_wavelength: float = 710e-9
    crystal_length: float = 2e-3
    gap_distance: float = 18e-3
    pump_fwhm: float = 170e-6
    pi_distance: float = 18e-3
    gain: float = 7.6
    kerr_coeff: float = 0.0
    pump_power: float = 0.0
    collinear_mismatch: float = 0.0
    crystal_index: float = 1.6637
    focal_length: float = 0.2
    l_max: int = 12
    p_max: int = 8
    n_theta: int = 256
    n_phi: int = 256

    def __post_init__(self):
        for name in ("pump_wavelength", "detect_wavelength", "crystal_length",
                     "gap_distance", "pump_fwhm", "pi_distance", "crystal_index",
                     "focal_length"):
            value = getattr(self, name)
            if not (value > 0) or math.isnan(value):
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")
        if not self.gain >= 0:
            raise ConfigError(f"gain must be >= 0, got {self.gain!r}")
        if not self.pump_power >= 0:
            raise ConfigError(f"pump_power must be >= 0, got {self.pump_power!r}")
        if abs(self.detect_wavelength - 2 * self.pump_wavelength) > 20e-9:
            raise ConfigError(
                "detect_wavelength must lie within 20 nm of twice the pump wavelength")
        if self.l_max < 0 or self.p_max < 1:
            raise ConfigError("l_max must be >= 0 and p_max >= 1")
        if self.n_theta < 16 or self.n_phi < 16:
            raise ConfigError("n_theta and n_phi must be >= 16")

    @property
    def k(self) -> float:
        """Vacuum wave number of the detected light (1/m)."""
        return 2 * math.pi / self.detect_wavelength

    @property
    def pump_waist(self) -> float:
        """Field 1/e radius of the Gaussian pump with the configured intensity FWHM."""
        return self.pump_fwhm / math.sqrt(2 * math.log(2))

    @property
    def kerr_phase(self) -> float:
        return self.kerr_coeff * self.pump_power

    def replace(self, **changes) -> "SourceConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(SourceConfig)}


def _parse_values(text: str, source: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        try:
            values[key] = int(value) if _FIELD_TYPES[key] in (int, "int") else float(value)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: bad value {value!r} for config key {key!r}") from None
    return values


def parse_config(text: str, source: str = "<config>", base: SourceConfig | None = None) -> SourceConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys missing from ``text`` keep their value in ``base`` (defaults if None).
    """
    values = _parse_values(text, source)
    try:
        return replace(base, **values) if base is not None else SourceConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> SourceConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def format_config(config: SourceConfig) -> str:
    lines = []
    for name, value in config.to_dict().items():
        lines.append(f"{name} = {value!r}")
    return "\n".join(lines) + "\n"


def save_config(config: SourceConfig, path) -> None:
    Path(path).write_text(format_config(config))


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Half-offset uniform theta nodes and uniform phi nodes on [0, 2 pi).

    ``weights`` is the midpoint rule for ``int theta dtheta dphi``.
    """

    theta: np.ndarray
    phi: np.ndarray

    @classmethod
    def uniform(cls, theta_max: float, n_theta: int, n_phi: int) -> "PolarGrid":
        theta = (np.arange(n_theta) + 0.5) * (theta_max / n_theta)
        phi = np.arange(n_phi) * (2 * np.pi / n_phi)
        return cls(theta=theta, phi=phi)

    @property
    def n_theta(self) -> int:
        return self.theta.size

    @property
    def n_phi(self) -> int:
        return self.phi.size

    @property
    def dtheta(self) -> float:
        return float(self.theta[1] - self.theta[0])

    @property
    def dphi(self) -> float:
        return 2 * np.pi / self.phi.size

    @property
    def theta_max(self) -> float:
        return float(self.theta[-1] + self.dtheta / 2)

    @property
    def theta_weights(self) -> np.ndarray:
        return self.theta * self.dtheta

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.theta_weights, np.full(self.n_phi, self.dphi))

    def with_phi(self, n_phi: int) -> "PolarGrid":
        return PolarGrid.uniform(self.theta_max, self.n_theta, n_phi)

    def spec(self) -> dict:
        return {"theta_max": self.theta_max, "n_theta": self.n_theta, "n_phi": self.n_phi}

    @classmethod
    def from_spec(cls, spec: dict) -> "PolarGrid":
        return cls.uniform(float(spec["theta_max"]), int(spec["n_theta"]), int(spec["n_phi"]))


def _pump_envelope(config: SourceConfig, q_sum_sq):
    w = config.pump_waist
    if math.isinf(w):
        return np.where(q_sum_sq == 0, 1.0, 0.0)
    return np.exp(-q_sum_sq * (w * w / 4))


def _tpa(config: SourceConfig, qs2, qi2, qdot):
    """TPA from |q_s|^2, |q_i|^2 and q_s.q_i; symmetric in signal and idler."""
    k = config.k
    lc = config.crystal_length
    q_sum_sq = np.maximum(qs2 + qi2 + 2 * qdot, 0.0)
    q_diff_sq = np.maximum(qs2 + qi2 - 2 * qdot, 0.0)
    mismatch = q_diff_sq / (4 * config.crystal_index * k) + config.collinear_mismatch
    half = mismatch * (lc / 2)
    psi = (mismatch * lc
           + math.pi * config.gap_distance / config.pi_distance
           + q_diff_sq * (config.gap_distance / (4 * k))
           + config.kerr_phase)
    single = np.sinc(half / np.pi) * np.exp(1j * half)
    return _pump_envelope(config, q_sum_sq) * single * (1 + np.exp(1j * psi)) / 2


def tpa_pointwise(config: SourceConfig, theta_s, phi_s, theta_i, phi_i):
    """Two-photon amplitude for signal/idler emission angles (broadcasts)."""
    k = config.k
    theta_s, phi_s, theta_i, phi_i = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (theta_s, phi_s, theta_i, phi_i)))
    qs2 = (k * theta_s) ** 2
    qi2 = (k * theta_i) ** 2
    qdot = (k * theta_s) * (k * theta_i) * np.cos(phi_s - phi_i)
    out = _tpa(config, qs2, qi2, qdot)
    return out if out.ndim else complex(out)


def interference_phase(config: SourceConfig, theta_s, theta_i, dphi=np.pi):
    """Interferometer phase Psi for the given angles (default anti-collinear pair)."""
    k = config.k
    qs2 = (k * np.asarray(theta_s, float)) ** 2
    qi2 = (k * np.asarray(theta_i, float)) ** 2
    qdot = k * np.asarray(theta_s, float) * k * np.asarray(theta_i, float) * np.cos(dphi)
    mismatch = np.maximum(qs2 + qi2 - 2 * qdot, 0) / (4 * config.crystal_index * config.k)
    mismatch = mismatch + config.collinear_mismatch
    q_diff_sq = np.maximum(qs2 + qi2 - 2 * qdot, 0)
    return (mismatch * config.crystal_length
            + np.pi * config.gap_distance / config.pi_distance
            + q_diff_sq * (config.gap_distance / (4 * config.k))
            + config.kerr_phase)


def emission_envelope(config: SourceConfig, theta) -> np.ndarray:
    """|F|^2 for anti-collinear pairs (q_i = -q_s), the pump-width-free envelope."""
    theta = np.asarray(theta, dtype=float)
    q2 = (config.k * theta) ** 2
    k = config.k
    lc = config.crystal_length
    mismatch = q2 / (config.crystal_index * k) + config.collinear_mismatch
    psi = (mismatch * lc + math.pi * config.gap_distance / config.pi_distance
           + q2 * config.gap_distance / k + config.kerr_phase)
    single = np.sinc(mismatch * lc / 2 / np.pi) ** 2
    return single * np.cos(psi / 2) ** 2


def build_grid(config: SourceConfig, n_theta: int | None = None,
               n_phi: int | None = None) -> PolarGrid:
    """Polar grid whose outer tenth holds less than 1% of the peak envelope.

    The envelope is the anti-collinear |F|^2, so the grid does not depend on
    the pump width.  theta_max grows geometrically from 5 mrad up to 0.2 rad.
    """
    n_theta = config.n_theta if n_theta is None else n_theta
    n_phi = config.n_phi if n_phi is None else n_phi
    if n_theta < 16 or n_phi < 16:
        raise ValueError("n_theta and n_phi must be >= 16")
    probe = np.linspace(0.0, THETA_CAP, 20001)[1:]
    env = emission_envelope(config, probe)
    theta_max = 5e-3
    while True:
        inside = probe <= theta_max
        peak = env[inside].max()
        tail = env[inside & (probe >= 0.9 * theta_max)].max()
        if tail < TAIL_FRACTION * peak:
            break
        if theta_max >= THETA_CAP:
            raise ValueError(
                f"emission tail stays above {TAIL_FRACTION:.0%} of peak up to {THETA_CAP} rad")
        theta_max = min(theta_max * 1.1, THETA_CAP)
    return PolarGrid.uniform(theta_max, n_theta, n_phi)


@dataclass(frozen=True, eq=False)
class RadialKernel:
    """Azimuthal Fourier component ``l`` of the TPA times sqrt(theta_s theta_i)."""

    l: int
    matrix: np.ndarray
    theta: np.ndarray = field(repr=False)


def _dphi_cosines(n_phi: int) -> np.ndarray:
    c = np.cos(2 * np.pi * np.arange(n_phi) / n_phi)
    # exact evenness so that F_l == F_{-l} bit for bit
    c[n_phi // 2 + 1:] = c[1:(n_phi + 1) // 2][::-1]
    return c


def _fourier_rows(config, theta, n_phi, rows, l_abs):
    k = config.k
    qs = k * theta[rows]
    qi = k * theta
    cos_d = _dphi_cosines(n_phi)
    qs2 = (qs * qs)[:, None, None]
    qi2 = (qi * qi)[None, :, None]
    qdot = (qs[:, None] * qi[None, :])[:, :, None] * cos_d[None, None, :]
    amp = _tpa(config, qs2, qi2, qdot)
    spectrum = np.fft.fft(amp, axis=-1)[:, :, l_abs] / n_phi
    return spectrum * np.where(l_abs % 2 == 0, 1.0, -1.0)


def _fourier_components(config, theta, n_phi, l_abs, threads=1, chunk=16):
    n = theta.size
    out = np.empty((l_abs.size, n, n), dtype=complex)
    starts = list(range(0, n, chunk))

    def work(start):
        rows = slice(start, min(start + chunk, n))
        out[:, rows, :] = np.moveaxis(_fourier_rows(config, theta, n_phi, rows, l_abs), -1, 0)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return out


def radial_kernels(config: SourceConfig, grid: PolarGrid, ls=None, threads: int = 1,
                   check_convergence: bool = False, tol: float = 1e-6) -> list[RadialKernel]:
    """Radial kernels for every requested ``l`` (default ``-l_max..l_max``).

    The azimuthal integral over ``phi_s - phi_i`` uses the uniform trapezoid
    rule on the grid's phi nodes.  Kernels for ``l`` and ``-l`` share one
    matrix.  With ``check_convergence`` the quadrature is repeated on twice
    as many nodes and a :class:`QuadratureWarning` is issued when any kernel
    changes by more than ``tol`` (relative Frobenius norm).
    """
    if ls is None:
        ls = range(-config.l_max, config.l_max + 1)
    ls = [int(l) for l in ls]
    l_abs = np.array(sorted({abs(l) for l in ls}))
    if l_abs.size and l_abs.max() > config.l_max:
        raise ValueError(f"|l| must not exceed l_max={config.l_max}")
    if l_abs.size and l_abs.max() >= grid.n_phi // 2:
        raise ValueError("|l| must be below n_phi / 2")
    measure = np.sqrt(np.outer(grid.theta, grid.theta))
    comps = _fourier_components(config, grid.theta, grid.n_phi, l_abs, threads) * measure
    if check_convergence:
        fine = _fourier_components(config, grid.theta, 2 * grid.n_phi, l_abs, threads) * measure
        for la, a, b in zip(l_abs, comps, fine):
            scale = np.linalg.norm(b)
            change = np.linalg.norm(a - b) / scale if scale > 0 else 0.0
            if change > tol:
                warnings.warn(
                    f"azimuthal quadrature for |l|={la} changed by {change:.2e} "
                    f"when doubling n_phi={grid.n_phi}", QuadratureWarning, stacklevel=2)
    by_abs = {int(la): m for la, m in zip(l_abs, comps)}
    return [RadialKernel(l=l, matrix=by_abs[abs(l)], theta=grid.theta) for l in ls]


def radial_kernel(config: SourceConfig, grid: PolarGrid, l: int, **kwargs) -> RadialKernel:
    return radial_kernels(config, grid, [l], **kwargs)[0]
