"""Single-shot far-field frames of multimode twin-beam squeezed vacuum.

Every Schmidt pair ``(l, p)`` is a two-mode squeezed vacuum with squeezing
``g_lp = G sqrt(lambda_lp)``.  Amplitudes are drawn from the Wigner function
(vacuum variance 1/2), fields are assembled from the radial profiles with
their ``exp(+-i l phi)`` and ``i**l`` factors, and the vacuum contribution is
subtracted from the rendered intensity so that the shot average equals the
mean photon-number density.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .model import PolarGrid, SourceConfig, build_grid, radial_kernels
from .schmidt import GainedSpectrum, SchmidtDecomposition, decompose, redistribute

DETECTION_MODES = ("degenerate", "signal_only")
STACK_FORMAT = "su11oam-stack/1"


class Amplitudes(NamedTuple):
    """Signal and idler mode amplitudes, shape ``(n_freq, n_l, p_max)``."""

    signal: np.ndarray
    idler: np.ndarray


@dataclass(frozen=True, eq=False)
class Frame:
    intensity: np.ndarray
    shot: int = 0
    normalized: bool = False
    photon_numbers: np.ndarray | None = field(default=None, repr=False)


@dataclass(eq=False)
class FrameStack:
    """Frames ``(n_frames, n_theta, n_phi)`` on one polar grid."""

    frames: np.ndarray
    grid: PolarGrid
    seed: int
    config: SourceConfig
    detection_mode: str
    normalized: bool = False
    n_freq: int = 1
    photon_numbers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.detection_mode not in DETECTION_MODES:
            raise ValueError(f"unknown detection mode {self.detection_mode!r}")
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.grid.n_theta, self.grid.n_phi):
            raise ValueError("frames must have shape (n, n_theta, n_phi) matching the grid")

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i) -> Frame:
        photons = None if self.photon_numbers is None else self.photon_numbers[i]
        return Frame(self.frames[i], shot=i, normalized=self.normalized, photon_numbers=photons)

    def totals(self) -> np.ndarray:
        """Integrated intensity of every frame."""
        return np.einsum("njk,jk->n", self.frames.astype(float), self.grid.weights)

    def mean_frame(self) -> np.ndarray:
        return self.frames.mean(axis=0, dtype=float)


def sample_amplitudes(spec: GainedSpectrum, dec: SchmidtDecomposition,
                      rng: np.random.Generator, n_freq: int = 1) -> Amplitudes:
    """Bogoliubov-transformed vacuum noise for each signal/idler Schmidt pair.

    ``c = cosh(g) a + sinh(g) conj(b)`` and ``d = cosh(g) b + sinh(g) conj(a)``
    with ``a``, ``b`` independent circular Gaussians of ``<|a|^2> = 1/2``.
    The signal mode ``(l, p)`` is paired with the idler mode of OAM ``-l``.
    """
    shape = (n_freq,) + dec.eigenvalues.shape
    g = spec.mode_gains
    a = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / 2
    b = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / 2
    ch, sh = np.cosh(g), np.sinh(g)
    return Amplitudes(ch * a + sh * b.conj(), ch * b + sh * a.conj())


class _Renderer:
    """Precomputed mode tables shared by all frames of one stack."""

    def __init__(self, dec: SchmidtDecomposition, grid: PolarGrid, detection_mode: str):
        if detection_mode not in DETECTION_MODES:
            raise ValueError(f"unknown detection mode {detection_mode!r}")
        if dec.profiles.shape[-1] != grid.n_theta:
            raise ValueError("decomposition and grid have different theta nodes")
        self.mode = detection_mode
        oam = dec.oam_phase(dec.l_values)[:, None, None]
        scale = 1.0 / np.sqrt(2 * np.pi * grid.theta * grid.dtheta)
        self.u_signal = oam * dec.profiles * scale
        self.u_idler = self.u_signal * dec.pair_phases[:, :, None]
        self.azimuth = np.exp(1j * np.outer(dec.l_values, grid.phi))
        arms = 1 if detection_mode == "signal_only" else 2
        vacuum = 0.5 * np.sum(np.abs(self.u_signal) ** 2, axis=(0, 1))
        self.vacuum = arms * vacuum

    def render(self, signal: np.ndarray, idler: np.ndarray) -> np.ndarray:
        """Intensity for amplitudes of shape ``(batch, n_freq, n_l, p_max)``."""
        radial = np.einsum("bflp,lpj->bflj", signal, self.u_signal)
        field_s = np.einsum("bflj,lk->bfjk", radial, self.azimuth)
        intensity = np.sum(field_s.real ** 2 + field_s.imag ** 2, axis=1)
        if self.mode == "degenerate":
            radial = np.einsum("bflp,lpj->bflj", idler, self.u_idler)
            field_i = np.einsum("bflj,lk->bfjk", radial, self.azimuth.conj())
            intensity += np.sum(field_i.real ** 2 + field_i.imag ** 2, axis=1)
        n_freq = signal.shape[1]
        return intensity / n_freq - self.vacuum[None, :, None]


def render_frame(amplitudes: Amplitudes, dec: SchmidtDecomposition, grid: PolarGrid,
                 detection_mode: str = "degenerate") -> Frame:
    """Far-field intensity of one shot (photon-number density per theta dtheta dphi)."""
    signal = np.asarray(amplitudes.signal)
    idler = np.asarray(amplitudes.idler)
    if signal.ndim == 2:
        signal, idler = signal[None], idler[None]
    renderer = _Renderer(dec, grid, detection_mode)
    intensity = renderer.render(signal[None], idler[None])[0]
    photons = np.mean(np.abs(signal) ** 2, axis=0) - 0.5
    return Frame(intensity, photon_numbers=photons)


def shot_rng(seed: int, shot: int) -> np.random.Generator:
    """Independent generator for one frame, fixed by (seed, shot index)."""
    return np.random.default_rng([int(seed), int(shot)])


def synthesize_frames(dec: SchmidtDecomposition, spec: GainedSpectrum, grid: PolarGrid,
                      n_frames: int, seed: int, detection_mode: str = "degenerate",
                      normalize: bool = False, n_freq: int = 1, read_noise: float = 0.0,
                      full_well: float | None = None, threads: int = 1, batch: int = 32,
                      dtype=np.float32):
    """Render ``n_frames`` frames; returns ``(frames, photon_numbers)``.

    Shot ``i`` uses only the generator :func:`shot_rng` ``(seed, i)``, so the
    result does not depend on ``threads`` or ``batch``.  ``read_noise`` is
    the standard deviation of additive Gaussian camera noise and
    ``full_well`` clips each pixel, both in the frame's intensity units.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    renderer = _Renderer(dec, grid, detection_mode)
    frames = np.empty((n_frames, grid.n_theta, grid.n_phi), dtype=dtype)
    photons = np.empty((n_frames,) + dec.eigenvalues.shape)
    weights = grid.weights

    def work(start):
        stop = min(start + batch, n_frames)
        rngs = [shot_rng(seed, i) for i in range(start, stop)]
        amps = [sample_amplitudes(spec, dec, rng, n_freq) for rng in rngs]
        signal = np.stack([a.signal for a in amps])
        idler = np.stack([a.idler for a in amps])
        block = renderer.render(signal, idler)
        if read_noise > 0:
            block += np.stack([rng.normal(0.0, read_noise, block.shape[1:]) for rng in rngs])
        if full_well is not None:
            np.minimum(block, full_well, out=block)
        if normalize:
            block /= np.einsum("njk,jk->n", block, weights)[:, None, None]
        frames[start:stop] = block
        photons[start:stop] = np.mean(np.abs(signal) ** 2, axis=1) - 0.5

    starts = range(0, n_frames, batch)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return frames, photons


def ground_truth(config: SourceConfig, grid: PolarGrid | None = None, threads: int = 1):
    """Grid, decomposition and gained spectrum for ``config``."""
    grid = build_grid(config) if grid is None else grid
    dec = decompose(radial_kernels(config, grid, threads=threads), config.p_max, threads=threads)
    return grid, dec, redistribute(dec, config.gain)


def synthesize_stack(config: SourceConfig, n_frames: int, seed: int,
                     detection_mode: str = "degenerate", normalize: bool = False, *,
                     n_phi: int | None = None, truth=None, threads: int = 1,
                     **options) -> FrameStack:
    """Frame stack for ``config``; identical seeds give bit-identical stacks.

    ``n_phi`` renders on a coarser or finer azimuthal grid than the one used
    for the decomposition; ``truth`` reuses a ``(grid, dec, spec)`` triple.
    Remaining keyword options go to :func:`synthesize_frames`.
    """
    grid, dec, spec = ground_truth(config, threads=threads) if truth is None else truth
    if n_phi is not None:
        grid = grid.with_phi(n_phi)
    frames, photons = synthesize_frames(dec, spec, grid, n_frames, seed, detection_mode,
                                        normalize, threads=threads, **options)
    return FrameStack(frames=frames, grid=grid, seed=int(seed), config=config,
                      detection_mode=detection_mode, normalized=normalize,
                      n_freq=options.get("n_freq", 1), photon_numbers=photons)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_stack(stack: FrameStack, path) -> Path:
    """Raw little-endian float32 raster stack plus a JSON sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(stack.frames, dtype="<f4")
    path.write_bytes(data.tobytes())
    meta = {
        "format": STACK_FORMAT,
        "dtype": "<f4",
        "shape": list(data.shape),
        "order": "frame, theta, phi",
        "grid": stack.grid.spec(),
        "seed": stack.seed,
        "detection_mode": stack.detection_mode,
        "normalized": stack.normalized,
        "n_freq": stack.n_freq,
        "n_frames": len(stack),
        "config": stack.config.to_dict(),
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def load_stack(path) -> FrameStack:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing sidecar {side} for frame stack {path}")
    meta = json.loads(side.read_text())
    if meta.get("format") != STACK_FORMAT:
        raise ValueError(f"{side}: unsupported stack format {meta.get('format')!r}")
    shape = tuple(meta["shape"])
    raw = np.fromfile(path, dtype=meta["dtype"])
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {raw.size}")
    return FrameStack(frames=raw.reshape(shape), grid=PolarGrid.from_spec(meta["grid"]),
                      seed=meta["seed"], config=SourceConfig(**meta["config"]),
                      detection_mode=meta["detection_mode"], normalized=meta["normalized"],
                      n_freq=meta.get("n_freq", 1))
