"""CSV tables, 8-bit graymaps and Cartesian resampling of polar rasters."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .model import PolarGrid

SIG_DIGITS = 9


def fmt(value) -> str:
    """Fixed 9-significant-digit formatting so outputs are byte-reproducible."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    value = float(value)
    if value == 0:
        return "0"
    return f"{value:.{SIG_DIGITS}g}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_matrix_csv(path, matrix, row_coords=None, col_coords=None, corner: str = "") -> Path:
    """Matrix with an optional coordinate header row and first column."""
    matrix = np.asarray(matrix)
    if col_coords is None:
        header = [f"c{j}" for j in range(matrix.shape[1])]
    else:
        header = [fmt(c) for c in col_coords]
    if row_coords is not None:
        header = [corner] + header
        rows = ([rc] + list(r) for rc, r in zip(row_coords, matrix))
    else:
        rows = (list(r) for r in matrix)
    return write_csv(path, header, rows)


def read_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows)


def to_gray(image, lo=None, hi=None) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    lo = np.nanmin(image) if lo is None else lo
    hi = np.nanmax(image) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((image - lo) / span, 0.0, 1.0)
    return np.round(scaled * 255).astype(np.uint8)


def write_pgm(path, image, lo=None, hi=None) -> Path:
    """Binary (P5) 8-bit portable graymap, linear scaling to [lo, hi]."""
    gray = to_gray(image, lo, hi)
    path = Path(path)
    h, w = gray.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def polar_to_cartesian(image, grid: PolarGrid, focal_length: float = 0.2,
                       n_pixels: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Resample an ``(n_theta, n_phi)`` raster onto square camera pixels at ``r = f theta``.

    Returns ``(raster, x)`` with ``x`` the pixel centres in metres.  Pixels
    beyond the grid's outer radius are zero.
    """
    image = np.asarray(image, dtype=float)
    r_max = focal_length * grid.theta_max
    x = (np.arange(n_pixels) + 0.5) / n_pixels * 2 * r_max - r_max
    xx, yy = np.meshgrid(x, x, indexing="xy")
    theta = np.hypot(xx, yy) / focal_length
    phi = np.mod(np.arctan2(yy, xx), 2 * np.pi)
    # periodic padding in phi; the axis value is the azimuthal mean of the first ring
    phi_ext = np.concatenate([grid.phi[-1:] - 2 * np.pi, grid.phi, grid.phi[:1] + 2 * np.pi])
    img_ext = np.concatenate([image[:, -1:], image, image[:, :1]], axis=1)
    theta_ext = np.concatenate([[0.0], grid.theta])
    axis = np.full((1, img_ext.shape[1]), image[0].mean())
    img_ext = np.concatenate([axis, img_ext], axis=0)
    interp = RegularGridInterpolator((theta_ext, phi_ext), img_ext, bounds_error=False,
                                     fill_value=0.0)
    raster = interp(np.stack([theta.ravel(), phi.ravel()], axis=1)).reshape(theta.shape)
    raster[theta > grid.theta_max] = 0.0
    return raster[::-1], x
