"""Spatial Schmidt and OAM modes of high-gain PDC from a two-crystal source."""

__version__ = "0.1.0"

from .model import (ConfigError, PolarGrid, QuadratureWarning, RadialKernel, SourceConfig,
                    build_grid, load_config, parse_config, radial_kernel, radial_kernels,
                    tpa_pointwise)
from .schmidt import (GainedSpectrum, SchmidtDecomposition, decompose, mean_intensity,
                      mode_counts, redistribute)
from .synthesis import (Frame, FrameStack, load_stack, render_frame, sample_amplitudes,
                        save_stack, synthesize_stack)
from .reconstruct import (CovarianceMatrix, OAMSpectrum, azimuth_annulus_reduce, covariance,
                          dphi_average, fit_oam_weights, g2_and_K, radial_modes_from_cov,
                          radial_sector_reduce)
from .scans import (ScanResult, calibrate_gain, kerr_calibration, scan_distance, scan_power)
