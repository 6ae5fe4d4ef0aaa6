"""Command-line front end: ``su11oam <subcommand>``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exports import polar_to_cartesian, read_csv, write_csv, write_matrix_csv, write_pgm
from .model import ConfigError, SourceConfig, format_config, load_config, parse_config
from .reconstruct import (FitError, azimuth_annulus_reduce, covariance, donut_peak, dphi_average,
                          fit_oam_weights, g2_and_K, radial_modes_from_cov, radial_sector_reduce)
from .scans import CalibrationError, calibrate_gain, kerr_calibration, scan_distance, scan_power
from .schmidt import mean_intensity, mode_counts, weights_rows
from .synthesis import STACK_FORMAT, ground_truth, load_stack, save_stack, synthesize_stack

MANIFEST_FORMAT = "su11oam-manifest/1"


class CommandError(Exception):
    pass


def _config(args) -> SourceConfig:
    config = load_config(args.config) if args.config else SourceConfig()
    if args.set:
        config = parse_config("\n".join(args.set), source="--set", base=config)
    return config


def _write_manifest(out: Path, args, argv, config, started, outputs):
    manifest = {
        "format": MANIFEST_FORMAT,
        "package_version": __version__,
        "stack_format": STACK_FORMAT,
        "subcommand": args.command,
        "argv": list(argv),
        "config_path": str(args.config) if args.config else None,
        "config": config.to_dict() if config is not None else None,
        "out": str(out),
        "seed": args.seed,
        "threads": args.threads,
        "outputs": sorted(outputs),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _profile_table(dec, l_show):
    header = ["theta"]
    cols = []
    for l in range(0, min(l_show, dec.l_max) + 1):
        for p in range(dec.p_max):
            u = dec.profile(l, p)
            header += [f"re_l{l}_p{p}", f"im_l{l}_p{p}"]
            cols += [u.real, u.imag]
    return header, np.column_stack([dec.theta] + cols)


def cmd_decompose(args, config, out):
    grid, dec, spec = ground_truth(config, threads=args.threads)
    header, table = _profile_table(dec, args.l_show)
    write_csv(out / "modes.csv", header, table)
    write_csv(out / "weights.csv", ["l", "p", "lambda", "Lambda"], weights_rows(dec, spec))
    image = mean_intensity(dec, spec, grid)
    write_matrix_csv(out / "mean_intensity.csv", image, grid.theta, grid.phi, corner="theta\\phi")
    raster, _ = polar_to_cartesian(image, grid, config.focal_length, args.pixels)
    write_pgm(out / "mean_intensity.pgm", raster)
    counts = mode_counts(spec)
    low = mode_counts(dec)
    summary = {"K": counts.K, "K_OAM": counts.K_OAM, "K_low_gain": low.K,
               "K_OAM_low_gain": low.K_OAM, "G": spec.gain, "G0": spec.G0,
               "theta_max": grid.theta_max}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"K = {counts.K:.3f}  K_OAM = {counts.K_OAM:.3f}")
    return ["modes.csv", "weights.csv", "mean_intensity.csv", "mean_intensity.pgm", "summary.json"]


def cmd_synthesize(args, config, out):
    stack = synthesize_stack(config, args.frames, args.seed, args.mode, args.normalize,
                             n_phi=args.n_phi, threads=args.threads, n_freq=args.n_freq,
                             read_noise=args.read_noise, full_well=args.full_well)
    path = out / "stack.f32"
    side = save_stack(stack, path)
    outputs = [path.name, side.name]
    for i in range(min(args.export_frames, len(stack))):
        raster, _ = polar_to_cartesian(stack.frames[i], stack.grid, config.focal_length, args.pixels)
        name = f"frame_{i:05d}.pgm"
        write_pgm(out / name, raster)
        outputs.append(name)
    print(f"wrote {len(stack)} frames to {path}")
    return outputs


def _reconstruct_radial(args, stack, out):
    spectra = radial_sector_reduce(stack, np.radians(args.half_angle))
    cov = covariance(spectra)
    write_matrix_csv(out / "cov.csv", cov.matrix, cov.coords, cov.coords, corner="theta\\theta")
    modes = radial_modes_from_cov(cov, args.p_rec, block=args.block)
    write_csv(out / "modes_rec.csv", ["theta"] + [f"u_p{p}" for p in range(modes.profiles.shape[0])],
              np.column_stack([modes.theta, modes.profiles.T]))
    write_csv(out / "weights_rec.csv", ["p", "Lambda"],
              [(p, w) for p, w in enumerate(modes.weights)])
    print("Lambda_p = " + ", ".join(f"{w:.4f}" for w in modes.weights))
    return ["cov.csv", "modes_rec.csv", "weights_rec.csv"]


def _reconstruct_oam(args, stack, out):
    center = donut_peak(stack) if args.theta_center is None else args.theta_center
    spectra = azimuth_annulus_reduce(stack, center, args.half_width)
    cov = covariance(spectra)
    dphi, profile = dphi_average(cov)
    write_csv(out / "c_dphi.csv", ["dphi", "C"], np.column_stack([dphi, profile]))
    fit = fit_oam_weights(dphi, profile, args.l_fit)
    write_csv(out / "oam_weights.csv", ["l", "Lambda"], zip(fit.l_values, fit.weights))
    summary = {"K_OAM": fit.K_OAM, "residual": fit.residual, "background": fit.background,
               "theta_center": center, "half_width": args.half_width, "l_fit": args.l_fit,
               "n_frames": len(stack)}
    (out / "oam_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"K_OAM = {fit.K_OAM:.3f}")
    return ["c_dphi.csv", "oam_weights.csv", "oam_summary.json"]


def _reconstruct_g2(args, stack, out):
    res = g2_and_K(stack)
    write_csv(out / "g2.csv", ["g2", "K", "stderr", "defined"], [tuple(res)])
    print(f"g2 = {res.g2:.4f}  K = {res.K:.3f}")
    return ["g2.csv"]


def cmd_reconstruct(args, config, out):
    stack = load_stack(args.stack)
    runner = {"radial": _reconstruct_radial, "oam": _reconstruct_oam, "g2": _reconstruct_g2}
    return runner[args.kind](args, stack, out)


def _scan_values(args):
    if args.values is not None:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    elif args.start is not None and args.stop is not None:
        values = list(np.linspace(args.start, args.stop, args.num)) if args.num > 0 else []
    else:
        raise CommandError("give --values or --start/--stop/--num")
    if not values:
        raise CommandError("empty scan range")
    return values


def cmd_scan(args, config, out):
    values = _scan_values(args)
    if args.variable == "power":
        result = scan_power(config, values, args.gain_coeff, threads=args.threads)
    else:
        result = scan_distance(config, values, threads=args.threads)
    header, rows = result.rows(args.l_show)
    write_csv(out / "scan.csv", header, rows)
    outputs = ["scan.csv"]
    for i, point in enumerate(result.points):
        sub = Path(f"point_{i:03d}")
        (out / sub).mkdir(exist_ok=True)
        write_csv(out / sub / "weights.csv", ["l", "p", "lambda", "Lambda"],
                  weights_rows(point.decomposition, point.spectrum))
        write_csv(out / sub / "radial.csv", ["theta", "intensity"],
                  np.column_stack([point.theta, point.radial]))
        outputs += [str(sub / "weights.csv"), str(sub / "radial.csv")]
    for row in rows:
        print("  ".join(f"{v:.6g}" for v in row[:5]))
    return outputs


def cmd_calibrate(args, config, out):
    _, data = read_csv(args.data)
    if data.ndim != 2 or data.shape[1] < 2:
        raise CommandError(f"{args.data}: need two numeric columns")
    data = data[:, :2]
    if args.kind == "gain":
        cal = calibrate_gain(data)
        result = {"coeff": cal.coeff, "amplitude": cal.amplitude, "residual": cal.residual}
        write_csv(out / "gain_calibration.csv", ["P", "I", "G0", "I_fit"],
                  np.column_stack([data[:, 0], data[:, 1], cal.G0(data[:, 0]),
                                   cal.intensity(data[:, 0])]))
        name = "gain_calibration.csv"
    else:
        cal = kerr_calibration(data, config.pi_distance)
        result = {"kappa": cal.kappa, "offset": cal.offset, "residual": cal.residual}
        write_csv(out / "kerr_calibration.csv", ["kappa", "offset", "residual"], [tuple(cal)])
        name = "kerr_calibration.csv"
    (out / "calibration.json").write_text(json.dumps(result, indent=2) + "\n")
    print("  ".join(f"{k} = {v:.6g}" for k, v in result.items()))
    return [name, "calibration.json"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="su11oam", description=__doc__)
    parser.add_argument("--config", type=Path, help="source config file (key = value)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1, help="worker thread cap")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Schmidt modes, weights and mean intensity")
    p.add_argument("--l-show", type=int, default=12, help="largest l written to modes.csv")
    p.add_argument("--pixels", type=int, default=256, help="heatmap size")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synthesize", help="single-shot frame stack")
    p.add_argument("-n", "--frames", type=int, default=3500)
    p.add_argument("--mode", choices=("degenerate", "signal_only"), default="degenerate")
    p.add_argument("--normalize", action="store_true", help="scale each frame to unit integral")
    p.add_argument("--n-phi", type=int, default=None, help="azimuthal nodes of the frames")
    p.add_argument("--n-freq", type=int, default=1, help="effective frequency modes")
    p.add_argument("--read-noise", type=float, default=0.0)
    p.add_argument("--full-well", type=float, default=None)
    p.add_argument("--export-frames", type=int, default=0, help="write the first N frames as PGM")
    p.add_argument("--pixels", type=int, default=256)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("reconstruct", help="covariance analysis of a frame stack")
    p.add_argument("stack", type=Path)
    p.add_argument("--kind", choices=("radial", "oam", "g2"), required=True)
    p.add_argument("--half-angle", type=float, default=4.5, help="sector half angle, degrees")
    p.add_argument("--p-rec", type=int, default=2)
    p.add_argument("--block", choices=("auto", "cross"), default="auto")
    p.add_argument("--theta-center", type=float, default=None, help="annulus centre, rad")
    p.add_argument("--half-width", type=float, default=1.1e-3, help="annulus half width, rad")
    p.add_argument("--l-fit", type=int, default=3)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("scan", help="mode numbers versus power or gap distance")
    p.add_argument("--variable", choices=("power", "distance"), required=True)
    p.add_argument("--values", help="comma-separated scan values (SI units)")
    p.add_argument("--start", type=float)
    p.add_argument("--stop", type=float)
    p.add_argument("--num", type=int, default=11)
    p.add_argument("--gain-coeff", type=float, default=None, help="G0 = coeff * sqrt(P)")
    p.add_argument("--l-show", type=int, default=5)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("calibrate", help="gain or Kerr calibration from a two-column CSV")
    p.add_argument("--kind", choices=("gain", "kerr"), required=True)
    p.add_argument("--data", type=Path, required=True, help="CSV with header: P,I or P,L_min")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        if args.threads < 1:
            raise CommandError("--threads must be >= 1")
        config = _config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        outputs = args.func(args, config, out)
        _write_manifest(out, args, argv, config, started, outputs)
    except (CommandError, ConfigError, CalibrationError, FitError, ValueError,
            FileNotFoundError, OSError, np.linalg.LinAlgError) as exc:
        print(f"su11oam: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
