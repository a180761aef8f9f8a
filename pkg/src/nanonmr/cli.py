"""Command-line interface: ``nanonmr <command> [options]``.

Every command reads an optional TOML config; flags override it.  Output
files go to ``--out`` (default ``out/``).  Exit status is 0 on success, 1
when a tolerance check fails and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dipolar, fit, oracle, pipeline, sigproc
from .config import ConfigError, RunConfig, load_config
from .geometry import CrystalOrientation
from .io import (SLOPE_HEADER, CsvFormatError, Series, read_csv, read_spectrum,
                 read_timeseries, svg_plot, write_json, write_spectrum, write_timeseries)


class UsageError(Exception):
    pass


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _peak_records(peaks) -> list[dict]:
    return [{"center_khz": p.center, "fwhm_khz": p.fwhm, "amplitude": p.amplitude,
             "uncertainty_khz": p.uncertainty} for p in peaks]


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    """Spectrum CSV + undersampled time-series CSV + SVG with peak markers."""
    out = _outdir(cfg)
    rng = np.random.default_rng(cfg.seed)
    grid = dipolar.default_grid(cfg.grid_half_width, cfg.grid_step)
    model = dipolar.spectrum_model(cfg.orientation, cfg.dipolar_params, cfg.spectrum_params)
    y = model.sample(grid)
    if cfg.noise > 0:
        y = y + cfg.noise * rng.standard_normal(len(y))
    # outer doublets can sit at ~1% of the maximum; only noise sets a floor
    peaks = dipolar.find_peaks(grid, y, cfg.n_peaks, min_rel=3.0 * cfg.noise)
    write_spectrum(out / "spectrum.csv", grid, y)
    ts = pipeline.undersampled_record(model, cfg.larmor, cfg.fs_khz, cfg.n_samples,
                                      noise=cfg.noise, rng=rng)
    write_timeseries(out / "timeseries.csv", ts)
    svg_plot(out / "spectrum.svg", [Series(grid, y, "S(f)")], "offset from Larmor (kHz)",
             "intensity (norm.)", f"alpha={cfg.alpha:g}, beta={cfg.beta:g}, p={cfg.p:.3g}",
             markers=peaks)
    write_json(out / "peaks.json", {"peak_centers_khz": sorted(float(p) for p in peaks),
                                    "larmor_khz": cfg.larmor})
    print("peaks (kHz): " + ", ".join(f"{p:+.2f}" for p in sorted(peaks)))
    print(f"wrote {out / 'spectrum.csv'}, {out / 'timeseries.csv'}, {out / 'spectrum.svg'}")
    return 0


def cmd_correlate(cfg: RunConfig, args) -> int:
    """Correlation signal of a single proton versus free evolution time."""
    out = _outdir(cfg)
    ts = pipeline.correlation_trace(cfg.field_gauss, cfg.n_t, cfg.t_step, cfg.xy8_order)
    period = pipeline.oscillation_period(ts)
    write_timeseries(out / "correlation.csv", ts)
    svg_plot(out / "correlation.svg", [Series(ts.times * 1e6, ts.values, "P0 - P1")],
             "free evolution T (us)", "NV population difference",
             f"B0 = {cfg.field_gauss:g} G")
    write_json(out / "correlation.json", {"period_ns": period * 1e9, "larmor_khz": cfg.larmor})
    print(f"oscillation period: {period * 1e9:.2f} ns (1/f_L = {1e6 / cfg.larmor:.2f} ns)")
    return 0


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    """Unfold an undersampled record back to offsets around the Larmor frequency."""
    out = _outdir(cfg)
    ts = read_timeseries(args.input)
    rec = pipeline.reconstruct(ts, cfg.fs_khz, cfg.larmor, cfg.n_peaks, cfg.unfold_half_width)
    f, y = rec.band_curve()
    offs = sigproc.unfold_axis(f, cfg.fs_khz, cfg.larmor, cfg.unfold_half_width) - cfg.larmor
    order = np.argsort(offs)
    write_spectrum(out / "reconstructed.csv", offs[order], y[order] / max(np.max(y), 1e-300))
    write_json(out / "reconstructed.json", {
        "aliased": _peak_records(rec.aliased),
        "offsets": _peak_records(rec.offsets),
        "time_domain_offsets_khz": [float(v) for v in rec.time_domain_offsets],
        "fs_khz": cfg.fs_khz, "larmor_khz": cfg.larmor,
    })
    svg_plot(out / "reconstructed.svg", [Series(offs[order], y[order] / max(np.max(y), 1e-300),
                                                "reconstructed")],
             "offset from Larmor (kHz)", "intensity (norm.)", "reconstructed spectrum",
             markers=list(rec.offsets.centers))
    print("aliased peaks (kHz): " + ", ".join(f"{c:.2f}" for c in rec.aliased.centers))
    print("offsets (kHz):       " + ", ".join(f"{c:+.2f}" for c in rec.offsets.centers))
    if len(rec.time_domain_offsets):
        print("time-domain (kHz):   " + ", ".join(f"{c:+.2f}" for c in rec.time_domain_offsets))
    return 0


def cmd_fit(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    f, y = read_spectrum(args.input)
    res = fit.fit_orientation((f, y), cfg.dipolar_params, cfg.spectrum_params,
                              free_p=cfg.free_p, reference=cfg.orientation)
    write_json(out / "fit_result.json", res.to_dict())
    model = fit.model_curve(res, f, cfg.dipolar_params, cfg.spectrum_params)
    svg_plot(out / "fit_overlay.svg", [Series(f, y, "data", "#1f77b4"),
                                       Series(f, model, "best model", "#d62728", dashed=True)],
             "offset from Larmor (kHz)", "intensity", "orientation fit")
    print(res.report())
    return 0


def cmd_ratio(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    f, y = read_spectrum(args.input)
    res = fit.fit_ratio((f, y), cfg.orientation, cfg.dipolar_params, cfg.spectrum_params)
    write_json(out / "ratio.json", {"p": res.p, "p_err": res.p_err, "hdo_to_h2o": res.ratio,
                                    "residual": res.residual, "flat": res.flat})
    print(f"p = {res.p:.4f} +/- {res.p_err:.4f}  (HDO:H2O = {res.ratio:.3f})")
    return 0


def _parse_bond_arg(text: str, cfg: RunConfig) -> fit.BondSample:
    path, sep, spec = text.rpartition(":")
    if not sep or not path:
        raise UsageError(f"bond-length input {text!r} must look like PATH:THETA or PATH:ALPHA,BETA")
    try:
        vals = [float(v) for v in spec.split(",")]
    except ValueError:
        raise UsageError(f"bad angle specification {spec!r} in {text!r}") from None
    f, y = read_spectrum(path)
    if len(vals) == 1:
        return fit.BondSample(f, y, theta=vals[0])
    if len(vals) == 2:
        return fit.BondSample(f, y, orientation=CrystalOrientation(vals[0], vals[1], cfg.convention))
    raise UsageError(f"bad angle specification {spec!r} in {text!r}")


def cmd_bond_length(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    samples = [_parse_bond_arg(t, cfg) for t in args.inputs]
    res = fit.estimate_bond_length(samples, cfg.spectrum_params)
    write_json(out / "bond_length.json", {"d_angstrom": res.d, "d_err": res.d_err,
                                          "d_err_fit": res.d_err_fit,
                                          "d_err_resolution": res.d_err_resolution,
                                          "residual": res.residual})
    print(f"d = {res.d:.4f} +/- {res.d_err:.4f} angstrom")
    return 0


def cmd_slope(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    b, fr, sig = read_csv(args.input, SLOPE_HEADER, min_rows=2, optional=1)
    sigmas = None if np.all(np.isnan(sig)) else sig
    if sigmas is not None and (np.any(np.isnan(sigmas)) or np.any(sigmas <= 0)):
        raise CsvFormatError(args.input, None, "sigma_khz must be positive on every row")
    res = fit.larmor_slope(b, fr, sigmas, intercept=args.intercept)
    write_json(out / "slope.json", {"slope_khz_per_gauss": res.slope, "slope_err": res.slope_err,
                                    "intercept_khz": res.intercept,
                                    "intercept_err": res.intercept_err,
                                    "residual": res.residual})
    print(f"slope = {res.slope:.5f} +/- {res.slope_err:.5f} kHz/G")
    return 0


def cmd_oracle(cfg: RunConfig, args) -> int:
    cells = oracle.oracle_grid(b0=oracle.DEFAULT_FIELD, delta_scale=args.corrupt_delta)
    print(f"{'d (A)':>6} {'theta':>7} {'analytic':>10} {'numeric':>10} {'rel.err':>9}  result")
    for c in cells:
        print(f"{c.d:6.2f} {c.theta:7.2f} {c.analytic:10.4f} {c.numeric:10.4f} "
              f"{c.rel_error:9.2e}  {'PASS' if c.passed else 'FAIL'}")
    kappa = oracle.heteronuclear_prefactor()
    k_ok = abs(kappa - dipolar.HETERO_KAPPA) < 1e-2
    print(f"heteronuclear prefactor kappa = {kappa:.6f} ({'PASS' if k_ok else 'FAIL'})")
    n_fail = sum(not c.passed for c in cells) + (not k_ok)
    out = _outdir(cfg)
    write_json(out / "oracle.json", {"cells": [vars(c) for c in cells], "kappa": kappa,
                                     "failures": n_fail})
    print(f"{len(cells) - sum(not c.passed for c in cells)}/{len(cells)} cells pass")
    return 0 if n_fail == 0 else 1


COMMANDS = {
    "simulate": (cmd_simulate, "synthesize a spectrum and an undersampled record"),
    "correlate": (cmd_correlate, "simulate the correlation protocol for one proton"),
    "reconstruct": (cmd_reconstruct, "unfold an undersampled record (CSV) to a spectrum"),
    "fit": (cmd_fit, "fit the crystal orientation to a spectrum CSV"),
    "ratio": (cmd_ratio, "fit the HDO fraction with the orientation fixed"),
    "bond-length": (cmd_bond_length, "estimate the H-H distance from several spectra"),
    "slope": (cmd_slope, "fit resonance frequency against field"),
    "oracle": (cmd_oracle, "check analytic splittings against exact two-spin FIDs"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--field-gauss", type=float, dest="field_gauss", help="B0 in gauss")
    common.add_argument("--alpha-deg", type=float, dest="alpha", help="orientation alpha (deg)")
    common.add_argument("--beta-deg", type=float, dest="beta", help="orientation beta (deg)")
    common.add_argument("--p", type=float, dest="p", help="HDO fraction")
    common.add_argument("--fs-khz", type=float, dest="fs_khz", help="sampling rate (kHz)")

    parser = argparse.ArgumentParser(prog="nanonmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("reconstruct", "fit", "ratio", "slope"):
            sp.add_argument("input", help="input CSV")
        if name == "bond-length":
            sp.add_argument("inputs", nargs="+", metavar="PATH:ANGLES",
                            help="spectrum CSV with its dimer angle (PATH:THETA) "
                                 "or orientation (PATH:ALPHA,BETA)")
        if name == "slope":
            sp.add_argument("--intercept", action="store_true", help="fit a free intercept")
        if name == "oracle":
            sp.add_argument("--corrupt-delta", type=float, default=1.0, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in
                 ("seed", "out", "field_gauss", "alpha", "beta", "p", "fs_khz")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigError, CsvFormatError, UsageError, fit.UnidentifiableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, sigproc.FitConvergenceError, sigproc.AmbiguousUnfoldError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
