"""Forward and inverse measurement chain.

forward: spectrum model -> time signal around the Larmor carrier ->
undersampled record.  inverse: DFT -> Gaussian peak fit -> unfolding to
offsets from the carrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sigproc
from .dipolar import SpectrumModel
from .sigproc import PeakList, Spectrum, alias, dft, fit_peaks, fit_sinusoids, unfold, undersample
from .spinsim import Nucleus, SpinSystem, TimeSeries, correlation_response, resonant_tau


def undersampled_record(model: SpectrumModel, carrier: float,
                        f_s: float = sigproc.DEFAULT_SAMPLING_RATE, n: int = 1024,
                        noise: float = 0.0, rng: np.random.Generator | None = None) -> TimeSeries:
    """Sample the time signal of ``model`` around ``carrier`` (kHz) at ``f_s``.

    ``noise`` is additive white Gaussian noise relative to the peak value.
    """
    ts = undersample(lambda t: model.time_signal(t, carrier), f_s, n)
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = noise * float(np.max(np.abs(ts.values)))
        ts = TimeSeries(ts.dt, ts.values + scale * rng.standard_normal(len(ts)), ts.t0)
    return ts


@dataclass
class Reconstruction:
    spectrum: Spectrum  # aliased, full half band
    band: tuple  # (lo, hi) kHz of the aliased band that was fitted
    mode: str
    aliased: PeakList
    offsets: PeakList  # from the frequency-domain fit
    time_domain_offsets: np.ndarray  # from a direct sinusoid fit of the record

    def band_curve(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.band
        m = (self.spectrum.frequencies >= lo) & (self.spectrum.frequencies <= hi)
        y = self.spectrum.values.real if self.mode == "real" else self.spectrum.magnitude
        return self.spectrum.frequencies[m], y[m]


def local_peak_fit(f, y, n_peaks: int, width: float = 2.0) -> PeakList:
    """Strongest ``n_peaks`` maxima, each refined by a one-Gaussian fit.

    The fit window spans +/- ``width`` kHz, clipped halfway to the
    neighbouring maxima.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = sigproc.local_maxima(y, n_peaks)
    if len(idx) < n_peaks:
        raise sigproc.FitConvergenceError(
            f"only {len(idx)} maxima in the band; {n_peaks} peaks requested")
    fc = np.sort(f[idx])
    peaks = []
    for i in idx:
        c = f[i]
        k = np.searchsorted(fc, c)
        lo = max(c - width, 0.5 * (c + fc[k - 1]) if k > 0 else -np.inf)
        hi = min(c + width, 0.5 * (c + fc[k + 1]) if k + 1 < len(fc) else np.inf)
        w = (f >= lo) & (f <= hi)
        if w.sum() < 4:
            raise sigproc.FitConvergenceError(f"peak at {c:.3f} kHz has too few points to fit")
        peaks.extend(fit_peaks((f[w], y[w]), 1, baseline=True).peaks)
    return PeakList(peaks)


def reconstruct(ts: TimeSeries, f_s: float, larmor_hint: float, n_peaks: int = 5,
                half_width: float = 50.0, pad: int = 8, mode: str = "real",
                method: str = "local", local_width: float = 2.0) -> Reconstruction:
    """Recover carrier offsets from an undersampled record.

    The ``n_peaks`` strongest maxima in the aliased band alias(hint) +/-
    half_width are each refined by a single-Gaussian fit over their own
    neighbourhood (``method="local"``) or the band is fitted with
    ``n_peaks`` Gaussians at once (``method="global"``); every center is then
    unfolded back next to the hint.  The same
    record is also fitted directly with sinusoids so the two estimates can
    be compared.

    ``mode="real"`` fits the absorption (real) part, appropriate when every
    component starts in phase at the first sample; ``"magnitude"`` fits |DFT|
    and tolerates unknown phases at the cost of dispersive line tails.
    """
    if mode not in ("real", "magnitude"):
        raise ValueError(f"mode must be 'real' or 'magnitude', got {mode!r}")
    if abs(ts.dt * f_s * 1e3 - 1.0) > 1e-6:
        raise ValueError(f"record spacing {ts.dt:g} s does not match f_s = {f_s} kHz")
    n_fft = sigproc.next_pow2(pad * len(ts))
    sp = dft(ts, n_fft=n_fft)
    center = float(alias(larmor_hint, f_s))
    lo, hi = max(center - half_width, 0.0), min(center + half_width, f_s / 2)
    m = (sp.frequencies >= lo) & (sp.frequencies <= hi)
    y = sp.values.real if mode == "real" else sp.magnitude
    if method == "global":
        aliased = fit_peaks((sp.frequencies[m], y[m]), n_peaks)
    elif method == "local":
        aliased = local_peak_fit(sp.frequencies[m], y[m], n_peaks, local_width)
    else:
        raise ValueError(f"method must be 'local' or 'global', got {method!r}")
    offsets = unfold(aliased, f_s, larmor_hint, half_width)
    try:
        sins = fit_sinusoids(ts, n_peaks)
        td = []
        for c in sins.components:
            f_a = float(alias(c.frequency, f_s))
            if abs(f_a - center) <= half_width:
                td.append(sigproc.unfold_frequency(f_a, f_s, larmor_hint, half_width) - larmor_hint)
        td = np.sort(np.array(td))
    except (ValueError, sigproc.FitConvergenceError):
        td = np.array([])
    return Reconstruction(sp, (lo, hi), mode, aliased, offsets, td)


def correlation_trace(b0: float, n_t: int = 256, t_step: float = 20e-9, k: int = 8,
                      a_zx: float = 10.0, a_zz: float = 0.0) -> TimeSeries:
    """Correlation signal of one proton next to the NV at field ``b0`` (G)."""
    sys = SpinSystem([Nucleus("H", a_zz=a_zz, a_zx=a_zx)], b0=b0, nv=True)
    tau = resonant_tau(sys.larmor("H"))
    return correlation_response(sys, np.arange(n_t) * t_step, tau, k)


def oscillation_period(ts: TimeSeries) -> float:
    """Period (s) of the dominant oscillation of a trace."""
    try:
        fit = fit_sinusoids(ts, 1, offset=True)
    except sigproc.FitConvergenceError as exc:
        raise ValueError(f"trace has no oscillating component ({exc})") from exc
    f = abs(fit.components[0].frequency)
    if f == 0:
        raise ValueError("trace has no oscillating component")
    return 1.0 / (f * 1e3)
