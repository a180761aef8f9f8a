"""Measurement chain: sampling, DFT, alias unfolding and line fitting.

Frequencies are in kHz and times in seconds throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .spinsim import TimeSeries

GAUSS_FWHM = 2.0 * np.sqrt(2.0 * np.log(2.0))  # FWHM / standard deviation
# Forward-model sampling rate: an instrument parameter chosen so the proton
# carrier at 434.4 G (1849.5 kHz) aliases to 80.4 kHz.
DEFAULT_SAMPLING_RATE = 1769.15  # kHz


class FitConvergenceError(RuntimeError):
    """A least-squares fit failed; ``best`` holds the best parameters seen."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class AmbiguousUnfoldError(ValueError):
    pass


# ---------------------------------------------------------------------- DFT


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; len(x) must be a power of two."""
    x = np.asarray(x, dtype=complex)
    n = len(x)
    if n == 0 or n & (n - 1):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    a = x[_bit_reverse(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(-1, size)
        top = a[:, :half].copy()
        bot = a[:, half:] * w
        a[:, :half] = top + bot
        a[:, half:] = top - bot
        a = a.reshape(-1)
        size *= 2
    return a


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@dataclass
class Spectrum:
    """One-sided spectrum on [0, f_s/2]; ``values`` are complex, scaled by dt."""

    frequencies: np.ndarray
    values: np.ndarray
    resolution: float  # kHz, 1 / record length
    n_fft: int = 0

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.values = np.asarray(self.values)
        if len(self.frequencies) != len(self.values):
            raise ValueError("frequencies and values differ in length")
        if len(self.frequencies) > 1:
            d = np.diff(self.frequencies)
            if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-6):
                raise ValueError("spectrum frequencies must be uniform and increasing")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def bin_width(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def energy(self) -> float:
        """sum |X|^2 df over the two-sided spectrum (f in Hz), from the half band."""
        p = np.abs(self.values) ** 2
        w = np.full(len(p), 2.0)
        w[0] = 1.0
        if self.n_fft % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * p) * self.bin_width * 1e3)


def dft(ts: TimeSeries, n_fft: int | None = None, window: str | None = None) -> Spectrum:
    """Half-band DFT of a real series, zero-padded to a power of two.

    ``n_fft`` may request extra zero padding; it is rounded up to a power of
    two.  ``window`` is None or "hann".
    """
    x = np.asarray(ts.values, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    if window == "hann":
        x = x * np.hanning(len(x))
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    n = next_pow2(max(len(x), n_fft or 0))
    padded = np.zeros(n)
    padded[: len(x)] = x
    big_x = fft_radix2(padded)[: n // 2 + 1] * ts.dt
    freqs = np.arange(n // 2 + 1) / (n * ts.dt) / 1e3
    return Spectrum(freqs, big_x, 1.0 / (len(x) * ts.dt) / 1e3, n)


def signal_energy(ts: TimeSeries) -> float:
    return float(np.sum(np.asarray(ts.values) ** 2) * ts.dt)


# ------------------------------------------------------------- undersampling


def alias(f_true, f_s: float):
    """Apparent frequency in [0, f_s/2] of a real tone at ``f_true``."""
    f = np.asarray(f_true, dtype=float)
    return np.abs((f + f_s / 2.0) % f_s - f_s / 2.0)


def undersample(model: Callable[[np.ndarray], np.ndarray], f_s: float, n: int,
                t0: float = 0.0) -> TimeSeries:
    """Sample ``model(t)`` (t in seconds) at ``f_s`` kHz, ``n`` points."""
    if not f_s > 0:
        raise ValueError(f"sampling rate must be positive, got {f_s}")
    dt = 1.0 / (f_s * 1e3)
    t = t0 + dt * np.arange(n)
    return TimeSeries(dt, np.asarray(model(t), dtype=float), t0)


@dataclass
class Peak:
    center: float
    fwhm: float
    amplitude: float
    uncertainty: float = 0.0


@dataclass
class PeakList:
    peaks: list = field(default_factory=list)

    def __post_init__(self):
        self.peaks = sorted(self.peaks, key=lambda p: p.center)
        for p in self.peaks:
            if not p.fwhm > 0:
                raise ValueError(f"peak at {p.center} has non-positive FWHM {p.fwhm}")

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.peaks])

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    def to_json(self) -> str:
        return json.dumps([asdict(p) for p in self.peaks], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PeakList":
        return cls([Peak(**{k: float(v) for k, v in r.items()}) for r in json.loads(text)])


def unfold_frequency(f_a: float, f_s: float, hint: float, half_width: float) -> float:
    """True frequency k*f_s +/- f_a nearest ``hint``.

    Raises AmbiguousUnfoldError if a second candidate also lies within
    ``half_width`` of the hint.
    """
    if not 0.0 <= f_a <= f_s / 2 + 1e-9:
        raise ValueError(f"aliased frequency {f_a} outside [0, f_s/2]")
    k0 = int(np.floor(hint / f_s))
    cands = sorted({round(k * f_s + s * f_a, 9) for k in range(k0 - 1, k0 + 3)
                    for s in (1.0, -1.0) if k * f_s + s * f_a >= 0.0},
                   key=lambda c: abs(c - hint))
    best = cands[0]
    if len(cands) > 1 and abs(cands[1] - hint) <= half_width and abs(cands[1] - best) > 1e-9:
        raise AmbiguousUnfoldError(
            f"aliased peak at {f_a:.3f} kHz maps to both {best:.3f} and {cands[1]:.3f} kHz "
            f"within {half_width} kHz of {hint} kHz"
        )
    return float(best)


def unfold(aliased: PeakList, f_s: float, f_center_hint: float, half_width: float = 50.0,
           f_center: float | None = None) -> PeakList:
    """Map aliased peaks back to offsets from the carrier.

    ``half_width`` is the half-width of the band around the hint that is
    assumed to contain the signal; it must be below f_s/2.  Offsets are taken
    from ``f_center`` (defaults to the hint).
    """
    if not 0 < half_width < f_s / 2:
        raise ValueError(f"band half-width {half_width} must lie in (0, f_s/2 = {f_s / 2})")
    ref = f_center_hint if f_center is None else f_center
    out = []
    for p in aliased:
        f = unfold_frequency(p.center, f_s, f_center_hint, half_width)
        out.append(Peak(f - ref, p.fwhm, p.amplitude, p.uncertainty))
    return PeakList(out)


def unfold_axis(f_a, f_s: float, hint: float, half_width: float = 50.0) -> np.ndarray:
    """True frequencies of an aliased band axis around alias(hint).

    Within one Nyquist zone the map is affine with slope +1 or -1 (the
    negative branch reverses the axis).
    """
    c_a = float(alias(hint, f_s))
    c_t = unfold_frequency(c_a, f_s, hint, half_width)
    k = (c_t - c_a) / f_s
    sign = 1.0 if abs(k - round(k)) < 1e-9 else -1.0
    return c_t + sign * (np.asarray(f_a, dtype=float) - c_a)


def carrier_alias_center(peaks: PeakList, f_s: float, larmor_hint: float) -> float:
    """Aliased peak closest to where the carrier itself should land."""
    target = float(alias(larmor_hint, f_s))
    return float(peaks.centers[np.argmin(np.abs(peaks.centers - target))])


# ------------------------------------------------------------- local maxima


def local_maxima(y, n: int | None = None, min_rel: float = 0.0) -> np.ndarray:
    """Indices of strict local maxima, strongest first."""
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        return np.array([], dtype=int)
    idx = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    idx = idx[y[idx] >= min_rel * np.max(y)]
    idx = idx[np.argsort(-y[idx], kind="stable")]
    return idx if n is None else idx[:n]


def _parabolic(y, i):
    if i <= 0 or i >= len(y) - 1:
        return 0.0
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    return 0.0 if den == 0 else 0.5 * (a - c) / den


# ------------------------------------------------------------- sinusoid fits


@dataclass
class Sinusoid:
    amplitude: float
    frequency: float  # kHz
    phase: float  # radians


@dataclass
class SinusoidFit:
    components: list
    residual_norm: float
    initial_residual_norm: float
    offset: float = 0.0
    converged: bool = True  # False when the evaluation budget ran out

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([c.frequency for c in self.components])


def _sin_model(params, t, n, offset):
    a, f, ph = params[0:3 * n:3], params[1:3 * n:3], params[2:3 * n:3]
    y = np.cos(2e3 * np.pi * np.outer(t, f) + ph) @ a
    return y + (params[-1] if offset else 0.0)


def fit_sinusoids(ts: TimeSeries, n_components: int, offset: bool = False,
                  max_nfev: int = 2000, pad_factor: int = 16,
                  min_separation: float | None = None) -> SinusoidFit:
    """Least-squares fit of sum_k a_k cos(2 pi f_k t + phi_k) (+ constant).

    Starting frequencies are the strongest local maxima of the zero-padded
    Hann-windowed DFT, at least ``min_separation`` kHz apart (default: two
    resolution bins, the Hann main-lobe half width).
    """
    if n_components < 1:
        raise ValueError("need at least one component")
    if len(ts) < 4 * n_components:
        raise ValueError(f"{len(ts)} samples are too few for {n_components} components")
    t = ts.times - ts.t0
    y = ts.values
    base = float(np.mean(y)) if offset else 0.0
    # Hann window keeps sidelobes of strong lines from posing as weak ones
    sp = dft(TimeSeries(ts.dt, y - base), n_fft=pad_factor * len(y), window="hann")
    mag = sp.magnitude
    sep = 2.0 * sp.resolution if min_separation is None else min_separation
    picks: list[int] = []
    for i in local_maxima(mag):
        if all(abs(sp.frequencies[i] - sp.frequencies[j]) >= sep for j in picks):
            picks.append(int(i))
        if len(picks) == n_components:
            break
    if len(picks) < n_components:
        raise FitConvergenceError(
            f"only {len(picks)} spectral peaks found for {n_components} components")
    p0 = []
    for i in picks:
        f = sp.frequencies[i] + _parabolic(mag, i) * sp.bin_width
        amp = 2.0 * mag[i] / (len(y) * ts.dt)
        p0 += [amp, f, 0.0]
    p0 = np.array(p0 + ([base] if offset else []))
    # phases from a linear solve at the initial frequencies
    freqs = p0[1:3 * n_components:3]
    basis = np.hstack([np.cos(2e3 * np.pi * np.outer(t, freqs)),
                       np.sin(2e3 * np.pi * np.outer(t, freqs))])
    coef, *_ = np.linalg.lstsq(basis, y - base, rcond=None)
    c, s = coef[:n_components], coef[n_components:]
    p0[0:3 * n_components:3] = np.hypot(c, s)
    p0[2:3 * n_components:3] = np.arctan2(-s, c)

    def resid(p):
        return _sin_model(p, t, n_components, offset) - y

    def jac(p):
        a, f, ph = p[0:3 * n_components:3], p[1:3 * n_components:3], p[2:3 * n_components:3]
        arg = 2e3 * np.pi * np.outer(t, f) + ph
        c, s = np.cos(arg), np.sin(arg)
        j = np.empty((len(t), len(p)))
        j[:, 0:3 * n_components:3] = c
        j[:, 1:3 * n_components:3] = -a * s * (2e3 * np.pi * t)[:, None]
        j[:, 2:3 * n_components:3] = -a * s
        if offset:
            j[:, -1] = 1.0
        return j

    r0 = float(np.linalg.norm(resid(p0)))
    scale = np.ones_like(p0)
    scale[1:3 * n_components:3] = sp.resolution
    res = least_squares(resid, p0, jac=jac, x_scale=scale, max_nfev=max_nfev, xtol=1e-14,
                        ftol=1e-14, gtol=1e-14)
    p = res.x
    r = float(np.linalg.norm(res.fun))
    if r > r0:
        p, r = p0, r0
    comps = []
    for k in range(n_components):
        a, f, ph = p[3 * k: 3 * k + 3]
        if a < 0:
            a, ph = -a, ph + np.pi
        if f < 0:
            f, ph = -f, -ph
        comps.append(Sinusoid(float(a), float(f), float((ph + np.pi) % (2 * np.pi) - np.pi)))
    comps.sort(key=lambda c: c.frequency)
    return SinusoidFit(comps, r, r0, float(p[-1]) if offset else 0.0,
                       converged=res.status > 0)


# ---------------------------------------------------------------- peak fits


def gaussian(f, center, fwhm, amplitude):
    return amplitude * np.exp(-4.0 * np.log(2.0) * (np.asarray(f) - center) ** 2 / fwhm**2)


def _half_width_guess(f, y, i):
    half = y[i] / 2
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < len(y) - 1 and y[hi] > half:
        hi += 1
    return max(f[hi] - f[lo], 2 * (f[1] - f[0]))


def fit_peaks(sp, n_peaks: int, baseline: bool = False, max_nfev: int = 4000) -> PeakList:
    """Multi-Gaussian least-squares fit.

    ``sp`` is a Spectrum (magnitude is fitted) or a (frequencies, values)
    pair.  Uncertainties are 1-sigma from the fit covariance.
    """
    if n_peaks < 1:
        raise ValueError("need at least one peak")
    if isinstance(sp, Spectrum):
        f, y = sp.frequencies, sp.magnitude
    else:
        f, y = (np.asarray(a, dtype=float) for a in sp)
    if len(f) < 3 * n_peaks + 1:
        raise ValueError(f"{len(f)} points are too few for {n_peaks} peaks")
    idx = list(local_maxima(y, n_peaks))
    p0 = []
    for i in idx:
        p0 += [f[i], _half_width_guess(f, y, i), y[i]]
    # seed missing peaks where the running residual is largest
    while len(p0) < 3 * n_peaks:
        model = sum(gaussian(f, *p0[k:k + 3]) for k in range(0, len(p0), 3)) if p0 else 0.0
        j = int(np.argmax(y - model))
        p0 += [f[j], _half_width_guess(f, y, j), max(y[j] - (model[j] if p0 else 0.0), 1e-12)]
    if baseline:
        p0.append(float(np.min(y)))
    p0 = np.array(p0, dtype=float)
    span = f[-1] - f[0]
    step = f[1] - f[0]
    lo = np.tile([f[0], step / 4, 0.0], n_peaks)
    hi = np.tile([f[-1], span, np.inf], n_peaks)
    if baseline:
        lo, hi = np.r_[lo, -np.inf], np.r_[hi, np.inf]
    fin = np.isfinite(lo)
    lo_in = lo.copy()
    lo_in[fin] += 1e-12 * np.abs(lo[fin])
    p0 = np.clip(p0, lo_in, hi)

    def model(p):
        out = sum(gaussian(f, *p[k:k + 3]) for k in range(0, 3 * n_peaks, 3))
        return out + (p[-1] if baseline else 0.0)

    res = least_squares(lambda p: model(p) - y, p0, bounds=(lo, hi), max_nfev=max_nfev,
                        x_scale="jac")
    if res.status <= 0:
        raise FitConvergenceError("peak fit did not converge", best=res.x)
    p = res.x
    jac = res.jac
    dof = max(len(y) - len(p), 1)
    s2 = 2 * res.cost / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
    except np.linalg.LinAlgError as exc:
        raise FitConvergenceError("peak fit is degenerate (singular covariance)", best=p) from exc
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    peaks = []
    a_floor = 1e-6 * np.max(p[2::3])
    for k in range(n_peaks):
        c, w, a = p[3 * k: 3 * k + 3]
        if a <= a_floor or not np.isfinite(err[3 * k]):
            raise FitConvergenceError(
                f"peak {k} collapsed during the fit; too many peaks requested", best=p)
        peaks.append(Peak(float(c), float(abs(w)), float(a), float(err[3 * k])))
    centers = sorted(pk.center for pk in peaks)
    if np.any(np.diff(centers) < step / 2):
        raise FitConvergenceError("two fitted peaks coincide; too many peaks requested", best=p)
    return PeakList(peaks)
