"""Least-squares inversion of ice spectra.

The orientation search runs in the c-axis parametrisation (tilt of c from
B0, rotation about c) on a 1-degree grid over [0, 90] x [0, 120), then
refines with Nelder-Mead.  Results are reported in the molecular convention
together with every lattice-equivalent orientation.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import dipolar
from .dipolar import DipolarParams, SpectrumParams
from .geometry import (CrystalOrientation, dimer_orientations, equivalent_orientations,
                       orientation_distance)


class UnidentifiableError(ValueError):
    pass


def worker_count() -> int:
    env = os.environ.get("NANONMR_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ValueError(f"NANONMR_THREADS must be an integer, got {env!r}") from None
    return max(1, min(n, 8))


# ---------------------------------------------------------------- utilities


def _as_curve(measured):
    f, y = (np.asarray(a, dtype=float) for a in measured)
    if f.ndim != 1 or f.shape != y.shape:
        raise ValueError("measured curve must be two equal-length 1-D arrays")
    if len(f) < 5:
        raise ValueError(f"measured curve has only {len(f)} points")
    if np.any(np.diff(f) <= 0):
        raise ValueError("measured frequencies must be strictly increasing")
    return f, y


def noise_level(y) -> float:
    """Robust white-noise estimate from second differences (MAD based)."""
    d2 = np.diff(np.asarray(y, dtype=float), 2)
    return float(1.4826 * np.median(np.abs(d2 - np.median(d2))) / np.sqrt(6.0))


def check_identifiable(f, y, threshold: float = 3.0):
    n = len(y)
    edge = max(3, n // 10)
    baseline = float(np.median(np.r_[y[:edge], y[-edge:]]))
    noise = noise_level(y)
    peak = float(np.max(y) - baseline)
    if not peak > threshold * noise or peak <= 0:
        raise UnidentifiableError(
            f"unidentifiable: no peak above {threshold:g}x the baseline noise "
            f"(peak {peak:.3g}, noise {noise:.3g})")


def profiled_rss(model, y) -> tuple[np.ndarray, np.ndarray]:
    """RSS after the optimal non-negative scale; works on (..., N) model stacks."""
    mm = np.einsum("...i,...i->...", model, model)
    my = model @ y
    scale = np.where(mm > 0, np.clip(my, 0.0, None) / np.where(mm > 0, mm, 1.0), 0.0)
    rss = y @ y - 2 * scale * my + scale**2 * mm
    return np.maximum(rss, 0.0), scale


def _field_c_axis(alpha, beta):
    a, b = np.radians(alpha), np.radians(beta)
    return np.stack([-np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)], axis=-1)


_DIMERS = dimer_orientations().expanded()


def _c_axis_orientation(alpha, beta) -> CrystalOrientation:
    """Normalise unconstrained c-axis angles from the optimiser."""
    return CrystalOrientation.from_field(_field_c_axis(float(alpha), float(beta)), "c-axis")


def _models_for_fields(b0s, f, dp: DipolarParams, sp: SpectrumParams) -> np.ndarray:
    """Unnormalised spectra (M, N) for field directions b0s (M, 3), crystal frame."""
    cos2 = (b0s @ _DIMERS.T) ** 2
    g = 1.0 - 3.0 * cos2
    df = 0.75 * dp.delta * g
    centers = [df, -df]
    amps = [np.ones_like(df)] * 2
    w = sp.hdo_weight
    if w > 0:
        dfd = dipolar.HETERO_KAPPA * dp.delta_hd * g
        centers += [dfd, np.zeros_like(df), -dfd]
        amps += [np.full_like(df, w / 3.0)] * 3
    c = np.concatenate(centers, axis=1)
    a = np.concatenate(amps, axis=1)
    lines = np.exp(-((f[None, None, :] - c[:, :, None]) ** 2) / sp.broadening**2)
    env = np.exp(-2.0 * (f - sp.f_shift) ** 2 / sp.sigma**2)
    return np.einsum("ml,mln->mn", a, lines) * env


def _rss_c_axis(params, f, y, dp, sp, free_p):
    alpha, beta, shift = params[:3]
    p = params[3] if free_p else sp.p
    if not 0.0 <= p < 1.0:
        return np.inf
    spp = sp.replace(f_shift=shift, p=p)
    m = _models_for_fields(_field_c_axis(alpha, beta)[None, :], f, dp, spp)[0]
    return float(profiled_rss(m, y)[0])


def _fd_hessian(fun, x, steps) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = np.zeros((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        h[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / steps[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            h[i, j] = h[j, i] = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej)
                                 + fun(x - ei - ej)) / (4 * steps[i] * steps[j])
    return h


def _sigmas(hess, rss, n_points, n_params):
    s2 = rss / max(n_points - n_params, 1)
    try:
        cov = 2.0 * s2 * np.linalg.pinv(hess)
    except np.linalg.LinAlgError:
        return np.full(len(hess), np.inf)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


# ---------------------------------------------------------- orientation fit


@dataclass
class FitResult:
    alpha: float
    beta: float
    alpha_err: float
    beta_err: float
    f_shift: float
    f_shift_err: float
    p: float
    p_err: float
    residual: float
    scale: float
    equivalent_minima: list = field(default_factory=list)
    convention: str = "molecular"

    @property
    def orientation(self) -> CrystalOrientation:
        return CrystalOrientation(self.alpha, self.beta, self.convention)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        d["equivalent_minima"] = [tuple(x) for x in d.get("equivalent_minima", [])]
        return cls(**d)

    def report(self) -> str:
        lines = [
            f"orientation ({self.convention}): alpha = {self.alpha:.2f} +/- {self.alpha_err:.2f} deg, "
            f"beta = {self.beta:.2f} +/- {self.beta_err:.2f} deg",
            f"f_shift = {self.f_shift:.3f} +/- {self.f_shift_err:.3f} kHz",
            f"p = {self.p:.4f} +/- {self.p_err:.4f}",
            f"residual = {self.residual:.6g}",
            f"{len(self.equivalent_minima)} lattice-equivalent minima",
        ]
        return "\n".join(lines)


def _grid_rss(f, y, dp, sp, alphas, betas) -> np.ndarray:
    aa, bb = np.meshgrid(alphas, betas, indexing="ij")
    b0s = _field_c_axis(aa.ravel(), bb.ravel())
    chunk = 128
    starts = list(range(0, len(b0s), chunk))

    def work(s):
        m = _models_for_fields(b0s[s:s + chunk], f, dp, sp)
        return profiled_rss(m, y)[0]

    workers = worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts).reshape(aa.shape)


def _pick_starts(rss: np.ndarray, alphas, betas, n: int) -> list[tuple[float, float]]:
    """Lowest grid cells that are not lattice-equivalent to an earlier pick."""
    order = np.argsort(rss, axis=None, kind="stable")
    picks: list[CrystalOrientation] = []
    out = []
    for flat in order:
        i, j = np.unravel_index(flat, rss.shape)
        o = CrystalOrientation(float(alphas[i]), float(betas[j]), "c-axis")
        if any(min(orientation_distance(e, o) for e in equivalent_orientations(q)) < 6.0
               for q in picks):
            continue
        picks.append(o)
        out.append((o.alpha, o.beta))
        if len(out) == n or len(picks) > 50:
            break
    return out


def fit_orientation(measured, dp: DipolarParams | None = None, sp: SpectrumParams | None = None,
                    free_p: bool = False, reference: CrystalOrientation | None = None,
                    grid_step: float = 1.0, n_starts: int = 4,
                    equivalence_rtol: float = 1e-3) -> FitResult:
    """Fit orientation and envelope shift (and optionally p) to a spectrum.

    ``measured`` is a (frequencies kHz, intensities) pair covering at least
    +/-45 kHz.  The reported (alpha, beta) is the lattice-equivalent optimum
    closest to ``reference`` when given.
    """
    dp = dp or DipolarParams()
    sp = sp or SpectrumParams()
    f, y = _as_curve(measured)
    if f[0] > -45.0 or f[-1] < 45.0:
        raise ValueError(
            f"measured curve spans [{f[0]:.1f}, {f[-1]:.1f}] kHz; it must cover +/-45 kHz")
    check_identifiable(f, y)

    alphas = np.arange(0.0, 90.0 + 1e-9, grid_step)
    betas = np.arange(0.0, 120.0, grid_step)
    # with p free the grid also scans a coarse set of fractions, so the local
    # searches start in the right basin
    p_values = sorted({sp.p, 0.0, 0.2, 0.4, 0.6}) if free_p else [sp.p]
    stack = np.stack([_grid_rss(f, y, dp, sp.replace(p=pv), alphas, betas) for pv in p_values])
    p_best = np.asarray(p_values)[np.argmin(stack, axis=0)]
    rss = stack.min(axis=0)
    grid_min = float(rss.min())

    fun = lambda x: _rss_c_axis(x, f, y, dp, sp, free_p)  # noqa: E731
    candidates = []
    for a0, b0 in _pick_starts(rss, alphas, betas, n_starts):
        i0, j0 = int(np.argmin(np.abs(alphas - a0))), int(np.argmin(np.abs(betas - b0)))
        x0 = [a0, b0, sp.f_shift] + ([float(p_best[i0, j0])] if free_p else [])
        steps = [grid_step, grid_step, 1.0] + ([0.05] if free_p else [])
        simplex = np.array([x0] + [np.array(x0) + np.eye(len(x0))[k] * steps[k]
                                   for k in range(len(x0))])
        res = minimize(fun, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": 1e-7, "fatol": 1e-14,
                                "maxiter": 4000, "maxfev": 8000})
        candidates.append((float(res.fun), np.asarray(res.x)))
    candidates.sort(key=lambda c: c[0])
    best_rss, best = candidates[0]
    if best_rss > grid_min:  # never worse than the grid
        i, j = np.unravel_index(np.argmin(rss), rss.shape)
        best = np.array([alphas[i], betas[j], sp.f_shift] + ([p_best[i, j]] if free_p else []))
        best_rss = grid_min

    opt_c = _c_axis_orientation(best[0], best[1])
    tol = max(equivalence_rtol * best_rss, 1e-12 * float(y @ y), 1e-300)
    minima: list[CrystalOrientation] = []
    for r, x in candidates:
        if r - best_rss <= tol:
            o = _c_axis_orientation(x[0], x[1])
            for e in equivalent_orientations(o.to("molecular")):
                if not any(orientation_distance(e, m) < 0.5 for m in minima):
                    minima.append(e)
    equivalents = equivalent_orientations(opt_c.to("molecular"))
    for e in equivalents:
        if not any(orientation_distance(e, m) < 0.5 for m in minima):
            minima.append(e)
    if reference is not None:
        ref = reference.to("molecular")
        chosen = min(equivalents, key=lambda e: orientation_distance(ref, e))
    else:
        chosen = min((e for e in equivalents if e.alpha <= 90.0),
                     key=lambda e: (round(e.beta, 6), e.alpha))

    shift = float(best[2])
    p = float(best[3]) if free_p else sp.p

    def fun_mol(x):
        o = CrystalOrientation(x[0], x[1], "molecular").to("c-axis")
        return fun([o.alpha, o.beta] + list(x[2:]))

    xm = [chosen.alpha, chosen.beta, shift] + ([p] if free_p else [])
    hess = _fd_hessian(fun_mol, xm, [0.05, 0.05, 0.05] + ([1e-3] if free_p else []))
    errs = _sigmas(hess, best_rss, len(f), len(xm) + 1)
    m = _models_for_fields(chosen.field_in_crystal()[None, :], f, dp,
                           sp.replace(f_shift=shift, p=p))[0]
    _, scale = profiled_rss(m, y)
    return FitResult(
        alpha=float(chosen.alpha), beta=float(chosen.beta),
        alpha_err=float(errs[0]), beta_err=float(errs[1]),
        f_shift=shift, f_shift_err=float(errs[2]),
        p=p, p_err=float(errs[3]) if free_p else 0.0,
        residual=float(best_rss), scale=float(scale),
        equivalent_minima=[(float(o.alpha), float(o.beta)) for o in minima],
    )


def model_curve(result: FitResult, f, dp: DipolarParams | None = None,
                sp: SpectrumParams | None = None) -> np.ndarray:
    """Best-fit model (including the fitted scale) on ``f``."""
    dp = dp or DipolarParams()
    sp = (sp or SpectrumParams()).replace(f_shift=result.f_shift, p=result.p)
    f = np.asarray(f, dtype=float)
    m = _models_for_fields(result.orientation.field_in_crystal()[None, :], f, dp, sp)[0]
    return result.scale * m


def orientation_rss(measured, o: CrystalOrientation, dp: DipolarParams | None = None,
                    sp: SpectrumParams | None = None) -> float:
    f, y = _as_curve(measured)
    m = _models_for_fields(o.field_in_crystal()[None, :], f, dp or DipolarParams(),
                           sp or SpectrumParams())[0]
    return float(profiled_rss(m, y)[0])


# ----------------------------------------------------------------- HDO ratio


@dataclass
class RatioResult:
    p: float
    p_err: float
    residual: float
    flat: bool = False

    @property
    def ratio(self) -> float:
        """HDO:H2O molecule ratio."""
        return self.p / (1.0 - self.p)


def fit_ratio(measured, o: CrystalOrientation, dp: DipolarParams | None = None,
              sp: SpectrumParams | None = None, p_max: float = 0.8,
              flat_threshold: float = 1e-9) -> RatioResult:
    """One-dimensional least squares for the HDO fraction with the orientation fixed."""
    dp = dp or DipolarParams()
    sp = sp or SpectrumParams()
    f, y = _as_curve(measured)
    b0 = o.field_in_crystal()[None, :]

    def rss(p):
        m = _models_for_fields(b0, f, dp, sp.replace(p=float(p)))[0]
        return float(profiled_rss(m, y)[0])

    grid = np.linspace(0.0, p_max, 81)
    vals = np.array([rss(p) for p in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(rss, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    p_hat, r_hat = (float(res.x), float(res.fun)) if res.fun <= vals[k] else (float(grid[k]), float(vals[k]))
    h = 1e-3
    if p_hat - h < 0:
        curv = (rss(p_hat + 2 * h) - 2 * rss(p_hat + h) + r_hat) / h**2
    elif p_hat + h > p_max:
        curv = (r_hat - 2 * rss(p_hat - h) + rss(p_hat - 2 * h)) / h**2
    else:
        curv = (rss(p_hat + h) - 2 * r_hat + rss(p_hat - h)) / h**2
    flat = abs(curv) < flat_threshold * max(float(y @ y), 1e-300)
    if flat:
        warnings.warn("residual is flat in p; the HDO fraction is poorly constrained",
                      RuntimeWarning, stacklevel=2)
        err = float("inf")
    else:
        err = float(_sigmas(np.array([[curv]]), r_hat, len(f), 2)[0])
    return RatioResult(p_hat, err, r_hat, bool(flat))


# --------------------------------------------------------------- bond length


@dataclass
class BondSample:
    """A spectrum with either a known dimer angle or a known crystal orientation."""

    frequencies: np.ndarray
    intensities: np.ndarray
    theta: float | None = None
    orientation: CrystalOrientation | None = None

    def __post_init__(self):
        if (self.theta is None) == (self.orientation is None):
            raise ValueError("give exactly one of theta or orientation")

    def thetas(self) -> np.ndarray:
        if self.theta is not None:
            return np.array([float(self.theta)])
        from .geometry import dimer_angles
        return dimer_angles(self.orientation)


@dataclass
class BondLengthResult:
    d: float
    d_err: float
    d_err_fit: float
    d_err_resolution: float
    residual: float


def estimate_bond_length(samples: Sequence[BondSample], sp: SpectrumParams | None = None,
                         d_range: tuple[float, float] = (0.8, 5.0)) -> BondLengthResult:
    """Joint least squares over the H-H distance.

    The uncertainty combines the fit covariance with a resolution term: each
    spectrum locates its most split line to within one line FWHM.
    """
    sp = sp or SpectrumParams()
    if len(samples) < 2:
        raise ValueError("need spectra at two or more distinct angles")
    curves = [_as_curve((s.frequencies, s.intensities)) for s in samples]
    thetas = [s.thetas() for s in samples]
    gmax = [float(np.max(np.abs(1.0 - 3.0 * np.cos(np.radians(t)) ** 2))) for t in thetas]
    if max(gmax) < 1e-3:
        raise UnidentifiableError("unidentifiable: every dimer sits at the magic angle")
    keys = {tuple(np.round(np.sort(t), 3)) for t in thetas}
    if len(keys) < 2:
        raise ValueError("spectra must be taken at distinct dimer angles")

    def rss(d):
        dp = DipolarParams(float(d))
        tot = 0.0
        for (f, y), th in zip(curves, thetas):
            m = dipolar.synthesize_spectrum(None, dp, sp, f, thetas=th, normalize=False)
            tot += float(profiled_rss(m, y)[0])
        return tot

    grid = np.geomspace(d_range[0], d_range[1], 241)
    vals = np.array([rss(d) for d in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(rss, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    d_hat, r_hat = (float(res.x), float(res.fun)) if res.fun <= vals[k] else (float(grid[k]), float(vals[k]))

    h = 1e-4 * d_hat
    curv = (rss(d_hat + h) - 2 * r_hat + rss(d_hat - h)) / h**2
    n_pts = sum(len(f) for f, _ in curves)
    err_fit = float(_sigmas(np.array([[curv]]), r_hat, n_pts, 1 + len(curves))[0]) if curv > 0 else 0.0

    delta = dipolar.coupling_parameter(d_hat)
    fwhm = sp.line_fwhm
    inv_var = sum((0.75 * g / fwhm) ** 2 for g in gmax if g > 1e-3)
    sigma_delta = 1.0 / np.sqrt(inv_var)
    err_res = d_hat * sigma_delta / (3.0 * delta)
    return BondLengthResult(d_hat, float(np.hypot(err_fit, err_res)), err_fit, float(err_res), r_hat)


# -------------------------------------------------------- gyromagnetic slope


@dataclass
class SlopeResult:
    slope: float
    slope_err: float
    intercept: float
    intercept_err: float
    residual: float


def larmor_slope(fields: Sequence[float], freqs: Sequence[float],
                 sigmas: Sequence[float] | None = None, intercept: bool = False) -> SlopeResult:
    """Weighted linear regression of resonance frequency (kHz) on field (G).

    With ``sigmas`` the errors are absolute; without, they are scaled by the
    residual variance (zero degrees of freedom gives a NaN error).
    """
    x = np.asarray(fields, dtype=float)
    y = np.asarray(freqs, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("need at least two (field, frequency) points")
    if len(np.unique(x)) < 2:
        raise ValueError("field values are all identical; the slope is undefined")
    w = np.ones_like(x) if sigmas is None else 1.0 / np.asarray(sigmas, dtype=float) ** 2
    a = x[:, None] if not intercept else np.column_stack([x, np.ones_like(x)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)
    r = y - a @ coef
    chi2 = float(np.sum(w * r**2))
    cov = np.linalg.inv((a * w[:, None]).T @ a)
    if sigmas is None:
        dof = len(x) - a.shape[1]
        cov = cov * (chi2 / dof if dof > 0 else np.nan)
    err = np.sqrt(np.diag(cov))
    return SlopeResult(float(coef[0]), float(err[0]),
                       float(coef[1]) if intercept else 0.0,
                       float(err[1]) if intercept else 0.0, float(np.sum(r**2)))
