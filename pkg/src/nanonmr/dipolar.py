"""Dipolar couplings and the ice proton spectrum model.

Frequencies are in kHz, lengths in angstrom, fields in gauss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import constants as cnst

from .geometry import CrystalOrientation, dimer_angles

# Secular heteronuclear prefactor: the deuteron splits the proton line into
# m_D * kappa * delta_HD * (1 - 3cos^2 theta), m_D in {-1, 0, 1}.
# Fixed by the two-spin FID oracle (see spinsim.heteronuclear_prefactor).
HETERO_KAPPA = 1.0

DEFAULT_BOND_LENGTH = 1.58  # angstrom
DEFAULT_BROADENING = 4.0  # kHz, Gaussian exp(-f^2/Delta^2)
DEFAULT_ENVELOPE_FWHM = 36.0  # kHz
DEFAULT_SIGMA = DEFAULT_ENVELOPE_FWHM / np.sqrt(2.0 * np.log(2.0))
MAGIC_ANGLE = float(np.degrees(np.arccos(1.0 / np.sqrt(3.0))))


@dataclass(frozen=True)
class PhysicalConstants:
    gamma_H: float = 4.2577  # kHz/G
    gamma_D: float = 0.6536  # kHz/G
    gamma_e: float = 2800.0  # kHz/G
    zfs: float = 2870.0  # MHz

    @property
    def mu0_hbar_factor(self) -> float:
        """mu0/(4 pi) * hbar * 2 pi * (1e7)^2, in SI.

        Multiply by gamma_a * gamma_b (kHz/G) / d^3 (m) to get delta in Hz.
        """
        # gamma in kHz/G -> rad/s/T is a factor 2 pi * 1e7; delta(Hz) = delta(rad/s) / 2 pi
        return cnst.mu_0 / (4 * np.pi) * cnst.hbar * (2 * np.pi) * 1e14


CONSTANTS = PhysicalConstants()


def coupling_parameter(d: float, gamma_a: float | None = None, gamma_b: float | None = None,
                       constants: PhysicalConstants = CONSTANTS) -> float:
    """Dipolar coupling parameter (mu0/4pi) gamma_a gamma_b hbar / d^3 in kHz.

    ``d`` in angstrom, gyromagnetic ratios in kHz/G (default: two protons).
    """
    if not d > 0:
        raise ValueError(f"bond length must be positive, got {d}")
    ga = constants.gamma_H if gamma_a is None else gamma_a
    gb = constants.gamma_H if gamma_b is None else gamma_b
    return constants.mu0_hbar_factor * ga * gb / (d * 1e-10) ** 3 / 1e3


def bond_length_from_coupling(delta: float, gamma_a: float | None = None,
                              gamma_b: float | None = None,
                              constants: PhysicalConstants = CONSTANTS) -> float:
    if not delta > 0:
        raise ValueError(f"coupling must be positive, got {delta}")
    return (coupling_parameter(1.0, gamma_a, gamma_b, constants) / delta) ** (1.0 / 3.0)


def splitting(delta, theta):
    """Homonuclear splitting (3/4) delta (1 - 3 cos^2 theta), theta in degrees.

    Signed; the doublet sits at +/- this value around the Larmor frequency.
    """
    c = np.cos(np.radians(theta))
    return 0.75 * np.asarray(delta) * (1.0 - 3.0 * c * c)


def hetero_splitting(delta_hd, theta, kappa: float = HETERO_KAPPA):
    """Proton-deuteron splitting; the triplet sits at -x, 0, +x."""
    c = np.cos(np.radians(theta))
    return kappa * np.asarray(delta_hd) * (1.0 - 3.0 * c * c)


@dataclass(frozen=True)
class DipolarParams:
    """Bond length (angstrom) with the derived H-H and H-D couplings (kHz)."""

    d: float = DEFAULT_BOND_LENGTH
    constants: PhysicalConstants = field(default=CONSTANTS, repr=False)

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"bond length must be positive, got {self.d}")

    @property
    def delta(self) -> float:
        return coupling_parameter(self.d, constants=self.constants)

    @property
    def delta_hd(self) -> float:
        c = self.constants
        return coupling_parameter(self.d, c.gamma_H, c.gamma_D, constants=c)


@dataclass(frozen=True)
class SpectrumParams:
    """HDO fraction p, line broadening, filter width and shift (kHz)."""

    p: float = 0.0
    broadening: float = DEFAULT_BROADENING
    sigma: float = DEFAULT_SIGMA
    f_shift: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"HDO fraction p must lie in [0, 1), got {self.p}")
        if not self.broadening > 0:
            raise ValueError(f"line broadening must be positive, got {self.broadening}")
        if not self.sigma > 0:
            raise ValueError(f"filter width sigma must be positive, got {self.sigma}")

    def replace(self, **kw) -> "SpectrumParams":
        return replace(self, **kw)

    @property
    def hdo_weight(self) -> float:
        return 2.0 * self.p / (1.0 - self.p)

    @property
    def line_fwhm(self) -> float:
        return 2.0 * np.sqrt(np.log(2.0)) * self.broadening


def ratio_to_fraction(ratio: float) -> float:
    """HDO:H2O molecule ratio -> HDO fraction p."""
    return ratio / (1.0 + ratio)


@dataclass
class SpectrumModel:
    """Gaussian lines times a Gaussian filter envelope.

    ``centers``, ``amplitudes`` are per line; every line has the same width.
    """

    centers: np.ndarray
    amplitudes: np.ndarray
    width: float
    f_shift: float = 0.0
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if np.any(self.amplitudes < 0):
            raise ValueError("line amplitudes must be non-negative")

    def envelope(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return np.exp(-2.0 * (f - self.f_shift) ** 2 / self.sigma**2)

    def raw(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        lines = np.exp(-((f[..., None] - self.centers) ** 2) / self.width**2) @ self.amplitudes
        return lines * self.envelope(f)

    def sample(self, f, normalize: bool = True) -> np.ndarray:
        y = self.raw(f)
        if normalize:
            m = y.max()
            if m > 0:
                y = y / m
        return y

    def weighted_lines(self) -> tuple[np.ndarray, np.ndarray]:
        """Line centers with amplitudes multiplied by the envelope."""
        return self.centers, self.amplitudes * self.envelope(self.centers)

    def time_signal(self, t, carrier: float = 0.0) -> np.ndarray:
        """Real time-domain signal whose spectrum around ``carrier`` is this model.

        ``t`` in seconds, ``carrier`` in kHz.  Each Gaussian line
        exp(-f^2/w^2) becomes a cosine with envelope exp(-(pi w t)^2).
        """
        t = np.asarray(t, dtype=float)
        c, a = self.weighted_lines()
        phase = 2e3 * np.pi * np.outer(t, carrier + c)
        decay = np.exp(-((np.pi * self.width * 1e3 * t) ** 2))
        return (np.cos(phase) @ a) * decay


def spectrum_model(o: CrystalOrientation | None, dp: DipolarParams, sp: SpectrumParams,
                   thetas: Sequence[float] | None = None) -> SpectrumModel:
    """Lines of the ice spectrum for an orientation (or explicit dimer angles)."""
    if thetas is None:
        if o is None:
            raise ValueError("need an orientation or explicit dimer angles")
        thetas = dimer_angles(o)
    thetas = np.asarray(thetas, dtype=float)
    df = splitting(dp.delta, thetas)
    dfd = hetero_splitting(dp.delta_hd, thetas)
    n = len(thetas)
    centers = [df, -df]
    amps = [np.ones(n), np.ones(n)]
    w = sp.hdo_weight
    if w > 0:
        centers += [dfd, np.zeros(n), -dfd]
        amps += [np.full(n, w / 3.0)] * 3
    return SpectrumModel(np.concatenate(centers), np.concatenate(amps), sp.broadening,
                         sp.f_shift, sp.sigma)


def synthesize_spectrum(o: CrystalOrientation | None, dp: DipolarParams, sp: SpectrumParams,
                        grid, thetas: Sequence[float] | None = None,
                        normalize: bool = True) -> np.ndarray:
    """Sample the fitting function S(alpha, beta, f_shift) on ``grid`` (kHz)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or (len(grid) > 1 and np.any(np.diff(grid) <= 0)):
        raise ValueError("frequency grid must be one-dimensional and strictly increasing")
    return spectrum_model(o, dp, sp, thetas).sample(grid, normalize)


def default_grid(half_width: float = 60.0, step: float = 0.25) -> np.ndarray:
    n = int(round(2 * half_width / step)) + 1
    return np.linspace(-half_width, half_width, n)


def find_peaks(f, y, n: int | None = None, min_rel: float = 0.0) -> np.ndarray:
    """Local maxima of a sampled curve, strongest first (returns frequencies)."""
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    interior = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])
    idx = np.nonzero(interior)[0] + 1
    idx = idx[y[idx] >= min_rel * y.max()]
    idx = idx[np.argsort(-y[idx], kind="stable")]
    if n is not None:
        idx = idx[:n]
    return f[idx]
