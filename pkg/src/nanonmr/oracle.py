"""Brute-force checks of the analytic splittings against exact FIDs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dipolar
from .dipolar import CONSTANTS, PhysicalConstants
from .sigproc import dft, fit_sinusoids, local_maxima
from .spinsim import DipolarPair, Nucleus, SpinSystem, fid

DEFAULT_THETAS = (0.0, 22.0, 41.0, dipolar.MAGIC_ANGLE, 70.0, 90.0)
DEFAULT_DISTANCES = (1.4, 1.58, 1.8)
DEFAULT_FIELD = 1000.0  # G; omega_L >= 50 delta for every default cell


@dataclass
class FidLines:
    frequencies: np.ndarray  # kHz, ascending
    amplitudes: np.ndarray
    resolution: float  # kHz


def fid_lines(sys: SpinSystem, duration: float = 2e-3, band: float = 200.0,
              rel_threshold: float = 0.2, observe: str | None = None) -> FidLines:
    """Line positions near the Larmor frequency of an exact FID.

    Peaks of the DFT within ``band`` kHz of the observed Larmor frequency and
    above ``rel_threshold`` of the strongest are refined by a sinusoid fit.
    """
    species = observe or ("H" if any(n.species == "H" for n in sys.nuclei) else "D")
    f_l = sys.larmor(species)
    dt = 1.0 / (4.0 * (f_l + band) * 1e3)
    ts = fid(sys, duration, dt, observe=species)
    sp = dft(ts, n_fft=4 * len(ts), window="hann")
    mag = sp.magnitude.copy()
    mag[np.abs(sp.frequencies - f_l) > band] = 0.0
    idx = local_maxima(mag, min_rel=rel_threshold)
    freqs = np.sort(sp.frequencies[idx])
    res = 1.0 / duration / 1e3
    # maxima closer than the Hann main-lobe half width are one line
    merged: list[float] = []
    for f in freqs:
        if not merged or f - merged[-1] > 2.0 * res:
            merged.append(f)
    fit = fit_sinusoids(ts, len(merged), min_separation=2.0 * res)
    comps = [c for c in fit.components if abs(c.frequency - f_l) <= band]
    return FidLines(np.array([c.frequency for c in comps]),
                    np.array([c.amplitude for c in comps]), res)


def two_proton_system(d: float, theta: float, b0: float, full: bool = False,
                      constants: PhysicalConstants = CONSTANTS, delta_scale: float = 1.0) -> SpinSystem:
    delta = dipolar.coupling_parameter(d, constants=constants) * delta_scale
    return SpinSystem([Nucleus("H"), Nucleus("H")], b0,
                      pairs=[DipolarPair(0, 1, delta, theta)], secular=not full,
                      constants=constants)


def measured_splitting(lines: FidLines) -> float:
    """Half the separation of the outermost lines (0 for a single line)."""
    if len(lines.frequencies) < 2:
        return 0.0
    return 0.5 * float(lines.frequencies[-1] - lines.frequencies[0])


@dataclass
class OracleCell:
    d: float
    theta: float
    b0: float
    analytic: float  # |3/4 delta (1 - 3cos^2)|, kHz
    numeric: float
    resolution: float
    passed: bool

    @property
    def rel_error(self) -> float:
        if self.analytic == 0:
            return 0.0
        return abs(self.numeric - self.analytic) / self.analytic


def check_cell(d: float, theta: float, b0: float = DEFAULT_FIELD, rtol: float = 0.01,
               full: bool = False, delta_scale: float = 1.0,
               duration: float = 2e-3) -> OracleCell:
    """Compare the FID splitting of one (d, theta) cell with the formula.

    ``delta_scale`` corrupts the simulated coupling; it exists to show the
    harness can fail.
    """
    sys = two_proton_system(d, theta, b0, full=full, delta_scale=delta_scale)
    lines = fid_lines(sys, duration=duration)
    num = measured_splitting(lines)
    ana = abs(float(dipolar.splitting(dipolar.coupling_parameter(d), theta)))
    if ana < lines.resolution:
        ok = num < lines.resolution
    else:
        ok = abs(num - ana) <= rtol * ana
    return OracleCell(d, theta, b0, ana, num, lines.resolution, bool(ok))


def oracle_grid(thetas: Sequence[float] = DEFAULT_THETAS,
                distances: Sequence[float] = DEFAULT_DISTANCES,
                b0: float = DEFAULT_FIELD, rtol: float = 0.01,
                delta_scale: float = 1.0) -> list[OracleCell]:
    return [check_cell(d, th, b0, rtol, delta_scale=delta_scale)
            for d in distances for th in thetas]


def heteronuclear_prefactor(d: float = dipolar.DEFAULT_BOND_LENGTH, theta: float = 90.0,
                            b0: float = DEFAULT_FIELD, full: bool = False) -> float:
    """kappa such that the H line splits to m_D * kappa * delta_HD (1 - 3cos^2)."""
    c = CONSTANTS
    dhd = dipolar.coupling_parameter(d, c.gamma_H, c.gamma_D)
    sys = SpinSystem([Nucleus("H"), Nucleus("D")], b0,
                     pairs=[DipolarPair(0, 1, dhd, theta)], secular=not full)
    lines = fid_lines(sys, observe="H", rel_threshold=0.1)
    if len(lines.frequencies) != 3:
        raise RuntimeError(f"expected a proton triplet, found {len(lines.frequencies)} lines")
    g = 1.0 - 3.0 * np.cos(np.radians(theta)) ** 2
    return measured_splitting(lines) / (dhd * abs(g))
