"""Nanoscale NMR of ice with an NV-centre sensor: forward models and fits.

Modules: geometry (ice lattice and orientations), dipolar (couplings and
the spectrum model), spinsim (spin dynamics), sigproc (sampling, DFT,
unfolding, peak fits), fit (inverse problems), oracle (brute-force checks),
pipeline (measurement chain) and cli.
"""

from .dipolar import (DipolarParams, PhysicalConstants, SpectrumParams, coupling_parameter,
                      splitting, synthesize_spectrum)
from .fit import (FitResult, estimate_bond_length, fit_orientation, fit_ratio, larmor_slope)
from .geometry import CrystalOrientation, dimer_angles, dimer_orientations, orient
from .sigproc import alias, dft, fit_peaks, undersample, unfold

__version__ = "0.1.0"

__all__ = [
    "CrystalOrientation", "DipolarParams", "FitResult", "PhysicalConstants", "SpectrumParams",
    "alias", "coupling_parameter", "dft", "dimer_angles", "dimer_orientations",
    "estimate_bond_length", "fit_orientation", "fit_peaks", "fit_ratio", "larmor_slope",
    "orient", "splitting", "synthesize_spectrum", "undersample", "unfold",
]
