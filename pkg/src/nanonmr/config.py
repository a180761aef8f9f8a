"""Run configuration: TOML file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dipolar
from .dipolar import DipolarParams, PhysicalConstants, SpectrumParams
from .geometry import CONVENTIONS, CrystalOrientation
from .sigproc import DEFAULT_SAMPLING_RATE


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    field_gauss: float = 434.4
    bond_length: float = dipolar.DEFAULT_BOND_LENGTH  # angstrom
    alpha: float = 65.0  # deg
    beta: float = 79.0  # deg
    convention: str = "molecular"
    p: float = 1.0 / 3.0
    broadening: float = dipolar.DEFAULT_BROADENING  # kHz
    sigma: float = dipolar.DEFAULT_SIGMA  # kHz
    f_shift: float = 0.0  # kHz
    fs_khz: float = DEFAULT_SAMPLING_RATE
    grid_half_width: float = 60.0  # kHz
    grid_step: float = 0.25  # kHz
    n_samples: int = 1024  # time-domain samples
    n_peaks: int = 5
    unfold_half_width: float = 50.0  # kHz
    noise: float = 0.0  # additive white noise, fraction of the peak
    free_p: bool = False
    # correlation protocol
    xy8_order: int = 8
    t_step: float = 20e-9  # s
    n_t: int = 256
    out: str = "out"
    seed: int = 0
    constants: dict = field(default_factory=dict)

    # (name, lower, upper, lower inclusive, upper inclusive, unit)
    _RANGES = {
        "field_gauss": (0.0, 2000.0, False, True, "G"),
        "bond_length": (0.5, 5.0, True, True, "angstrom"),
        "alpha": (0.0, 180.0, True, True, "deg"),
        "beta": (0.0, 360.0, True, False, "deg"),
        "p": (0.0, 0.8, True, True, ""),
        "broadening": (0.0, 100.0, False, True, "kHz"),
        "sigma": (0.0, 1000.0, False, True, "kHz"),
        "f_shift": (-100.0, 100.0, True, True, "kHz"),
        "fs_khz": (0.0, 1e6, False, True, "kHz"),
        "grid_half_width": (45.0, 500.0, True, True, "kHz"),
        "grid_step": (0.0, 5.0, False, True, "kHz"),
        "n_samples": (16, 1 << 16, True, True, ""),
        "n_peaks": (1, 20, True, True, ""),
        "unfold_half_width": (0.0, 1e6, False, True, "kHz"),
        "noise": (0.0, 1.0, True, True, "of peak"),
        "xy8_order": (1, 64, True, True, ""),
        "t_step": (0.0, 1e-3, False, True, "s"),
        "n_t": (2, 1 << 14, True, True, ""),
        "seed": (0, 2**64 - 1, True, True, ""),
    }

    def validate(self) -> "RunConfig":
        for name, (lo, hi, lo_in, hi_in, unit) in self._RANGES.items():
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{name} must be a number, got {v!r}")
            if name in ("n_samples", "n_peaks", "xy8_order", "n_t", "seed") and int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            ok = (lo <= v if lo_in else lo < v) and (v <= hi if hi_in else v < hi)
            if not ok:
                rng = f"{'[' if lo_in else '('}{lo:g}, {hi:g}{']' if hi_in else ')'}"
                raise ConfigError(f"{name} = {v!r} is outside the valid range {rng} {unit}".rstrip())
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}, got {self.convention!r}")
        if not isinstance(self.free_p, bool):
            raise ConfigError(f"free_p must be true or false, got {self.free_p!r}")
        known = {f.name for f in dataclasses.fields(PhysicalConstants)}
        for k, v in self.constants.items():
            if k not in known:
                raise ConfigError(f"unknown constant {k!r}; valid names are {sorted(known)}")
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"constants.{k} must be a positive number, got {v!r}")
        if self.unfold_half_width >= self.fs_khz / 2:
            raise ConfigError(f"unfold_half_width = {self.unfold_half_width} must be below "
                              f"fs_khz/2 = {self.fs_khz / 2}")
        return self

    # ---------------------------------------------------------- derived objects

    @property
    def physical_constants(self) -> PhysicalConstants:
        return PhysicalConstants(**self.constants)

    @property
    def dipolar_params(self) -> DipolarParams:
        return DipolarParams(self.bond_length, self.physical_constants)

    @property
    def spectrum_params(self) -> SpectrumParams:
        return SpectrumParams(self.p, self.broadening, self.sigma, self.f_shift)

    @property
    def orientation(self) -> CrystalOrientation:
        return CrystalOrientation(self.alpha, self.beta, self.convention)

    @property
    def larmor(self) -> float:
        return self.physical_constants.gamma_H * self.field_gauss

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config (flat keys plus an optional [constants] table)."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    if "constants" in data and not isinstance(data["constants"], dict):
        raise ConfigError("constants must be a table")
    if "out" in data:
        data["out"] = str(Path(data["out"]))
    return RunConfig(**data).validate()
