"""Ice I_h proton-dimer directions and crystal orientation.

The crystal frame has z along the hexagonal c-axis.  Sublattice A carries an
O-H bond along +c and three bonds tilted below the basal plane at azimuths
0, 120 and 240 degrees; sublattice B is its mirror through the basal plane.

Two orientation conventions are provided.  In both, the lab z-axis is the
static field B0.

``"molecular"`` (default)
    (alpha, beta) are the polar and azimuthal angles of B0 in the frame of a
    reference water molecule on sublattice A, the one whose protons sit on the
    bonds at azimuths 120 and 240 degrees.  The pole is that molecule's H-H
    vector, beta is measured from the normal of its H-O-H plane towards the
    lone-pair side of the bisector.

``"c-axis"``
    alpha is the tilt of the c-axis away from B0 and beta is a rotation of the
    crystal about its own c-axis (``R = Ry(alpha) @ Rz(beta)``), so (0, 0) is
    the identity.  The orientation fit searches in this parametrisation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TETRAHEDRAL_COS = -1.0 / 3.0
CONVENTIONS = ("molecular", "c-axis")


@dataclass(frozen=True)
class CrystalOrientation:
    """Orientation of the ice crystal relative to B0, angles in degrees."""

    alpha: float
    beta: float
    convention: str = "molecular"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(
                f"unknown orientation convention {self.convention!r}, "
                f"expected one of {CONVENTIONS}"
            )
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("orientation angles must be finite")
        if not 0.0 <= self.alpha <= 180.0:
            raise ValueError(f"alpha = {self.alpha} outside [0, 180] degrees")
        if not 0.0 <= self.beta < 360.0:
            raise ValueError(f"beta = {self.beta} outside [0, 360) degrees")

    def field_in_crystal(self) -> np.ndarray:
        """Unit vector of B0 expressed in crystal coordinates."""
        return rotation_matrix(self).T @ np.array([0.0, 0.0, 1.0])

    @classmethod
    def from_field(cls, b0_crystal, convention: str = "molecular") -> "CrystalOrientation":
        """Inverse of :meth:`field_in_crystal`.

        alpha lands in [0, 180] and beta in [0, 360).
        """
        b = _unit(b0_crystal)
        if convention == "molecular":
            s = molecular_frame() @ b
            alpha = np.degrees(np.arctan2(np.hypot(s[0], s[1]), s[2]))
            beta = np.degrees(np.arctan2(s[1], s[0]))
        elif convention == "c-axis":
            alpha = np.degrees(np.arctan2(np.hypot(b[0], b[1]), b[2]))
            beta = np.degrees(np.arctan2(b[1], -b[0]))
        else:
            raise ValueError(f"unknown orientation convention {convention!r}")
        beta = float(beta % 360.0)
        if beta >= 360.0 or np.isclose(beta, 360.0, rtol=0.0, atol=1e-12):
            beta = 0.0
        return cls(float(alpha), beta, convention)

    def to(self, convention: str) -> "CrystalOrientation":
        if convention == self.convention:
            return self
        return CrystalOrientation.from_field(self.field_in_crystal(), convention)


@dataclass(frozen=True)
class DimerSet:
    """H-H directions with multiplicities.

    ``directions`` holds the distinct directions (unit vectors, antipodes
    merged); ``multiplicities`` says how many of the twelve dimers of a cell
    share each one.  ``len()`` counts dimers, not distinct directions.
    """

    directions: np.ndarray
    multiplicities: tuple = field(default=())
    frame: str = "crystal"

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if dirs.shape[1] != 3:
            raise ValueError("directions must be an (n, 3) array")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-length dimer direction")
        object.__setattr__(self, "directions", dirs / norms[:, None])
        mult = tuple(int(m) for m in self.multiplicities) or (1,) * len(dirs)
        if len(mult) != len(dirs) or min(mult) < 1:
            raise ValueError("multiplicities must be positive, one per direction")
        object.__setattr__(self, "multiplicities", mult)
        if self.frame not in ("crystal", "lab"):
            raise ValueError(f"frame must be 'crystal' or 'lab', got {self.frame!r}")

    def __len__(self):
        return sum(self.multiplicities)

    def expanded(self) -> np.ndarray:
        """All dimers as an (N, 3) array, duplicates repeated."""
        return np.repeat(self.directions, self.multiplicities, axis=0)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("cannot normalise a zero-length vector")
    return v / n


def tetrahedral_directions(sublattice: str = "A") -> np.ndarray:
    """The four O-H bond directions of an oxygen on ``sublattice``.

    Sublattice A has its first bond along +c, sublattice B along -c.
    """
    s = np.sqrt(8.0) / 3.0
    phis = np.radians([0.0, 120.0, 240.0])
    bonds = np.vstack(
        [[0.0, 0.0, 1.0]]
        + [[s * np.cos(p), s * np.sin(p), TETRAHEDRAL_COS] for p in phis]
    )
    if sublattice == "A":
        return bonds
    if sublattice == "B":
        return bonds * np.array([1.0, 1.0, -1.0])
    raise ValueError(f"sublattice must be 'A' or 'B', got {sublattice!r}")


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    # first component that is clearly nonzero is made positive
    for c in v:
        if abs(c) > 1e-9:
            return v if c > 0 else -v
    return v


def dimer_orientations() -> DimerSet:
    """Enumerate the 12 H-H directions of an ice I_h cell (crystal frame).

    Every pair of O-H bonds on each sublattice hosts one possible water
    molecule.  The three in-plane directions occur on both sublattices, so the
    result has 9 distinct directions and 12 dimers.
    """
    raw = []
    for sub in ("A", "B"):
        bonds = tetrahedral_directions(sub)
        for i, j in itertools.combinations(range(4), 2):
            raw.append(_unit(bonds[i] - bonds[j]))
    dirs: list[np.ndarray] = []
    mult: list[int] = []
    for v in raw:
        v = _canonical_sign(v)
        for k, u in enumerate(dirs):
            if np.allclose(u, v, atol=1e-9):
                mult[k] += 1
                break
        else:
            dirs.append(v)
            mult.append(1)
    return DimerSet(np.array(dirs), tuple(mult), "crystal")


def molecular_frame() -> np.ndarray:
    """Rows are the x, y, z axes of the reference molecule's frame."""
    bonds = tetrahedral_directions("A")
    z = _unit(bonds[2] - bonds[3])
    x = _unit(np.cross(bonds[2], bonds[3]))
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(o: CrystalOrientation) -> np.ndarray:
    """Rotation taking crystal-frame vectors to the lab frame (B0 = z)."""
    a, b = np.radians(o.alpha), np.radians(o.beta)
    if o.convention == "c-axis":
        return _ry(a) @ _rz(b)
    return _ry(-a) @ _rz(-b) @ molecular_frame()


def orient(dimers: DimerSet, o: CrystalOrientation) -> DimerSet:
    if dimers.frame != "crystal":
        raise ValueError("dimer set is already in the lab frame")
    r = rotation_matrix(o)
    return DimerSet(dimers.directions @ r.T, dimers.multiplicities, "lab")


def angles_to_field(dimers: DimerSet, b0=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Angle of every dimer to ``b0`` in degrees, folded into [0, 90].

    One entry per dimer (multiplicities expanded), so 12 for an ice cell.
    """
    b = np.asarray(b0, dtype=float)
    n = np.linalg.norm(b)
    if n == 0:
        raise ValueError("b0 must be nonzero")
    cos = np.abs(dimers.expanded() @ (b / n))
    return np.degrees(np.arccos(np.clip(cos, 0.0, 1.0)))


def dimer_angles(o: CrystalOrientation) -> np.ndarray:
    """Shortcut: the 12 dimer angles to B0 for an orientation."""
    return angles_to_field(orient(dimer_orientations(), o))


def point_group() -> list[np.ndarray]:
    """The 24 operations of 6/mmm about the c-axis (crystal frame).

    The ice dimer set maps onto itself (up to sign) under each of them, so
    field directions related by these matrices give identical spectra.
    """
    mirror = np.diag([1.0, -1.0, 1.0])
    ops = []
    for k in range(6):
        r = _rz(np.radians(60.0 * k))
        for m in (np.eye(3), mirror):
            for s in (1.0, -1.0):
                ops.append(s * r @ m)
    return ops


def equivalent_orientations(o: CrystalOrientation) -> list[CrystalOrientation]:
    """All orientations related to ``o`` by lattice symmetry, ``o`` first."""
    b = o.field_in_crystal()
    out = [o]
    seen = [b]
    for g in point_group():
        v = g @ b
        if any(np.allclose(v, u, atol=1e-9) for u in seen):
            continue
        seen.append(v)
        out.append(CrystalOrientation.from_field(v, o.convention))
    return out


def orientation_distance(a: CrystalOrientation, b: CrystalOrientation) -> float:
    """Largest absolute angle difference in degrees, beta taken modulo 360.

    Both orientations are compared in the convention of ``a``.
    """
    b = b.to(a.convention)
    da = abs(a.alpha - b.alpha)
    db = abs((a.beta - b.beta + 180.0) % 360.0 - 180.0)
    return float(max(da, db))


def symmetric_distance(truth: CrystalOrientation, candidates: Iterable[CrystalOrientation]) -> float:
    """Distance from ``truth`` to the closest lattice-equivalent candidate."""
    best = np.inf
    for c in candidates:
        for e in equivalent_orientations(c):
            best = min(best, orientation_distance(truth, e))
    return float(best)


def angle_between(u: Sequence[float], v: Sequence[float]) -> float:
    u, v = _unit(u), _unit(v)
    return float(np.degrees(np.arccos(np.clip(u @ v, -1.0, 1.0))))
