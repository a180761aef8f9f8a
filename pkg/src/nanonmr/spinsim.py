"""Dense-matrix simulation of an NV centre plus a few nuclear spins.

Hamiltonians are in kHz and times in seconds, so a propagator is
``expm(-2j * pi * 1e3 * H * t)``.  Propagators come from an eigendecomposition
of the (time-independent) Hamiltonian of each free-evolution segment.

Pulse sequences act on the NV qubit spanned by m_s = 0 and m_s = -1, in the
NV rotating frame: pulses are ideal and instantaneous, and between pulses the
nuclei evolve under ``H_nuc + m_s * (A_zz I_z + A_zx I_x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .dipolar import CONSTANTS, PhysicalConstants

TWO_PI_KHZ = 2e3 * np.pi  # kHz * s -> rad
MAX_DIMENSION = 486

SPIN_OF = {"H": 0.5, "D": 1.0, "NV": 1.0}


def spin_matrices(s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sx, Sy, Sz for spin ``s`` in the |m = s, ..., -s> basis."""
    m = np.arange(s, -s - 1, -1)
    n = len(m)
    sp = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        sp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    sx = (sp + sp.T.conj()) / 2
    sy = (sp - sp.T.conj()) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


@dataclass
class Nucleus:
    species: str = "H"
    a_zz: float = 0.0  # hyperfine to the NV, kHz
    a_zx: float = 0.0

    def __post_init__(self):
        if self.species not in ("H", "D"):
            raise ValueError(f"nuclear species must be 'H' or 'D', got {self.species!r}")

    @property
    def spin(self) -> float:
        return SPIN_OF[self.species]

    def gamma(self, constants: PhysicalConstants) -> float:
        return constants.gamma_H if self.species == "H" else constants.gamma_D


@dataclass
class DipolarPair:
    """Coupling between nuclei ``i`` and ``j``.

    Either the shorthand (``delta`` kHz, ``theta`` degrees from B0) or a full
    symmetric 3x3 ``tensor`` in kHz with H = I_i . T . I_j (lab frame).
    """

    i: int
    j: int
    delta: float | None = None
    theta: float | None = None
    tensor: np.ndarray | None = None

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a dipolar pair needs two distinct nuclei")
        if self.tensor is None:
            if self.delta is None or self.theta is None:
                raise ValueError("give either (delta, theta) or a coupling tensor")
        else:
            t = np.asarray(self.tensor, dtype=float)
            if t.shape != (3, 3) or not np.allclose(t, t.T):
                raise ValueError("coupling tensor must be a symmetric 3x3 matrix")
            self.tensor = t

    def full_tensor(self, b0_dir: np.ndarray) -> np.ndarray:
        if self.tensor is not None:
            return self.tensor
        th = np.radians(self.theta)
        perp = np.cross(b0_dir, [0.0, 1.0, 0.0])
        if np.linalg.norm(perp) < 1e-12:
            perp = np.cross(b0_dir, [1.0, 0.0, 0.0])
        perp /= np.linalg.norm(perp)
        n = np.cos(th) * b0_dir + np.sin(th) * perp
        return self.delta * (np.eye(3) - 3.0 * np.outer(n, n))


@dataclass
class SpinSystem:
    """NV (optional) plus nuclei in a static field ``b0`` (gauss)."""

    nuclei: list = field(default_factory=list)
    b0: float = 434.4
    b0_direction: tuple = (0.0, 0.0, 1.0)
    pairs: list = field(default_factory=list)
    nv: bool = False
    zfs: float | None = None  # MHz, defaults to constants.zfs
    secular: bool = True
    constants: PhysicalConstants = field(default=CONSTANTS, repr=False)

    def __post_init__(self):
        self.nuclei = [n if isinstance(n, Nucleus) else Nucleus(n) for n in self.nuclei]
        d = np.asarray(self.b0_direction, dtype=float)
        if np.linalg.norm(d) == 0:
            raise ValueError("b0_direction must be nonzero")
        self.b0_direction = tuple(d / np.linalg.norm(d))
        for p in self.pairs:
            if not (0 <= p.i < len(self.nuclei) and 0 <= p.j < len(self.nuclei)):
                raise ValueError(f"dipolar pair ({p.i}, {p.j}) refers to a missing nucleus")
        if self.dimension > MAX_DIMENSION:
            raise ValueError(
                f"Hilbert dimension {self.dimension} exceeds the cap of {MAX_DIMENSION}"
            )

    @property
    def nuclear_dimension(self) -> int:
        return int(np.prod([int(2 * n.spin + 1) for n in self.nuclei]))

    @property
    def dimension(self) -> int:
        return self.nuclear_dimension * (3 if self.nv else 1)

    def larmor(self, species: str = "H") -> float:
        g = self.constants.gamma_H if species == "H" else self.constants.gamma_D
        return g * self.b0


def _embed(ops_per_site: list[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, ops_per_site)


def nuclear_operators(sys: SpinSystem) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(Ix, Iy, Iz) of each nucleus on the nuclear Hilbert space."""
    dims = [int(2 * n.spin + 1) for n in sys.nuclei]
    eyes = [np.eye(d, dtype=complex) for d in dims]
    out = []
    for k, n in enumerate(sys.nuclei):
        single = spin_matrices(n.spin)
        ops = []
        for s in single:
            sites = list(eyes)
            sites[k] = s
            ops.append(_embed(sites))
        out.append(tuple(ops))
    return out


def _secular_part(t: np.ndarray, homonuclear: bool) -> np.ndarray:
    # tensor expressed with z along B0; keep terms commuting with total Zeeman
    s = np.zeros((3, 3))
    s[2, 2] = t[2, 2]
    if homonuclear:
        s[0, 0] = s[1, 1] = 0.5 * (t[0, 0] + t[1, 1])
        s[0, 1] = 0.5 * (t[0, 1] - t[1, 0])
        s[1, 0] = -s[0, 1]
    return s


def _b0_frame(b0_dir: np.ndarray) -> np.ndarray:
    # rows: an orthonormal frame with the third axis along B0
    z = b0_dir
    x = np.cross([0.0, 1.0, 0.0], z)
    if np.linalg.norm(x) < 1e-12:
        x = np.array([1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    return np.vstack([x, np.cross(z, x), z])


def nuclear_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Zeeman plus dipolar Hamiltonian of the nuclei alone (kHz)."""
    dim = sys.nuclear_dimension
    h = np.zeros((dim, dim), dtype=complex)
    if not sys.nuclei:
        return h
    ops = nuclear_operators(sys)
    b = np.asarray(sys.b0_direction)
    for n, (ix, iy, iz) in zip(sys.nuclei, ops):
        h += n.gamma(sys.constants) * sys.b0 * (b[0] * ix + b[1] * iy + b[2] * iz)
    frame = _b0_frame(b)
    for p in sys.pairs:
        t = p.full_tensor(b)
        if sys.secular and p.tensor is None:
            homo = sys.nuclei[p.i].species == sys.nuclei[p.j].species
            t = frame.T @ _secular_part(frame @ t @ frame.T, homo) @ frame
        a, c = ops[p.i], ops[p.j]
        for u in range(3):
            for v in range(3):
                if t[u, v] != 0.0:
                    h += t[u, v] * (a[u] @ c[v])
    return h


def hyperfine_operator(sys: SpinSystem) -> np.ndarray:
    """Sum over nuclei of A_zz I_z + A_zx I_x (nuclear space, kHz)."""
    dim = sys.nuclear_dimension
    a = np.zeros((dim, dim), dtype=complex)
    for n, (ix, _iy, iz) in zip(sys.nuclei, nuclear_operators(sys)):
        a += n.a_zz * iz + n.a_zx * ix
    return a


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Full H = H_NV + H_hf + H_nuc in kHz (NV spin-1 first in the tensor order)."""
    h_nuc = nuclear_hamiltonian(sys)
    if not sys.nv:
        return h_nuc
    c = sys.constants
    sx, sy, sz = spin_matrices(1.0)
    b = sys.b0 * np.asarray(sys.b0_direction)
    zfs = (c.zfs if sys.zfs is None else sys.zfs) * 1e3
    h_nv = zfs * sz @ sz + c.gamma_e * (b[0] * sx + b[1] * sy + b[2] * sz)
    dn = sys.nuclear_dimension
    return (np.kron(h_nv, np.eye(dn)) + np.kron(sz, hyperfine_operator(sys))
            + np.kron(np.eye(3), h_nuc))


class Propagator:
    """exp(-i 2 pi H t) for a fixed Hermitian H via one eigendecomposition."""

    def __init__(self, h: np.ndarray):
        if not np.allclose(h, h.conj().T, atol=1e-9):
            raise ValueError("Hamiltonian is not Hermitian")
        self.energies, self.vectors = np.linalg.eigh(h)

    def __call__(self, t: float) -> np.ndarray:
        ph = np.exp(-1j * TWO_PI_KHZ * self.energies * t)
        return (self.vectors * ph) @ self.vectors.conj().T


def evolve(h: np.ndarray, psi: np.ndarray, t: float) -> np.ndarray:
    """Evolve a state vector or density matrix under ``h`` for ``t`` seconds."""
    u = Propagator(h)(t)
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        return u @ psi
    return u @ psi @ u.conj().T


# ---------------------------------------------------------------- time series


@dataclass
class TimeSeries:
    """Uniformly sampled real signal; ``dt`` in seconds."""

    dt: float
    values: np.ndarray
    t0: float = 0.0
    warning: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ValueError(f"sample interval must be positive, got {self.dt}")
        if self.values.ndim != 1 or len(self.values) < 2:
            raise ValueError("a time series needs at least two samples")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    def __len__(self):
        return len(self.values)


def fid(sys: SpinSystem, duration: float, dt: float, observe: str | None = None) -> TimeSeries:
    """Normalised transverse magnetisation after an ideal 90-degree pulse.

    High-temperature initial state rho ~ sum I_x over the observed species
    (default: protons if present).  The NV, if any, is ignored.  If ``dt``
    undersamples the highest contributing frequency the result carries a
    ``warning`` string.
    """
    if sys.nv:
        sys = SpinSystem(sys.nuclei, sys.b0, sys.b0_direction, sys.pairs, False,
                         secular=sys.secular, constants=sys.constants)
    if not sys.nuclei:
        raise ValueError("FID needs at least one nucleus")
    if observe is None:
        observe = "H" if any(n.species == "H" for n in sys.nuclei) else sys.nuclei[0].species
    ops = nuclear_operators(sys)
    obs = sum(ix for n, (ix, _, _) in zip(sys.nuclei, ops) if n.species == observe)
    if np.isscalar(obs):
        raise ValueError(f"no nuclei of species {observe!r}")
    h = nuclear_hamiltonian(sys)
    e, v = np.linalg.eigh(h)
    o = v.conj().T @ obs @ v
    # Tr(rho(t) O) = sum_jk o_jk o_kj exp(-i w (E_j - E_k) t)
    w = (o * o.T).real
    freqs = e[:, None] - e[None, :]
    mask = np.abs(w) > 1e-12 * np.abs(w).max()
    fj, wj = freqs[mask], w[mask]
    n = int(round(duration / dt)) + 1
    t = dt * np.arange(n)
    sig = np.cos(TWO_PI_KHZ * np.outer(t, fj)) @ wj / np.trace(obs @ obs).real
    warning = None
    fmax = np.abs(fj).max() if len(fj) else 0.0
    if fmax > 0.5 / dt / 1e3:
        warning = (f"sample interval {dt:g} s undersamples the {fmax:.1f} kHz component "
                   f"(Nyquist {0.5 / dt / 1e3:.1f} kHz)")
    return TimeSeries(dt, sig, 0.0, warning)


# -------------------------------------------------------------- NV sequences

_PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
_PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
XY8_PHASES = (0.0, 90.0, 0.0, 90.0, 90.0, 0.0, 90.0, 0.0)


def pulse(angle: float, phase: float, n_nuc: int) -> np.ndarray:
    """Ideal NV rotation by ``angle`` (radians) about an axis at ``phase`` degrees."""
    ph = np.radians(phase)
    g = np.cos(ph) * _PAULI_X + np.sin(ph) * _PAULI_Y
    r = np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * g
    return np.kron(r, np.eye(n_nuc))


@dataclass(frozen=True)
class Pulse:
    angle: float  # radians
    phase: float = 0.0  # degrees


@dataclass(frozen=True)
class Free:
    duration: float  # seconds


@dataclass
class PulseSequence:
    elements: list = field(default_factory=list)

    @classmethod
    def xy8(cls, k: int, tau: float) -> "PulseSequence":
        """(XY8)^k with pulse spacing ``tau`` and tau/2 at both ends."""
        if k < 1:
            raise ValueError("XY8 needs k >= 1")
        els: list = [Free(tau / 2)]
        phases = XY8_PHASES * k
        for n, ph in enumerate(phases):
            els.append(Pulse(np.pi, ph))
            els.append(Free(tau if n < len(phases) - 1 else tau / 2))
        return cls(els)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.elements + other.elements)

    @property
    def duration(self) -> float:
        return sum(e.duration for e in self.elements if isinstance(e, Free))


class _QubitModel:
    """NV qubit (m_s = 0, -1) tensored with the nuclear space."""

    def __init__(self, sys: SpinSystem):
        if not sys.nv:
            raise ValueError("sequence simulation needs an NV centre (nv=True)")
        self.n = sys.nuclear_dimension
        h = nuclear_hamiltonian(sys)
        a = hyperfine_operator(sys)
        self.blocks = (Propagator(h), Propagator(h - a))
        self._cache: dict = {}

    def free(self, t: float) -> np.ndarray:
        key = round(t * 1e15)
        u = self._cache.get(key)
        if u is None:
            n = self.n
            u = np.zeros((2 * n, 2 * n), dtype=complex)
            u[:n, :n] = self.blocks[0](t)
            u[n:, n:] = self.blocks[1](t)
            if len(self._cache) < 64:
                self._cache[key] = u
        return u

    def unitary(self, seq: PulseSequence) -> np.ndarray:
        u = np.eye(2 * self.n, dtype=complex)
        for e in seq.elements:
            if isinstance(e, Free):
                if e.duration > 0:
                    u = self.free(e.duration) @ u
            else:
                u = pulse(e.angle, e.phase, self.n) @ u
        return u

    def initial(self) -> np.ndarray:
        rho = np.zeros((2 * self.n, 2 * self.n), dtype=complex)
        rho[: self.n, : self.n] = np.eye(self.n) / self.n
        return rho

    def contrast(self, rho: np.ndarray) -> float:
        n = self.n
        return float(np.trace(rho[:n, :n]).real - np.trace(rho[n:, n:]).real)

    def dephase(self, rho: np.ndarray) -> np.ndarray:
        n = self.n
        out = rho.copy()
        out[:n, n:] = 0.0
        out[n:, :n] = 0.0
        return out


def _readout_block(k: int, tau: float, first_phase: float, last_phase: float) -> PulseSequence:
    return (PulseSequence([Pulse(np.pi / 2, first_phase)]) + PulseSequence.xy8(k, tau)
            + PulseSequence([Pulse(np.pi / 2, last_phase)]))


def xy8_response(sys: SpinSystem, tau_list: Sequence[float], k: int) -> np.ndarray:
    """NV population difference after pi/2 - (XY8)^k - pi/2 for each spacing.

    The closing pulse is about -x so the signal is 1 without nuclei; it dips
    where 1/(2 tau) matches a nuclear precession frequency.
    """
    model = _QubitModel(sys)
    rho0 = model.initial()
    out = np.empty(len(tau_list))
    for m, tau in enumerate(tau_list):
        u = model.unitary(_readout_block(k, tau, 0.0, 180.0))
        out[m] = model.contrast(u @ rho0 @ u.conj().T)
    return out


def correlation_response(sys: SpinSystem, t_list: Sequence[float], tau: float, k: int,
                         t1: float | None = None) -> TimeSeries:
    """Correlation signal versus free-evolution time T.

    pi/2_x - (XY8)^k - pi/2_y, free evolution T (NV coherence dephased), then
    pi/2_x - (XY8)^k - pi/2_y and readout.  Returned values are the NV
    population difference; an optional exp(-T/T1) factor multiplies them.
    ``t_list`` must be uniformly spaced.
    """
    t_list = np.asarray(t_list, dtype=float)
    if len(t_list) < 2:
        raise ValueError("need at least two T values")
    steps = np.diff(t_list)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-15):
        raise ValueError("T values must be uniformly spaced")
    model = _QubitModel(sys)
    block = model.unitary(_readout_block(k, tau, 0.0, 90.0))
    rho = model.dephase(block @ model.initial() @ block.conj().T)
    h = nuclear_hamiltonian(sys)
    a = hyperfine_operator(sys)
    n = model.n
    e0, v0 = np.linalg.eigh(h)
    e1, v1 = np.linalg.eigh(h - a)
    # work in the eigenbases of the two conditional Hamiltonians
    r0 = v0.conj().T @ rho[:n, :n] @ v0
    r1 = v1.conj().T @ rho[n:, n:] @ v1
    bd = np.zeros((2 * n, 2 * n), dtype=complex)
    bd[:n, :n] = v0
    bd[n:, n:] = v1
    # population difference after the second block, as a linear functional
    obs = np.diag(np.r_[np.ones(n), -np.ones(n)]).astype(complex)
    meas = bd.conj().T @ block.conj().T @ obs @ block @ bd
    m00, m11 = meas[:n, :n], meas[n:, n:]
    out = np.empty(len(t_list))
    for i, t in enumerate(t_list):
        p0 = np.exp(-1j * TWO_PI_KHZ * e0 * t)
        p1 = np.exp(-1j * TWO_PI_KHZ * e1 * t)
        rt0 = (p0[:, None] * r0) * p0.conj()[None, :]
        rt1 = (p1[:, None] * r1) * p1.conj()[None, :]
        out[i] = (np.sum(rt0 * m00.T) + np.sum(rt1 * m11.T)).real
    if t1 is not None:
        out = out * np.exp(-t_list / t1)
    return TimeSeries(float(steps[0]), out, float(t_list[0]))


def resonant_tau(larmor_khz: float) -> float:
    """Pulse spacing tau = 1/(2 f_L) in seconds."""
    return 1.0 / (2.0 * larmor_khz * 1e3)

