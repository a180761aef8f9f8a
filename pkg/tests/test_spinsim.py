import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nanonmr import dipolar
from nanonmr.sigproc import TimeSeries, dft, fit_sinusoids, local_maxima
from nanonmr.spinsim import (MAX_DIMENSION, DipolarPair, Free, Nucleus, Propagator, PulseSequence,
                             SpinSystem, XY8_PHASES, _QubitModel, build_hamiltonian,
                             correlation_response, evolve, fid, resonant_tau, spin_matrices,
                             xy8_response)

B_1847 = 1847.0 / 4.2577  # field for a 1847 kHz proton Larmor frequency


@pytest.mark.parametrize("s", [0.5, 1.0])
def test_spin_matrices_commutation(s):
    x, y, z = spin_matrices(s)
    np.testing.assert_allclose(x @ y - y @ x, 1j * z, atol=1e-14)
    np.testing.assert_allclose(x @ x + y @ y + z @ z, s * (s + 1) * np.eye(int(2 * s + 1)), atol=1e-14)


def test_single_proton_gap():
    h = build_hamiltonian(SpinSystem([Nucleus("H")], b0=434.4))
    e = np.linalg.eigvalsh(h)
    assert e[1] - e[0] == pytest.approx(4.2577 * 434.4, rel=1e-12)
    assert e[1] - e[0] == pytest.approx(1849.5, abs=0.1)


def test_nv_only_eigenvalues():
    sys = SpinSystem([], b0=100.0, nv=True)
    e = np.sort(np.linalg.eigvalsh(build_hamiltonian(sys)))
    d, gb = 2870e3, 2800.0 * 100.0
    np.testing.assert_allclose(e, np.sort([0.0, d - gb, d + gb]), rtol=1e-12)


def test_hamiltonian_hermitian():
    sys = SpinSystem([Nucleus("H", 5, 10), Nucleus("D", 1, 2), Nucleus("H")], b0=300,
                     b0_direction=(0.1, 0.2, 1.0), nv=True,
                     pairs=[DipolarPair(0, 1, 4.7, 30), DipolarPair(0, 2, 30.5, 70)], secular=False)
    h = build_hamiltonian(sys)
    assert h.shape == (36, 36)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-12)


def test_hyperfine_block_structure():
    sys = SpinSystem([Nucleus("H", a_zz=7.0, a_zx=3.0)], b0=400, nv=True)
    h = build_hamiltonian(sys)
    # S_z-conditional hyperfine: no NV-off-diagonal nuclear terms from H_hf at B0 || z
    for i in range(3):
        for j in range(3):
            if i != j:
                np.testing.assert_allclose(h[2 * i:2 * i + 2, 2 * j:2 * j + 2], 0.0, atol=1e-12)


def test_dimension_cap():
    SpinSystem([Nucleus("D")] * 4 + [Nucleus("H")], nv=True)  # 3 * 81 * 2 = 486
    with pytest.raises(ValueError):
        SpinSystem([Nucleus("D")] * 5, nv=True)
    assert MAX_DIMENSION == 486


def test_bad_inputs():
    with pytest.raises(ValueError):
        Nucleus("C")
    with pytest.raises(ValueError):
        DipolarPair(0, 0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DipolarPair(0, 1)
    with pytest.raises(ValueError):
        SpinSystem([Nucleus("H")], pairs=[DipolarPair(0, 1, 1.0, 0.0)])
    with pytest.raises(ValueError):
        Propagator(np.array([[0, 1], [0, 0]], dtype=complex))


def test_fid_single_proton_pure_tone():
    sys = SpinSystem([Nucleus("H")], b0=434.4)
    ts = fid(sys, 200e-6, 1.0 / 8e6)
    assert ts.warning is None
    fit = fit_sinusoids(ts, 1)
    assert fit.components[0].frequency == pytest.approx(4.2577 * 434.4, abs=1e-6)
    assert fit.residual_norm < 1e-6


def test_fid_warning_when_undersampled():
    ts = fid(SpinSystem([Nucleus("H")], b0=434.4), 100e-6, 1e-6)
    assert ts.warning is not None and "undersamples" in ts.warning


def test_fid_magic_angle_single_line():
    d = dipolar.coupling_parameter(1.58)
    sys = SpinSystem([Nucleus("H"), Nucleus("H")], b0=1000, pairs=[DipolarPair(0, 1, d, dipolar.MAGIC_ANGLE)])
    ts = fid(sys, 2e-3, 1.0 / 20e6)
    sp = dft(ts, n_fft=4 * len(ts), window="hann")
    idx = local_maxima(sp.magnitude, min_rel=0.2)
    assert len(idx) == 1


def test_fid_doublet_at_90_degrees():
    d = dipolar.coupling_parameter(1.58)
    sys = SpinSystem([Nucleus("H"), Nucleus("H")], b0=1000, pairs=[DipolarPair(0, 1, d, 90.0)])
    ts = fid(sys, 2e-3, 1.0 / 20e6)
    f = fit_sinusoids(ts, 2).frequencies
    assert (f[1] - f[0]) / 2 == pytest.approx(dipolar.splitting(d, 90.0), rel=1e-6)
    assert (f[1] - f[0]) == pytest.approx(2 * 22.84, abs=0.1)


def test_state_norm_preserved():
    sys = SpinSystem([Nucleus("H", 5, 10), Nucleus("H", 3, -4)], b0=434.4, nv=True,
                     pairs=[DipolarPair(0, 1, 30.5, 22)])
    h = build_hamiltonian(sys)
    rng = np.random.default_rng(1)
    psi = rng.normal(size=len(h)) + 1j * rng.normal(size=len(h))
    psi /= np.linalg.norm(psi)
    for t in (1e-9, 3.7e-7, 1e-4):
        assert np.linalg.norm(evolve(h, psi, t)) == pytest.approx(1.0, abs=1e-10)


def test_energy_conserved():
    sys = SpinSystem([Nucleus("H"), Nucleus("D")], b0=434.4, pairs=[DipolarPair(0, 1, 4.7, 40)],
                     secular=False)
    h = build_hamiltonian(sys)
    rng = np.random.default_rng(2)
    psi = rng.normal(size=len(h)) + 1j * rng.normal(size=len(h))
    psi /= np.linalg.norm(psi)
    e0 = (psi.conj() @ h @ psi).real
    for t in (1e-7, 1e-5, 1e-3):
        p = evolve(h, psi, t)
        assert (p.conj() @ h @ p).real == pytest.approx(e0, abs=1e-10 * max(1.0, abs(e0)))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.floats(100e-9, 400e-9), st.floats(-20, 20), st.floats(-20, 20))
def test_sequence_unitary(k, tau, azz, azx):
    sys = SpinSystem([Nucleus("H", azz, azx), Nucleus("H")], b0=434.4, nv=True,
                     pairs=[DipolarPair(0, 1, 30.5, 40)])
    m = _QubitModel(sys)
    u = m.unitary(PulseSequence.xy8(k, tau))
    np.testing.assert_allclose(u @ u.conj().T, np.eye(len(u)), atol=1e-10)


def test_xy8_structure():
    seq = PulseSequence.xy8(2, 100e-9)
    pulses = [e for e in seq.elements if not isinstance(e, Free)]
    assert [p.phase for p in pulses] == list(XY8_PHASES) * 2
    assert all(p.angle == pytest.approx(np.pi) for p in pulses)
    assert seq.duration == pytest.approx(16 * 100e-9)
    with pytest.raises(ValueError):
        PulseSequence.xy8(0, 1e-7)


def test_xy8_no_nuclei_is_flat():
    r = xy8_response(SpinSystem([], nv=True), np.linspace(200e-9, 300e-9, 11), 4)
    np.testing.assert_allclose(r, 1.0, atol=1e-12)


def test_xy8_dip_at_resonance():
    sys = SpinSystem([Nucleus("H", a_zz=0.0, a_zx=10.0)], b0=434.4, nv=True)
    tau0 = resonant_tau(sys.larmor())
    assert tau0 == pytest.approx(270.3e-9, abs=0.1e-9)
    taus = np.linspace(0.95 * tau0, 1.05 * tau0, 201)
    r = xy8_response(sys, taus, 8)
    assert taus[np.argmin(r)] == pytest.approx(tau0, abs=0.5e-9)
    assert r.min() < 0.97 and r.max() > 0.99


def _dip_width(k):
    sys = SpinSystem([Nucleus("H", a_zz=0.0, a_zx=10.0)], b0=434.4, nv=True)
    tau0 = resonant_tau(sys.larmor())
    taus = np.linspace(0.9 * tau0, 1.1 * tau0, 401)
    r = xy8_response(sys, taus, k)
    f = 1.0 / (2 * taus) / 1e3
    half = r < (1 + r.min()) / 2
    return f[half].max() - f[half].min()


def test_xy8_dip_narrows_with_k():
    assert _dip_width(12) < _dip_width(4)


def test_sequences_need_nv():
    with pytest.raises(ValueError):
        xy8_response(SpinSystem([Nucleus("H")]), [1e-7], 1)


def test_correlation_period_and_t0_maximum():
    sys = SpinSystem([Nucleus("H", a_zz=0.0, a_zx=10.0)], b0=B_1847, nv=True)
    tau = resonant_tau(sys.larmor())
    ts = correlation_response(sys, np.arange(256) * 50e-9, tau, 4)
    assert np.argmax(ts.values) == 0
    f = fit_sinusoids(ts, 1, offset=True).components[0].frequency
    assert 1e6 / f == pytest.approx(541.4, abs=0.5)
    assert abs(1e6 / f - 544) <= 8


def test_correlation_two_protons_beat():
    sys = SpinSystem([Nucleus("H", a_zx=10), Nucleus("H", a_zx=10)], b0=B_1847, nv=True,
                     pairs=[DipolarPair(0, 1, 30.5, 22.0)])
    ts = correlation_response(sys, np.arange(2048) * 50e-9, resonant_tau(sys.larmor()), 4)
    centred = TimeSeries(ts.dt, ts.values - ts.values.mean())
    f = fit_sinusoids(centred, 2).frequencies - sys.larmor()
    expected = abs(dipolar.splitting(30.5, 22.0))
    np.testing.assert_allclose(np.sort(f), [-expected, expected], atol=0.3)
    assert expected == pytest.approx(36.1, abs=0.3)


def test_correlation_t1_and_spacing():
    sys = SpinSystem([Nucleus("H", a_zx=10)], b0=B_1847, nv=True)
    tau = resonant_tau(sys.larmor())
    t = np.arange(32) * 50e-9
    a = correlation_response(sys, t, tau, 2)
    b = correlation_response(sys, t, tau, 2, t1=1e-6)
    np.testing.assert_allclose(b.values, a.values * np.exp(-t / 1e-6), atol=1e-14)
    with pytest.raises(ValueError):
        correlation_response(sys, [0.0, 1e-7, 3e-7], tau, 2)
