import json
import warnings

import numpy as np
import pytest

from nanonmr import dipolar
from nanonmr import fit as ft
from nanonmr.dipolar import DipolarParams, SpectrumParams, default_grid, synthesize_spectrum
from nanonmr.fit import BondSample, UnidentifiableError
from nanonmr.geometry import (CrystalOrientation, equivalent_orientations, orientation_distance,
                              symmetric_distance)

F = default_grid(60, 0.25)
REF = CrystalOrientation(65, 79)
SP = SpectrumParams(p=1 / 3)


def _spectrum(o, sp=SP, dp=DipolarParams(), f=F):
    return synthesize_spectrum(o, dp, sp, f)


@pytest.fixture(scope="module")
def ref_fit():
    return ft.fit_orientation((F, _spectrum(REF)), sp=SP, reference=REF)


def test_self_fit_recovers_orientation(ref_fit):
    assert ref_fit.residual < 1e-12
    assert ref_fit.alpha == pytest.approx(65.0, abs=0.01)
    assert ref_fit.beta == pytest.approx(79.0, abs=0.01)
    assert ref_fit.f_shift == pytest.approx(0.0, abs=1e-3)
    np.testing.assert_allclose(ft.model_curve(ref_fit, F, sp=SP), _spectrum(REF), atol=1e-6)


def test_fit_not_worse_than_grid(ref_fit):
    rng = np.random.default_rng(4)
    y = _spectrum(REF) + 0.02 * rng.normal(size=F.size)
    res = ft.fit_orientation((F, y), sp=SP, reference=REF)
    alphas, betas = np.arange(0, 91, 1.0), np.arange(0, 120, 1.0)
    grid = ft._grid_rss(F, y, DipolarParams(), SP, alphas, betas)
    assert res.residual <= grid.min() + 1e-12
    assert res.residual == pytest.approx(ft.orientation_rss((F, y), res.orientation, sp=SP.replace(
        f_shift=res.f_shift)), rel=1e-9)


def test_equivalent_minima(ref_fit):
    mins = [CrystalOrientation(a, b) for a, b in ref_fit.equivalent_minima]
    assert len(mins) >= 24
    assert symmetric_distance(ref_fit.orientation, mins) < 1e-6
    # every minimum has a partner under the c-axis six-fold rotation
    for m in mins:
        c = m.to("c-axis")
        rot = CrystalOrientation(c.alpha, (c.beta + 60.0) % 360.0, "c-axis").to("molecular")
        assert min(orientation_distance(rot, q) for q in mins) < 0.5
    y = _spectrum(REF)
    for m in mins[:6]:
        assert ft.orientation_rss((F, y), m, sp=SP) < 1e-12


def test_without_reference_reports_canonical_equivalent():
    res = ft.fit_orientation((F, _spectrum(REF)), sp=SP)
    assert res.alpha <= 90.0
    assert symmetric_distance(res.orientation, [REF]) < 0.05


@pytest.mark.slow
def test_monte_carlo_orientations():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(20):
        o = CrystalOrientation(float(np.degrees(np.arccos(rng.uniform(-1, 1)))),
                               float(rng.uniform(0, 360)))
        y = _spectrum(o)
        y = y + 0.02 * rng.normal(size=y.size)
        res = ft.fit_orientation((F, y), sp=SP)
        hits += symmetric_distance(res.orientation, [o]) <= 3.0
    assert hits >= 18


def test_flat_input_is_unidentifiable():
    with pytest.raises(UnidentifiableError):
        ft.fit_orientation((F, np.zeros_like(F)), sp=SP)
    noise = np.random.default_rng(0).normal(size=F.size)
    with pytest.raises(UnidentifiableError):
        ft.fit_orientation((F, noise), sp=SP)


def test_coverage_precondition():
    f = default_grid(30, 0.25)
    with pytest.raises(ValueError, match="45"):
        ft.fit_orientation((f, _spectrum(REF, f=f)), sp=SP)


def test_joint_fit_matches_sequential():
    y = _spectrum(REF)
    joint = ft.fit_orientation((F, y), sp=SP.replace(p=0.2), free_p=True, reference=REF)
    seq_o = ft.fit_orientation((F, y), sp=SP, reference=REF)
    seq_p = ft.fit_ratio((F, y), seq_o.orientation)
    assert joint.p == pytest.approx(seq_p.p, abs=1e-3)
    assert joint.p == pytest.approx(1 / 3, abs=1e-3)
    assert symmetric_distance(joint.orientation, [seq_o.orientation]) < 0.05


def test_fit_result_json_round_trip(ref_fit):
    again = ft.FitResult.from_dict(json.loads(json.dumps(ref_fit.to_dict())))
    assert again == ref_fit
    assert "alpha" in ref_fit.report()


def test_thread_count_does_not_change_result(monkeypatch):
    y = _spectrum(CrystalOrientation(30, 200)) + 0.02 * np.random.default_rng(1).normal(size=F.size)
    monkeypatch.setenv("NANONMR_THREADS", "1")
    a = ft.fit_orientation((F, y), sp=SP)
    monkeypatch.setenv("NANONMR_THREADS", "4")
    b = ft.fit_orientation((F, y), sp=SP)
    assert a == b


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("NANONMR_THREADS", "many")
    with pytest.raises(ValueError):
        ft.worker_count()


# ----------------------------------------------------------------- HDO ratio


def test_ratio_one_to_two():
    res = ft.fit_ratio((F, _spectrum(REF)), REF)
    assert res.ratio == pytest.approx(0.5, abs=1e-3)
    assert res.p == pytest.approx(1 / 3, abs=0.05)
    noisy = _spectrum(REF) + 0.02 * np.random.default_rng(7).normal(size=F.size)
    assert ft.fit_ratio((F, noisy), REF).p == pytest.approx(1 / 3, abs=0.05)


def test_ratio_pure_h2o():
    res = ft.fit_ratio((F, _spectrum(REF, SP.replace(p=0.0))), REF)
    assert res.p < 0.02


def test_central_intensity_grows_with_hdo():
    fracs = []
    for r in np.linspace(0, 4, 9):
        p = dipolar.ratio_to_fraction(r)
        y = synthesize_spectrum(REF, DipolarParams(), SP.replace(p=p), F, normalize=False)
        fracs.append(y[np.argmin(np.abs(F))] / y.sum())
    assert np.all(np.diff(fracs) > 0)


def test_ratio_flat_warning():
    with pytest.warns(RuntimeWarning, match="flat"):
        res = ft.fit_ratio((F, _spectrum(REF)), REF, flat_threshold=1e9)
    assert res.flat and np.isinf(res.p_err)


# --------------------------------------------------------------- bond length


def _bond_samples(d, thetas=(22.0, 90.0), sp=SP.replace(p=0.0)):
    return [BondSample(F, synthesize_spectrum(None, DipolarParams(d), sp, F, thetas=[t]), theta=t)
            for t in thetas]


def test_bond_length_recovered():
    res = ft.estimate_bond_length(_bond_samples(1.58), SP.replace(p=0.0))
    assert res.d == pytest.approx(1.58, abs=0.1)
    assert res.d == pytest.approx(1.58, rel=1e-4)


def test_bond_length_scales_with_distance():
    a = ft.estimate_bond_length(_bond_samples(1.58), SP.replace(p=0.0)).d
    b = ft.estimate_bond_length(_bond_samples(3.16), SP.replace(p=0.0)).d
    assert b / a == pytest.approx(2.0, rel=1e-3)


def test_bond_length_coupling_scaling():
    # multiplying the coupling by c is the same as a distance d / c^(1/3)
    c = 1.3
    d_eff = 1.58 / c ** (1 / 3)
    res = ft.estimate_bond_length(_bond_samples(d_eff), SP.replace(p=0.0))
    assert res.d == pytest.approx(1.58 / c ** (1 / 3), rel=0.01)


def test_bond_length_orientation_samples():
    o2 = CrystalOrientation(20, 10)
    samples = [BondSample(F, _spectrum(o, SP.replace(p=0.0)), orientation=o) for o in (REF, o2)]
    assert ft.estimate_bond_length(samples, SP.replace(p=0.0)).d == pytest.approx(1.58, abs=0.01)


def test_bond_length_uncertainty_at_6khz_lines():
    sp = SP.replace(p=0.0, broadening=6.0 / (2 * np.sqrt(np.log(2))))
    assert sp.line_fwhm == pytest.approx(6.0)
    res = ft.estimate_bond_length(_bond_samples(1.58, sp=sp), sp)
    assert 0.05 <= res.d_err <= 0.12
    assert res.d_err_resolution > res.d_err_fit


def test_bond_length_magic_angle_unidentifiable():
    samples = _bond_samples(1.58, thetas=(dipolar.MAGIC_ANGLE, dipolar.MAGIC_ANGLE + 1e-6))
    with pytest.raises(UnidentifiableError):
        ft.estimate_bond_length(samples, SP.replace(p=0.0))


def test_bond_length_needs_distinct_angles():
    with pytest.raises(ValueError):
        ft.estimate_bond_length(_bond_samples(1.58, thetas=(30.0, 30.0)))
    with pytest.raises(ValueError):
        ft.estimate_bond_length(_bond_samples(1.58, thetas=(30.0,)))
    with pytest.raises(ValueError):
        BondSample(F, F, theta=10.0, orientation=REF)


# -------------------------------------------------------- gyromagnetic slope


FIELDS = [150.0, 250.0, 350.0, 434.4]


def test_slope_exact():
    res = ft.larmor_slope(FIELDS, 4.2577 * np.array(FIELDS))
    assert res.slope == pytest.approx(4.2577, rel=1e-12)
    two = ft.larmor_slope([100.0, 300.0], [425.77, 1277.31], intercept=True)
    assert two.slope == pytest.approx(4.2577, rel=1e-12)
    assert two.intercept == pytest.approx(0.0, abs=1e-9)
    assert np.isnan(two.slope_err)


def test_slope_monte_carlo_coverage():
    rng = np.random.default_rng(11)
    x = np.array(FIELDS)
    inside = 0
    for _ in range(100):
        y = 4.2577 * x + rng.normal(0, 5.0, x.size)
        r = ft.larmor_slope(x, y, sigmas=np.full(x.size, 5.0))
        inside += abs(r.slope - 4.2577) <= 3 * r.slope_err
    assert inside >= 95


def test_slope_needs_distinct_fields():
    with pytest.raises(ValueError, match="identical"):
        ft.larmor_slope([300.0, 300.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        ft.larmor_slope([300.0], [1.0])
