import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from weakcorr.fitting import (
    FitError,
    LineShapeParams,
    envelope_overlap,
    fit_global,
    fit_individual,
    fit_individual_all,
    fit_sound_vs_rc,
    initial_guess,
    lineshape,
    lineshape_jacobian,
    psf,
)
from weakcorr.model import InvalidArgument, sound_speed_ratio

K_CUT = 2.58e6
TRUTH = LineShapeParams(s_p=1.0, h_f=0.4, gamma_f=600.0, c=1.31e-3, sigma=0.3 / K_CUT, k_cut=K_CUT)
DX = np.arange(-30, 31) * 0.5e-6
DTS = np.arange(0.5, 8, 1.0) * 1e-3


def _quad_psf(x, sigma, k_cut):
    w = lambda k: math.exp(-0.5 * (k * sigma) ** 2)  # noqa: E731
    num = quad(lambda k: w(k) * math.cos(k * x), 0, k_cut, limit=400)[0]
    return num / quad(w, 0, k_cut)[0]


def test_psf_against_adaptive_quadrature():
    for x in (0.0, 0.7e-6, 2.3e-6, 6e-6):
        assert psf(np.array([x]), TRUTH.sigma, K_CUT)[0] == pytest.approx(
            _quad_psf(x, TRUTH.sigma, K_CUT), abs=1e-10)


def test_psf_has_side_lobes():
    p = psf(DX, TRUTH.sigma, K_CUT)
    assert p[DX == 0][0] == pytest.approx(1.0)
    assert p.min() < -0.05


@given(st.floats(0, 1e-2), st.floats(-2e-5, 2e-5))
def test_linear_phonon_term_is_travelling_pair(dt, x):
    p = dataclasses.replace(TRUTH, h_f=0.0)
    lhs = lineshape(np.array([x]), dt, p)[0]
    rhs = 0.5 * (psf(np.array([x - p.c * dt]), p.sigma, K_CUT)[0]
                 + psf(np.array([x + p.c * dt]), p.sigma, K_CUT)[0])
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_dispersive_phonon_term_against_quadrature():
    b = 7.3e-10
    p = dataclasses.replace(TRUTH, h_f=0.0, dispersion=b)
    dt, x = 3e-3, 4e-6
    w = lambda k: math.exp(-0.5 * (k * p.sigma) ** 2)  # noqa: E731
    om = lambda k: math.sqrt((p.c * k) ** 2 + (b * k * k) ** 2)  # noqa: E731
    num = quad(lambda k: w(k) * math.cos(k * x) * math.cos(om(k) * dt), 0, K_CUT, limit=400)[0]
    ref = num / quad(w, 0, K_CUT)[0]
    assert lineshape(np.array([x]), dt, p)[0] == pytest.approx(ref, abs=1e-9)


@given(st.floats(0, 8e-3))
def test_lineshape_even_in_dx(dt):
    a = lineshape(DX, dt, TRUTH)
    assert np.allclose(a, a[::-1], atol=1e-13)


@pytest.mark.parametrize("b", [0.0, 7.3e-10])
def test_jacobian_matches_finite_differences(b):
    p = dataclasses.replace(TRUTH, dispersion=b)
    names = ("s_p", "h_f", "gamma_f", "c", "sigma")
    for dt in (0.0, 2.5e-3):
        jac = lineshape_jacobian(DX, dt, p)
        for i, n in enumerate(names):
            h = 1e-6 * max(abs(getattr(p, n)), 1e-12)
            up = lineshape(DX, dt, dataclasses.replace(p, **{n: getattr(p, n) + h}))
            dn = lineshape(DX, dt, dataclasses.replace(p, **{n: getattr(p, n) - h}))
            fd = (up - dn) / (2 * h)
            scale = max(np.abs(fd).max(), 1e-12)
            assert np.max(np.abs(jac[:, i] - fd)) / scale < 1e-5, (n, dt)


def _data(p=TRUTH):
    return np.stack([lineshape(DX, t, p) for t in DTS])


def test_global_fit_recovers_noiseless_truth():
    values = _data()
    init = dataclasses.replace(TRUTH, s_p=0.8, h_f=0.2, gamma_f=300.0, c=1.1e-3, sigma=0.4 / K_CUT)
    res = fit_global(DX, DTS, values, init)
    for n in ("s_p", "h_f", "gamma_f", "c", "sigma"):
        assert getattr(res.params, n) == pytest.approx(getattr(TRUTH, n), rel=1e-6), n
    assert res.chi2 < 1e-20


def test_global_fit_with_dispersion_and_initial_guess():
    truth = dataclasses.replace(TRUTH, dispersion=7.3e-10)
    values = _data(truth)
    init = initial_guess(DX, DTS, values, K_CUT, dispersion=7.3e-10)
    assert init.c == pytest.approx(truth.c, rel=0.3)
    res = fit_global(DX, DTS, values, init)
    assert res.params.c == pytest.approx(truth.c, rel=1e-6)


def test_individual_fit_recovers_speed():
    values = _data()
    init = dataclasses.replace(TRUTH, s_p=0.7, c=1.5e-3)
    for res, t in zip(fit_individual_all(DX, DTS, values, init), DTS):
        assert res.params.c == pytest.approx(TRUTH.c, rel=1e-6)
        assert res.params.h_f == pytest.approx(TRUTH.h_f * math.exp(-TRUTH.gamma_f * t), rel=1e-5, abs=1e-9)
        assert res.extra["dt"] == t


def test_reflection_invariance():
    rng = np.random.default_rng(0)
    values = _data() + 0.01 * rng.standard_normal((len(DTS), len(DX)))
    a = fit_global(DX, DTS, values, TRUTH)
    b = fit_global(-DX[::-1], DTS, values[:, ::-1], TRUTH)
    assert a.params.c == pytest.approx(b.params.c, rel=1e-8)
    assert a.chi2 == pytest.approx(b.chi2, rel=1e-8)


def test_noisy_fit_error_bars_calibrated():
    rng = np.random.default_rng(1)
    sem = np.full((len(DTS), len(DX)), 0.02)
    cs, errs = [], []
    for _ in range(60):
        values = _data() + sem * rng.standard_normal(sem.shape)
        res = fit_global(DX, DTS, values, TRUTH, sem=sem)
        cs.append(res.params.c)
        errs.append(res.stderr("c"))
    assert np.mean(cs) == pytest.approx(TRUTH.c, rel=0.005)
    assert np.std(cs) == pytest.approx(np.mean(errs), rel=0.3)


def test_chi2_nesting():
    rng = np.random.default_rng(2)
    values = _data() + 0.01 * rng.standard_normal((len(DTS), len(DX)))
    glob = fit_global(DX, DTS, values, TRUTH)
    ind = fit_individual_all(DX, DTS, values, glob.params)
    assert sum(r.chi2 for r in ind) <= glob.chi2 * (1 + 1e-9)


def test_exclusion_drops_points():
    p = dataclasses.replace(TRUTH, exclusion=1.1e-6)
    res = fit_global(DX, DTS, _data(), p)
    assert res.residuals.size == len(DTS) * np.sum(np.abs(DX) >= 1.1e-6)


def test_fit_errors():
    with pytest.raises(InvalidArgument):
        fit_global(DX, DTS[:1], _data()[:1], TRUTH)
    with pytest.raises(InvalidArgument):
        fit_global(DX, DTS, _data()[:, :5], TRUTH)
    with pytest.raises(InvalidArgument):
        fit_global(DX, DTS, _data(), TRUTH, sem=np.zeros((len(DTS), len(DX))))
    with pytest.raises(FitError) as err:
        fit_individual(DX, DTS[2], _data()[2], dataclasses.replace(TRUTH, c=0.5e-3), max_nfev=1)
    assert isinstance(err.value.best, LineShapeParams)
    with pytest.raises(InvalidArgument):
        LineShapeParams(1, 0, -1.0, 1e-3, 1e-7, 1e6)


def test_envelope_overlap_direct_sum():
    w = np.array([0.0, 1.0, 2.0, 3.0, 1.0])
    direct = [np.sum(w[: len(w) - s] * w[s:]) for s in range(5)]
    assert np.allclose(envelope_overlap(w, np.arange(5)), np.array(direct) / direct[0])
    assert np.allclose(envelope_overlap(w, -np.arange(5)), envelope_overlap(w, np.arange(5)))


class TestSoundFit:
    rc = np.array([0.3, 0.49, 0.7, 0.88])

    def test_exact_recovery(self):
        w = 1.3
        c = 1.37e-3 * sound_speed_ratio(self.rc, w)
        fit = fit_sound_vs_rc(self.rc, c, w)
        assert fit.c0 == pytest.approx(1.37e-3, rel=1e-9)
        assert fit.curve(1.0) == pytest.approx(1.37e-3, rel=1e-9)

    def test_single_point(self):
        fit = fit_sound_vs_rc(0.49, 1.28e-3, 1.2)
        assert fit.c0 == pytest.approx(1.28e-3 / sound_speed_ratio(0.49, 1.2))
        assert math.isnan(fit.c0_err)
        assert fit_sound_vs_rc(0.49, 1.28e-3, 1.2, 0.02e-3).c0_err > 0

    def test_noisy_error_calibrated(self):
        rng = np.random.default_rng(3)
        err = np.full(4, 0.02e-3)
        truth = 1.37e-3 * sound_speed_ratio(self.rc, 1.2)
        fits = [fit_sound_vs_rc(self.rc, truth + err * rng.standard_normal(4), 1.2, err) for _ in range(3000)]
        c0 = np.array([f.c0 for f in fits])
        assert c0.mean() == pytest.approx(1.37e-3, rel=1e-3)
        assert c0.std() == pytest.approx(fits[0].c0_err, rel=0.05)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            fit_sound_vs_rc([], [], 1.0)
        with pytest.raises(InvalidArgument):
            fit_sound_vs_rc([0.5], [-1.0], 1.0)
        with pytest.raises(InvalidArgument):
            fit_sound_vs_rc([0.5], [1.0], 1.0, [0.0])
