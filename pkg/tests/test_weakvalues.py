import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erfc

from weakcorr.model import InvalidArgument
from weakcorr.simulator import MeasurementPulse, run_sequence, stack_outcomes
from weakcorr.weakvalues import (
    POSITIVE_ONLY,
    SIGN_WEIGHTED,
    EmptySelection,
    PostSelectionSpec,
    amplification,
    attenuation,
    ccf_estimate,
    expected_scale,
    per_shot_amplitudes,
    qwv_estimate,
    qwv_pairs,
    retained_fraction,
    slope_ratio,
    snr,
    snr_vs_fd,
    strength_fit,
    template_amplitude,
    threshold_from_fd,
)


def test_threshold_frozen_value():
    # oracle: bisection on erfc(T / sqrt2) = 1 - f_d
    assert threshold_from_fd(0.8) == pytest.approx(1.2815515655445997, rel=1e-12)
    assert threshold_from_fd(0.0) == 0.0
    assert threshold_from_fd(0.5, POSITIVE_ONLY) == 0.0


@given(st.floats(0.0, 0.999))
def test_threshold_inverts_retained_fraction(fd):
    t = threshold_from_fd(fd)
    assert 1 - 2 * retained_fraction(t) == pytest.approx(fd, abs=1e-12)
    assert PostSelectionSpec.from_discarded(fd).discarded_fraction == pytest.approx(fd, abs=1e-12)


def test_threshold_errors():
    for bad in (1.0, -0.1):
        with pytest.raises(InvalidArgument):
            threshold_from_fd(bad)
    with pytest.raises(InvalidArgument):
        threshold_from_fd(0.2, POSITIVE_ONLY)
    with pytest.raises(InvalidArgument):
        PostSelectionSpec(threshold=-1.0)
    with pytest.raises(InvalidArgument):
        PostSelectionSpec(mode="both")


def test_amplification_values():
    assert amplification(0.0) == 1.0
    assert amplification(threshold_from_fd(0.8)) == pytest.approx(2.199545404862742, rel=1e-12)


@given(st.floats(0.0, 8.0))
def test_amplification_closed_form(t):
    assert amplification(t) == pytest.approx(math.exp(-t * t / 2) / erfc(t / math.sqrt(2)), rel=1e-9)


@given(st.floats(0.0, 30.0))
def test_amplification_monotone_and_asymptotic(t):
    a = amplification(t)
    assert np.isfinite(a) and a >= 1.0
    assert amplification(t + 0.1) > a
    if t > 10:
        assert a == pytest.approx(t * math.sqrt(math.pi / 2), rel=0.01)


def test_conditional_mean_constant_monte_carlo():
    rng = np.random.default_rng(20)
    total, count = 0.0, 0
    for _ in range(10):
        x = rng.standard_normal(1_000_000) * math.sqrt(0.5)
        pos = x[x > 0]
        total += pos.sum()
        count += pos.size
    assert total / count == pytest.approx(1 / math.sqrt(math.pi), abs=1e-3)


def test_attenuation_monte_carlo():
    rng = np.random.default_rng(21)
    phi = theta = 0.2
    m = rng.standard_normal(1_000_000) * math.sqrt(0.5)
    q = rng.standard_normal(1_000_000) * math.sqrt(0.5)
    ideal = np.mean(m * np.sign(m))
    noisy = np.mean(m * np.sign(m / phi + q / theta))
    assert noisy / ideal == pytest.approx(1 / math.sqrt(2), rel=5e-3)
    assert attenuation(phi, theta) == pytest.approx(1 / math.sqrt(2), rel=1e-15)
    assert attenuation(phi, math.inf) == 1.0
    with pytest.raises(InvalidArgument):
        attenuation(0.0, 1.0)


@pytest.mark.parametrize("fd", [0.0, 0.4, 0.8])
def test_amplification_monte_carlo(fd):
    rng = np.random.default_rng(22)
    x = rng.standard_normal(1_000_000)
    t = threshold_from_fd(fd)
    sel = np.abs(x) > t
    ratio = np.mean(np.abs(x[sel])) / np.mean(np.abs(x))
    assert ratio == pytest.approx(amplification(t), rel=5e-3)


def _brute_qwv(d1, d2, w, cut):
    m, ny, nx = d1.shape
    num = np.zeros(nx)
    den = 0.0
    for s in range(m):
        for y in range(ny):
            for x in range(nx):
                if w[y, x] > 0 and d1[s, y, x] > cut[y, x]:
                    den += w[y, x] ** 2
                    for j, dx in enumerate(np.fft.fftfreq(nx, 1.0 / nx).astype(int)):
                        col = (x + dx) % nx
                        num[j] += w[y, x] * np.sum(w[:, col] * d2[s, :, col])
    return num / den


def test_qwv_estimate_matches_brute_force():
    rng = np.random.default_rng(23)
    d1, d2 = rng.standard_normal((2, 5, 3, 8))
    w = np.ones((3, 8))
    w[:, 0] = 0.0
    w[1, 3] = 0.5
    spec = PostSelectionSpec(0.3, POSITIVE_ONLY)
    cut = 0.3 * np.std(d1, axis=0)
    res = qwv_estimate(d1, d2, w, spec)
    assert np.allclose(res.curve, _brute_qwv(d1, d2, w, cut), rtol=1e-12, atol=1e-12)
    sw = qwv_estimate(d1, d2, w, PostSelectionSpec(0.3, SIGN_WEIGHTED))
    neg = _brute_qwv(-d1, d2, w, cut)
    assert np.allclose(sw.curve, 0.5 * (res.curve - neg), rtol=1e-12, atol=1e-12)
    assert np.allclose(res.per_shot.mean(axis=0), res.curve)


def test_ccf_estimate_normalisation():
    rng = np.random.default_rng(24)
    d = rng.standard_normal((50, 4, 16))
    w = np.ones((4, 16))
    dx, curve, per_shot = ccf_estimate(d, d, w)
    # zero lag of a y-summed autocorrelation of unit white noise: ny per pixel / ny = 1 after sum(w^2)
    assert curve[0] == pytest.approx(np.mean(np.sum(d, axis=1) ** 2) / 4, rel=1e-12)
    assert dx[1] == 1.0


def test_empty_selection():
    d = np.ones((3, 2, 8))
    with pytest.raises(EmptySelection) as err:
        qwv_estimate(d, d, np.ones((2, 8)), PostSelectionSpec(1.0, POSITIVE_ONLY), width=np.full((2, 8), 5.0))
    assert err.value.retained == 0


def test_template_amplitude_and_snr():
    t = np.array([0.0, 1.0, 2.0, 1.0])
    amp, se = template_amplitude(3 * t, t)
    assert amp == pytest.approx(3.0) and se == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InvalidArgument):
        template_amplitude(t, np.zeros(4))
    rng = np.random.default_rng(25)
    per = 3 * t + rng.standard_normal((400, 4))
    amps = per_shot_amplitudes(per, t)
    assert amps.mean() == pytest.approx(template_amplitude(per.mean(0), t)[0])
    s = snr(per.mean(0), per, t)
    assert np.isfinite(s) and s > 0
    dup = snr(per.mean(0), np.concatenate([per, per]), t)
    assert dup / s == pytest.approx(math.sqrt(2), rel=0.01)


def test_strength_fit_exact_line_and_offset_error():
    g = np.array([0.3, 0.6, 1.0])
    fit = strength_fit(g, 2.0 * (g - 0.05), np.full(3, 0.1))
    assert fit.slope == pytest.approx(2.0) and fit.offset == pytest.approx(0.05)
    assert fit.chi2 == pytest.approx(0.0, abs=1e-20)
    rng = np.random.default_rng(26)
    se = np.array([0.05, 0.07, 0.1])
    offs = [strength_fit(g, 2.0 * g + se * rng.standard_normal(3), se).offset for _ in range(4000)]
    assert np.std(offs) == pytest.approx(strength_fit(g, 2 * g, se).offset_se, rel=0.1)
    with pytest.raises(InvalidArgument):
        strength_fit([1.0], [1.0], [1.0])


def test_slope_ratio_exact_and_monte_carlo_error():
    g = np.array([0.3, 0.6, 1.0])
    rng = np.random.default_rng(27)
    den = [gi + rng.standard_normal(200) for gi in g]
    r, se = slope_ratio(g, [2 * d for d in den], den)
    assert r == pytest.approx(2.0) and se == pytest.approx(0.0, abs=1e-9)
    ratios, ses = [], []
    for _ in range(1500):
        den = [gi + rng.standard_normal(200) for gi in g]
        num = [1.5 * d + 0.8 * rng.standard_normal(200) for d in den]
        r, s = slope_ratio(g, num, den)
        ratios.append(r)
        ses.append(s)
    assert np.mean(ratios) == pytest.approx(1.5, abs=0.01)
    assert np.std(ratios) == pytest.approx(np.mean(ses), rel=0.1)


def test_expected_scale_and_pairs():
    spec = PostSelectionSpec.from_discarded(0.4)
    assert expected_scale(0.1, spec) == pytest.approx(0.2 / math.sqrt(math.pi) * amplification(spec.threshold))
    rng = np.random.default_rng(28)
    maps = rng.standard_normal((3, 20, 4, 16))
    out = qwv_pairs(maps, [(0, 1), (1, 2)], np.ones((4, 16)), [0.1, 0.2, 0.3], spec)
    res, scaled = out[(1, 2)]
    assert np.allclose(scaled, res.curve / expected_scale(0.2, spec))


@pytest.fixture(scope="module")
def cold_pair(cold_config):
    pulses = [MeasurementPulse(0.0, 1.0), MeasurementPulse(0.5e-3, 1.0)]
    recs = run_sequence(cold_config, pulses, shots=1024, seed=31)
    mean = cold_config.imaging.mean_profile
    return pulses, stack_outcomes(recs, 0) - mean, stack_outcomes(recs, 1) - mean


def test_simulated_weak_value_matches_backaction_scale(cold_config, cold_pair):
    pulses, d1, d2 = cold_pair
    w = np.zeros(cold_config.grid.shape)
    w[4:12, 30:98] = 1.0
    _, ccf, ccf_shots = ccf_estimate(d1, d2, w)
    res = qwv_estimate(d1, d2, w, PostSelectionSpec())
    t = np.zeros_like(ccf)
    t[:8] = ccf[:8]
    t[-7:] = ccf[-7:]
    a_ccf, se_ccf = template_amplitude(ccf, t, ccf_shots)
    a_qwv, se_qwv = template_amplitude(res.curve, t, res.per_shot)
    expect = expected_scale(pulses[0].phi(cold_config), res.spec)
    ratio = a_qwv / a_ccf
    err = ratio * math.hypot(se_qwv / a_qwv, se_ccf / a_ccf)
    assert abs(ratio - expect) < 3 * err


def test_snr_vs_fd_shape(cold_config, cold_pair):
    _, d1, d2 = cold_pair
    w = np.zeros(cold_config.grid.shape)
    w[4:12, 30:98] = 1.0
    t = np.zeros(cold_config.grid.nx)
    t[[0, 1, -1]] = 1.0
    fd, s, base = snr_vs_fd(d1, d2, w, [0.0, 0.5], t)
    assert fd.shape == s.shape == (2,) and base > 0
    with pytest.raises(InvalidArgument):
        snr_vs_fd(d1, d2, w, [1.0], t)
