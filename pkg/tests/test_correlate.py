import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakcorr.analysis.correlate import (
    CCF,
    VanHoveMatrix,
    assemble_van_hove,
    column_ccf,
    dsf,
    mirror_index,
    to_1d_ccf,
)
from weakcorr.analysis.pipeline import crop, merge_duplicate_delays
from weakcorr.analysis.spectra import cpsd
from weakcorr.analysis.window import WindowGeometry, squircle_tukey, window_energy
from weakcorr.model import InvalidArgument


def direct_ccf(a, b, w):
    """sum_dy sum_r w a(r) w b(r + (dx, dy)) / sum w^2, circular, dx centred."""
    ny, nx = a.shape
    wa, wb = w * a, w * b
    out = np.zeros(nx)
    for i, dx in enumerate(np.arange(nx) - nx // 2):
        for dy in range(ny):
            out[i] += np.sum(wa * np.roll(wb, (-dy, -dx), axis=(0, 1)))
    return out / np.sum(w**2)


@given(st.integers(0, 10_000))
def test_wiener_khinchin_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 6, 16))
    w = squircle_tukey((6, 16), WindowGeometry(7, 2.5))
    c = to_1d_ccf(cpsd(w * a, w * b, window_energy(w)).values, pitch=1.0)
    ref = direct_ccf(a, b, w)
    assert np.allclose(c.values, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
    col = column_ccf(w * a, w * b, window_energy(w))
    assert np.allclose(np.fft.fftshift(col), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_delta_displacement_sign():
    a = np.zeros((4, 16))
    b = np.zeros((4, 16))
    a[1, 5] = 1.0
    b[1, 8] = 1.0
    c = to_1d_ccf(cpsd(a, b, window_energy=1.0).values, pitch=0.5)
    assert c.dx[np.argmax(c.values)] == pytest.approx(1.5)
    assert c.values.max() == pytest.approx(1.0)


def test_mirror_index():
    for n in (7, 8):
        dx = np.arange(n) - n // 2
        m = mirror_index(n)
        ok = dx[m] == -dx
        assert ok[1:].all() if n % 2 == 0 else ok.all()
        assert np.array_equal(m[m], np.arange(n))


def test_symmetrize_and_assemble():
    dx = np.arange(8) - 4.0
    c1 = CCF(dx, dx.copy(), 2.0)
    c0 = CCF(dx, np.ones(8), 1.0)
    vh = assemble_van_hove([c1, c0])
    assert list(vh.dt) == [1.0, 2.0]
    assert np.allclose(vh.values[1][1:], 0)
    with pytest.raises(InvalidArgument):
        assemble_van_hove([CCF(dx, dx, None)])


def test_dsf_of_travelling_waves_peaks_on_dispersion():
    nx, nt = 64, 16
    dx = (np.arange(nx) - nx // 2) * 1.0
    dt = np.arange(nt) * 0.1
    k0 = 2 * np.pi * 5 / nx
    w0 = 2 * np.pi * 3 / ((2 * nt - 1) * 0.1)  # on the mirrored grid
    g = np.cos(k0 * dx[None, :]) * np.cos(w0 * dt[:, None])
    s = dsf(VanHoveMatrix(dx, dt, g))
    pos = s.omega >= 0
    kj = np.argmin(np.abs(s.k - k0))
    ridge = s.ridge()
    assert ridge[kj] == pytest.approx(w0, rel=1e-9)
    assert ridge[np.argmin(np.abs(s.k + k0))] == pytest.approx(w0, rel=1e-9)
    assert s.values[pos].max() == pytest.approx(s.values.max())


def test_dsf_cutoff_and_nonuniform_grid():
    dx = np.arange(16) - 8.0
    vh = VanHoveMatrix(dx, np.array([0.0, 1.0, 3.0]), np.ones((3, 16)))
    with pytest.raises(InvalidArgument):
        dsf(vh)
    s = dsf(vh, k_cut=1.0, resample=True)
    assert np.all(s.values[:, np.abs(s.k) > 1.0] == 0)
    assert s.values.shape == (5 * 2 - 1 + 2, 16) or s.values.shape[0] == len(s.omega)


def test_merge_duplicates_inverse_variance():
    dx = np.arange(4) - 2.0
    vh = VanHoveMatrix(dx, np.array([1.0, 1.0, 2.0]),
                       np.array([[1.0] * 4, [3.0] * 4, [5.0] * 4]),
                       np.array([[1.0] * 4, [2.0] * 4, [1.0] * 4]))
    out = merge_duplicate_delays(vh)
    assert list(out.dt) == [1.0, 2.0]
    assert out.values[0, 0] == pytest.approx((1 * 1 + 3 * 0.25) / 1.25)
    assert out.sem[0, 0] == pytest.approx(1.25**-0.5)
    c = crop(out, 1.0)
    assert list(c.dx) == [-1.0, 0.0, 1.0]
