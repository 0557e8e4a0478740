"""1D correlation functions, the Van Hove matrix and the structure factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from weakcorr.analysis.fourier import ift
from weakcorr.model import InvalidArgument


@dataclass
class CCF:
    """Correlation versus displacement; ``dx`` is centred and ascending."""

    dx: np.ndarray
    values: np.ndarray
    dt: float | None = None

    def symmetrized(self) -> "CCF":
        return CCF(self.dx, 0.5 * (self.values + self.values[..., mirror_index(len(self.dx))]), self.dt)


def mirror_index(n):
    # index of -dx for a centred axis produced by fftshift
    i = np.arange(n)
    return n - 1 - i if n % 2 else (n - i) % n


def to_1d_ccf(cpsd_values, pitch=1.0, dt=None) -> CCF:
    """y-averaged correlation from a (window-normalised) 2D cross spectrum.

    Takes the k_y = 0 row and inverse-transforms along k_x, carrying the
    sqrt(N_y) factor of the y-sum. With the N / sum(w^2) spectral
    normalisation the result is

        sum_dy sum_r w1 dn1(r) w2 dn2(r + (dx, dy)) / sum(w^2),

    i.e. displacement dx points from the first map to the second.
    """
    c = np.asarray(cpsd_values)
    ny, nx = c.shape[-2:]
    row = np.conj(c[..., 0, :])
    vals = np.sqrt(ny) * ift(row, axes=(-1,)) / np.sqrt(nx * ny)
    vals = np.fft.fftshift(np.real_if_close(vals, tol=1e6), axes=-1)
    dx = (np.arange(nx) - nx // 2) * pitch
    return CCF(dx, np.real(vals), dt)


def column_ccf(map1, map2, normalizer):
    """Same quantity as :func:`to_1d_ccf` computed from column sums.

    Returns per-map curves in FFT displacement order.
    """
    a = np.sum(map1, axis=-2)
    b = np.sum(map2, axis=-2)
    fa = np.fft.fft(a, axis=-1)
    fb = np.fft.fft(b, axis=-1)
    return np.real(np.fft.ifft(np.conj(fa) * fb, axis=-1)) / normalizer


@dataclass
class VanHoveMatrix:
    """G[dt, dx] on axes ``dt`` (s) and ``dx`` (m)."""

    dx: np.ndarray
    dt: np.ndarray
    values: np.ndarray
    sem: np.ndarray | None = None


def assemble_van_hove(ccfs, symmetrize=True) -> VanHoveMatrix:
    """Stack CCFs (sorted by dt) into a Van Hove matrix."""
    ccfs = sorted(ccfs, key=lambda c: c.dt)
    dx = ccfs[0].dx
    for c in ccfs:
        if c.dt is None:
            raise InvalidArgument("every CCF needs its dt")
        if c.dx.shape != dx.shape or not np.allclose(c.dx, dx):
            raise InvalidArgument("CCFs are on different dx grids")
    if symmetrize:
        ccfs = [c.symmetrized() for c in ccfs]
    vals = np.stack([c.values for c in ccfs])
    return VanHoveMatrix(dx, np.array([c.dt for c in ccfs], float), vals)


@dataclass
class DSFMatrix:
    """S[omega, k] with angular axes; ``k_cut`` bounds the physical support."""

    k: np.ndarray
    omega: np.ndarray
    values: np.ndarray
    k_cut: float | None = None

    @property
    def k_optics(self):
        return self.k / (2 * np.pi)

    def ridge(self):
        """omega >= 0 of maximum weight for every k column."""
        pos = self.omega >= 0
        w = self.omega[pos]
        return w[np.argmax(self.values[pos], axis=0)]


def mirror_in_time(vh: VanHoveMatrix):
    """Extend G to negative dt using G(dx, -dt) = G(-dx, dt)."""
    n = len(vh.dx)
    neg = vh.values[::-1][:, mirror_index(n)]
    dts = vh.dt
    if dts[0] == 0:
        return np.concatenate([-dts[:0:-1], dts]), np.concatenate([neg[:-1], vh.values])
    return np.concatenate([-dts[::-1], dts]), np.concatenate([neg, vh.values])


def dsf(vh: VanHoveMatrix, k_cut=None, resample=False, rtol=1e-6) -> DSFMatrix:
    """2D transform of G over (dx, dt): S(k, w) = sum G exp(-i (k dx - w dt)).

    The dt axis must be uniform once mirrored to negative times; with
    ``resample`` a non-uniform grid is linearly interpolated onto a uniform
    one of the smallest spacing present.
    """
    t, g = mirror_in_time(vh)
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=rtol, atol=0):
        if not resample:
            raise InvalidArgument("dsf needs a uniform dt grid (pass resample=True to interpolate)")
        step = steps.min()
        n = int(round((t[-1] - t[0]) / step)) + 1
        tu = np.linspace(t[0], t[-1], n)
        g = np.stack([np.interp(tu, t, g[:, i]) for i in range(g.shape[1])], axis=1)
        t = tu
    dt = t[1] - t[0]
    nt, nx = g.shape
    dxp = vh.dx[1] - vh.dx[0]
    k = 2 * np.pi * np.fft.fftfreq(nx, dxp)
    w = 2 * np.pi * np.fft.fftfreq(nt, dt)
    # FFTs index from the first sample; the phase factors refer them to the origin
    spec = np.fft.fft(g, axis=1) * np.exp(-1j * k * vh.dx[0])[None, :] / np.sqrt(nx)
    spec = np.fft.ifft(spec, axis=0) * nt * np.exp(1j * w * t[0])[:, None] / np.sqrt(nt)
    vals = np.real(spec)
    if k_cut is not None:
        vals = np.where(np.abs(k)[None, :] <= k_cut, vals, 0.0)
    return DSFMatrix(np.fft.fftshift(k), np.fft.fftshift(w),
                     np.fft.fftshift(vals, axes=(0, 1)), k_cut)
