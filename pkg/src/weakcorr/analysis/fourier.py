"""Symmetric discrete Fourier pair and k-space geometry.

Forward transform uses exp(-i k x) with 1/sqrt(N) normalisation, the
inverse exp(+i k x) with the same factor, so the pair is unitary and
Parseval holds without extra constants. Wavenumbers are angular (rad/m);
multiply by 1/(2 pi) for the optics-style axes used in plots.
"""

from __future__ import annotations

import numpy as np


def ft(f, axes=None):
    """Unitary forward transform over ``axes`` (all axes by default)."""
    return np.fft.fftn(f, axes=axes, norm="ortho")


def ift(f, axes=None):
    """Unitary inverse transform over ``axes`` (all axes by default)."""
    return np.fft.ifftn(f, axes=axes, norm="ortho")


def wavenumbers(n: int, pitch: float) -> np.ndarray:
    """Angular wavenumbers in FFT order for ``n`` samples spaced ``pitch``."""
    return 2 * np.pi * np.fft.fftfreq(n, d=pitch)


def k_grid(shape, pitch: float):
    """(ky, kx) broadcastable grids for an image of ``shape`` = (ny, nx)."""
    ny, nx = shape
    ky = wavenumbers(ny, pitch)[:, None]
    kx = wavenumbers(nx, pitch)[None, :]
    return ky, kx


def na_mask(shape, pitch: float, k_na: float, occulted=None) -> np.ndarray:
    """Boolean disk |k| <= k_na, optionally intersected with an occulting mask.

    ``occulted`` is a boolean array in FFT order marking k-points blocked by
    the apparatus; it is symmetrised under k -> -k so the mask stays Hermitian.
    """
    ky, kx = k_grid(shape, pitch)
    mask = kx**2 + ky**2 <= k_na**2 * (1 + 1e-12)
    if occulted is not None:
        occulted = np.asarray(occulted, dtype=bool)
        if occulted.shape != tuple(shape):
            raise ValueError("occulting mask shape does not match the image")
        occulted = occulted | reflect_k(occulted)
        mask &= ~occulted
    return mask


def reflect_k(a: np.ndarray) -> np.ndarray:
    """Return a[-k] for an array in FFT order (all axes)."""
    out = a
    for ax in range(a.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def lowpass(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Project a real image onto the k-points selected by ``mask``."""
    return np.real(np.fft.ifft2(np.fft.fft2(image) * mask))
