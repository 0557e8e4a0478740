"""Squircle-shaped Tukey window for real-space fluctuation maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WindowGeometry:
    """Superellipse |x/a|^p + |y/b|^p <= 1 with a cosine taper.

    Half-widths are in pixels. ``taper`` is the Tukey fraction of the
    normalised radius over which the weight rolls off to zero.
    """

    half_width_x: float
    half_width_y: float
    center_x: float | None = None
    center_y: float | None = None
    taper: float = 0.2
    exponent: float = 4.0

    @classmethod
    def for_cloud(cls, cloud_half_length_px, half_height_px, margin=1.1, taper=0.2):
        """Window whose horizontal extent is ``margin`` times the cloud's."""
        return cls(margin * cloud_half_length_px, half_height_px, taper=taper)


def squircle_radius(shape, geom: WindowGeometry):
    ny, nx = shape
    cx = nx // 2 if geom.center_x is None else geom.center_x
    cy = ny // 2 if geom.center_y is None else geom.center_y
    x = (np.arange(nx) - cx) / geom.half_width_x
    y = (np.arange(ny) - cy) / geom.half_width_y
    p = geom.exponent
    return (np.abs(x)[None, :] ** p + np.abs(y)[:, None] ** p) ** (1.0 / p)


def tukey_profile(r, taper):
    """Tukey weight of normalised radius r: flat to 1 - taper, cosine to 0 at 1."""
    r = np.asarray(r, dtype=float)
    out = np.where(r < 1.0, 1.0, 0.0)
    if taper > 0:
        edge = (r > 1.0 - taper) & (r < 1.0)
        out = np.where(edge, 0.5 * (1.0 + np.cos(np.pi * (r - 1.0 + taper) / taper)), out)
    return out


def squircle_tukey(shape, geom: WindowGeometry) -> np.ndarray:
    """Window weights in [0, 1]; exactly 1 at the centre and 0 outside the support."""
    ny, nx = shape
    if geom.half_width_x > nx / 2 or geom.half_width_y > ny / 2:
        raise ValueError("window support does not fit inside the frame")
    return tukey_profile(squircle_radius(shape, geom), geom.taper)


def apply_window(maps, window):
    """Pixelwise product of each map with ``window``."""
    return np.asarray(maps) * window


def window_energy(window) -> float:
    return float(np.sum(np.asarray(window) ** 2))
