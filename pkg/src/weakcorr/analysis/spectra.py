"""Power and cross-power spectral densities and their clean-up stages.

Spectra are normalised by N / sum(w^2) so that white noise of variance s^2
has a flat PSD of mean s^2 regardless of the window. The small-k PCA stage
builds its basis from cross spectra of *mismatched* shots, which share
static artifacts but no physical correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

from weakcorr.analysis.fourier import ft, k_grid, reflect_k
from weakcorr.model import InvalidArgument


@dataclass
class SpectralProduct:
    """PSD or CPSD values with the masks that produced them."""

    values: np.ndarray
    na_mask: np.ndarray | None = None
    small_k_mask: np.ndarray | None = None
    shot_noise_offset: float = 0.0
    kind: str = "cpsd"
    history: list = field(default_factory=list)


def _norm(shape, window_energy):
    n = shape[-1] * shape[-2]
    return 1.0 if window_energy is None else n / window_energy


def transform_maps(maps):
    """Unitary 2D transform of each map in a (..., ny, nx) stack."""
    return ft(maps, axes=(-2, -1))


def cpsd(map1, map2, window_energy=None, average=False) -> SpectralProduct:
    """Cross spectrum ft(map1) * conj(ft(map2)), per map or ensemble-averaged."""
    map1 = np.asarray(map1)
    map2 = np.asarray(map2)
    if map1.shape != map2.shape:
        raise InvalidArgument("maps differ in shape")
    a = transform_maps(map1)
    b = a if map2 is map1 else transform_maps(map2)
    vals = a * np.conj(b) * _norm(map1.shape, window_energy)
    if average and vals.ndim == 3:
        vals = vals.mean(axis=0)
    return SpectralProduct(vals, kind="cpsd")


def psd(maps, window_energy=None, average=False) -> SpectralProduct:
    """|ft(map)|^2, computed as the real part of cpsd(map, map)."""
    out = cpsd(maps, maps, window_energy, average)
    out.values = out.values.real
    out.kind = "psd"
    return out


def remove_shot_noise_offset(spec: SpectralProduct, na_mask) -> SpectralProduct:
    """Subtract the mean PSD outside the aperture and zero everything outside it.

    Cross spectra carry no shot-noise offset, so they pass through untouched.
    """
    if spec.kind == "cpsd":
        return spec
    na_mask = np.asarray(na_mask, bool)
    outside = ~na_mask
    if not outside.any():
        raise InvalidArgument("aperture mask leaves no k-points to estimate the offset")
    vals = np.asarray(spec.values)
    offset = float(np.mean(vals[..., outside]))
    out = np.where(na_mask, vals - offset, 0.0)
    return SpectralProduct(out, na_mask, spec.small_k_mask, offset, spec.kind,
                           spec.history + ["shot_noise_offset"])


def small_k_region(shape, pitch, radius=None, polygon=None):
    """Boolean k-space region in FFT order, symmetric under k -> -k.

    ``radius`` is in rad/m; ``polygon`` is a sequence of (kx, ky) vertices.
    """
    ky, kx = k_grid(shape, pitch)
    region = np.zeros(shape, bool)
    if radius is not None and radius > 0:
        region |= kx**2 + ky**2 <= radius**2
    if polygon is not None and len(polygon):
        pts = np.column_stack([np.broadcast_to(kx, shape).ravel(), np.broadcast_to(ky, shape).ravel()])
        region |= Path(np.asarray(polygon, float)).contains_points(pts).reshape(shape)
    return region | reflect_k(region)


def small_k_mask(spec: SpectralProduct, region) -> SpectralProduct:
    """Zero the spectrum inside ``region``; the region is kept for provenance."""
    region = np.asarray(region, bool)
    vals = np.where(region, 0.0, spec.values)
    prev = spec.small_k_mask
    kept = region if prev is None else (prev | region)
    return SpectralProduct(vals, spec.na_mask, kept, spec.shot_noise_offset, spec.kind,
                           spec.history + ["small_k_mask"])


def mismatched_pairs(m, basis_size):
    """Deterministic (j, j') pairs with j != j', cycling through shifts 1..m-1."""
    available = m * m - m
    if basis_size > available:
        raise InvalidArgument(f"basis size {basis_size} exceeds the {available} mismatched pairings")
    pairs = []
    shift = 1
    while len(pairs) < basis_size:
        for j in range(m):
            pairs.append((j, (j + shift) % m))
            if len(pairs) == basis_size:
                break
        shift += 1
    return pairs


def mismatched_cpsds(ft1, ft2, basis_size, norm=1.0):
    """Cross spectra of M1 from shot j with M2 from shot j' != j."""
    pairs = mismatched_pairs(ft1.shape[0], basis_size)
    j1 = np.array([p[0] for p in pairs])
    j2 = np.array([p[1] for p in pairs])
    return ft1[j1] * np.conj(ft2[j2]) * norm


@dataclass
class SmallKPCA:
    components: np.ndarray
    explained: np.ndarray
    retained: int
    region: np.ndarray

    @property
    def cumulative(self):
        tot = self.explained.sum()
        return np.cumsum(self.explained) / tot if tot > 0 else np.zeros_like(self.explained)


def small_k_basis(mismatched, region, retained=None, target=0.87) -> SmallKPCA:
    """PCA basis of mismatched cross spectra restricted to ``region``.

    The basis is not mean-centred: static artifacts live mostly in the mean.
    With ``retained`` None the count is the first at which the cumulative
    explained variance reaches ``target``.
    """
    region = np.asarray(region, bool)
    data = np.asarray(mismatched)[:, region]
    _, s, vh = np.linalg.svd(data, full_matrices=False)
    explained = s**2
    if retained is None:
        cum = np.cumsum(explained) / explained.sum()
        retained = int(np.searchsorted(cum, target) + 1)
    retained = min(retained, vh.shape[0])
    return SmallKPCA(vh[:retained], explained, retained, region)


def pca_small_k_removal(cpsds, mismatched, region, retained=None, target=0.87, basis_size=512):
    """Project artifact components out of true single-shot cross spectra.

    Only k-points inside ``region`` change; everything else is returned
    bit-for-bit.

    Returns
    -------
    cleaned : ndarray
    basis : SmallKPCA
    """
    mismatched = np.asarray(mismatched)
    if mismatched.shape[0] > basis_size:
        raise InvalidArgument("more mismatched spectra than the configured basis size")
    cpsds = np.asarray(cpsds)
    basis = small_k_basis(mismatched, region, retained, target)
    out = cpsds.copy()
    if basis.retained == 0 or not basis.region.any():
        return out, basis
    v = basis.components  # (K, P) with orthonormal rows
    sub = cpsds[..., basis.region]
    coef = sub @ np.conj(v).T
    out[..., basis.region] = sub - coef @ v
    return out, basis
