"""Real-space stages: PCI signal, PCA probe reconstruction, fluctuation maps."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from weakcorr.model import InvalidArgument

log = logging.getLogger(__name__)


class BadPixelsError(ValueError):
    """Too many pixels with a non-positive probe inside the analysis window."""


def pci_signal(plus, probe, dark_mean=0.0, window=None, max_bad_fraction=1e-3):
    """PCI signal 1 - (I_plus - I_D) / (I_0 - I_D).

    Pixels whose dark-subtracted probe is non-positive are set to NaN. If
    they exceed ``max_bad_fraction`` of the window support, raise.

    Returns
    -------
    g_pci : ndarray
    bad : ndarray of bool
    """
    plus = np.asarray(plus, dtype=float)
    probe = np.asarray(probe, dtype=float)
    if plus.shape != probe.shape:
        raise InvalidArgument("with-atoms and probe frames differ in shape")
    num = plus - dark_mean
    den = probe - dark_mean
    bad = den <= 0
    support = np.ones(plus.shape[-2:], bool) if window is None else np.asarray(window) > 0
    n_bad = np.sum(bad & support)
    n_tot = np.sum(np.broadcast_to(support, bad.shape))
    if n_bad > max_bad_fraction * n_tot:
        raise BadPixelsError(f"{n_bad} of {n_tot} window pixels have a non-positive probe")
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 1.0 - num / np.where(bad, np.nan, den)
    return g, bad


def density_from_pci(g_pci, detuning_ratio, area, sigma0):
    """Column density in atoms per pixel, 2 (delta/Gamma) (A / sigma0) g_PCI."""
    return 2.0 * detuning_ratio * (area / sigma0) * np.asarray(g_pci)


def _sign_fix(components):
    # largest-|loading| entry of each component made positive
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1
    return components * signs[:, None]


def pca_basis(stack, n_components=None, center=True, rtol=1e-10):
    """Orthonormal PCA basis of an image stack (M, ny, nx).

    Returns (mean, components, explained_variance) with ``components`` of
    shape (K, ny*nx); K is the numerical rank if ``n_components`` is None.
    """
    stack = np.asarray(stack)
    m = stack.shape[0]
    flat = stack.reshape(m, -1)
    mean = flat.mean(axis=0) if center else np.zeros(flat.shape[1], flat.dtype)
    _, s, vt = np.linalg.svd(flat - mean, full_matrices=False)
    rank = int(np.sum(s > rtol * max(s[0] if s.size else 0.0, 1e-300)))
    k = rank if n_components is None else min(n_components, rank)
    comps = vt[:k]
    if np.isrealobj(comps):
        comps = _sign_fix(comps)
    return mean, comps, s[:k] ** 2 / max(m - 1, 1)


def pca_probe_reconstruct(probes, atom_frames, background, n_components=None):
    """Reconstruct one optimised probe per with-atoms frame.

    The probe ensemble's mean and principal components form the basis; the
    coefficients for each with-atoms frame are a least-squares fit over the
    ``background`` pixels (where no atoms are present).

    Parameters
    ----------
    probes : (M, ny, nx) array
        Dark-subtracted probe-only frames.
    atom_frames : (M, ny, nx) array
        Dark-subtracted with-atoms frames to be matched.
    background : (ny, nx) bool array
        Pixels used for the fit.
    n_components : int, optional
        Components kept besides the mean; all non-degenerate ones by default.
        Asking for more than the ensemble's numerical rank falls back to the
        mean with a warning.
    """
    probes = np.asarray(probes, dtype=float)
    atom_frames = np.asarray(atom_frames, dtype=float)
    m = probes.shape[0]
    mean, comps, _ = pca_basis(probes, None)
    want = comps.shape[0] if n_components is None else n_components
    if comps.shape[0] < want:
        warnings.warn(f"probe ensemble has rank {comps.shape[0]} < {want}; using the ensemble mean",
                      stacklevel=2)
        return np.broadcast_to(mean.reshape(probes.shape[1:]), atom_frames.shape).copy()
    comps = comps[:want]
    basis = np.vstack([mean[None, :], comps])  # (K+1, P)
    sel = np.asarray(background, bool).ravel()
    design = basis[:, sel].T
    targets = atom_frames.reshape(atom_frames.shape[0], -1)[:, sel].T
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    recon = coef.T @ basis
    return recon.reshape(atom_frames.shape)


def extract_fluctuations(densities, n_components=7):
    """Fluctuation maps n_j minus the PCA-reconstructed mean of each shot.

    The reconstruction uses the ensemble mean plus the ``n_components`` most
    significant principal components of the ensemble, which absorbs
    shot-to-shot drifts in atom number and position.
    """
    densities = np.asarray(densities, dtype=float)
    m = densities.shape[0]
    if not 0 <= n_components < m:
        raise InvalidArgument("n_components must be smaller than the ensemble size")
    flat = densities.reshape(m, -1)
    mean = flat.mean(axis=0)
    centered = flat - mean
    if n_components:
        _, comps, _ = pca_basis(densities, n_components)
        centered = centered - (centered @ comps.T) @ comps
    return centered.reshape(densities.shape)


def frames_to_density(plus, probe, dark, background, detuning_ratio, area, sigma0,
                      window=None, n_probe_components=None):
    """Dark subtraction, PCA probes and PCI inversion for one pulse's ensemble."""
    dark_mean = np.mean(dark, axis=0)
    p = plus - dark_mean
    q = probe - dark_mean
    recon = pca_probe_reconstruct(q, p, background, n_probe_components)
    g, bad = pci_signal(p, recon, 0.0, window)
    g = np.where(bad, 0.0, g)
    return density_from_pci(g, detuning_ratio, area, sigma0)
