"""End-to-end analysis of simulated or recorded ensembles.

Stages: fluctuation extraction, windowing, cross spectra, optional small-k
artifact removal, y-averaged CCF, Van Hove assembly and structure factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from weakcorr.analysis.correlate import (
    CCF,
    VanHoveMatrix,
    mirror_index,
    assemble_van_hove,
    dsf,
    to_1d_ccf,
)
from weakcorr.analysis.frames import extract_fluctuations
from weakcorr.analysis.spectra import (
    mismatched_cpsds,
    pca_small_k_removal,
    small_k_region,
    transform_maps,
)
from weakcorr.analysis.window import WindowGeometry, squircle_tukey, window_energy
from weakcorr.model import InvalidArgument

log = logging.getLogger(__name__)


@dataclass
class AnalysisSettings:
    """Analysis knobs in SI units."""

    window_margin: float = 1.1
    window_half_height: float = 8e-6
    taper: float = 0.2
    pca_components: int = 7
    small_k_radius: float | None = None  # rad/m; None disables the small-k stage
    small_k_retained: int | None = None
    small_k_target: float = 0.87
    small_k_basis: int = 512
    max_dx: float = 15e-6  # half-range of dx used by fits


def analysis_window(shape, pitch, cloud_half_length, settings: AnalysisSettings):
    geom = WindowGeometry.for_cloud(cloud_half_length / pitch, settings.window_half_height / pitch,
                                    settings.window_margin, settings.taper)
    return squircle_tukey(shape, geom)


def fluctuation_maps(outcomes, n_components):
    """Per-pulse fluctuation maps for an (M, P, ny, nx) ensemble."""
    outcomes = np.asarray(outcomes, float)
    return np.stack([extract_fluctuations(outcomes[:, p], n_components)
                     for p in range(outcomes.shape[1])], axis=1)


@dataclass
class PairCCF:
    ccf: CCF  # ensemble mean, centred axis
    sem: np.ndarray
    per_shot: np.ndarray  # (M, nx), centred axis
    small_k: dict = field(default_factory=dict)


def pair_ccf(d1, d2, window, pitch, dt, settings: AnalysisSettings | None = None) -> PairCCF:
    """CCF between two measurements of the same shots, with per-shot spread."""
    settings = settings or AnalysisSettings()
    e = window_energy(window)
    f1 = transform_maps(d1 * window)
    f2 = transform_maps(d2 * window)
    norm = d1.shape[-1] * d1.shape[-2] / e
    cps = f1 * np.conj(f2) * norm
    info = {}
    if settings.small_k_radius:
        region = small_k_region(d1.shape[-2:], pitch, radius=settings.small_k_radius)
        m = d1.shape[0]
        size = min(settings.small_k_basis, m * m - m)
        mism = mismatched_cpsds(f1, f2, size, norm)
        cps, basis = pca_small_k_removal(cps, mism, region, settings.small_k_retained,
                                         settings.small_k_target, size)
        info = {"retained": basis.retained, "cumulative": float(basis.cumulative[basis.retained - 1])
                if basis.retained else 0.0}
    per = to_1d_ccf(cps, pitch, dt)
    m = per.values.shape[0]
    mean = CCF(per.dx, per.values.mean(axis=0), dt)
    sem = per.values.std(axis=0, ddof=1) / np.sqrt(m)
    return PairCCF(mean, sem, per.values, info)


def _symmetric_sem(sem):
    # s.e.m. of (v + v_mirror)/2, assuming the two halves are fully correlated
    return 0.5 * (sem + sem[..., mirror_index(sem.shape[-1])])


@dataclass
class AnalysisProducts:
    van_hove: VanHoveMatrix
    structure: object
    pairs: list
    window: np.ndarray


def analyze_pairs(pairs, pitch, k_cut, settings: AnalysisSettings | None = None,
                  window=None) -> AnalysisProducts:
    """Van Hove matrix and DSF from a list of (dt, d1, d2) fluctuation stacks."""
    if not pairs:
        raise InvalidArgument("no measurement pairs to analyse")
    settings = settings or AnalysisSettings()
    results = []
    for dt, d1, d2 in pairs:
        results.append(pair_ccf(d1, d2, window, pitch, dt, settings))
    order = np.argsort([r.ccf.dt for r in results])
    results = [results[i] for i in order]
    vh = assemble_van_hove([r.ccf for r in results], symmetrize=True)
    sem = np.stack([_symmetric_sem(r.sem) for r in results])
    vh = merge_duplicate_delays(VanHoveMatrix(vh.dx, vh.dt, vh.values, sem))
    structure = dsf(vh, k_cut=k_cut, resample=True)
    return AnalysisProducts(vh, structure, results, window)


def crop(vh: VanHoveMatrix, max_dx) -> VanHoveMatrix:
    keep = np.abs(vh.dx) <= max_dx + 1e-12
    sem = None if vh.sem is None else vh.sem[:, keep]
    return VanHoveMatrix(vh.dx[keep], vh.dt, vh.values[:, keep], sem)


def merge_duplicate_delays(vh: VanHoveMatrix, rtol=1e-9) -> VanHoveMatrix:
    """Average rows sharing a delay (inverse-variance weighted when s.e.m. is present)."""
    groups = []
    for i, t in enumerate(vh.dt):
        for g in groups:
            if np.isclose(vh.dt[g[0]], t, rtol=rtol, atol=0):
                g.append(i)
                break
        else:
            groups.append([i])
    vals, sems, dts = [], [], []
    for g in groups:
        v = vh.values[g]
        if vh.sem is not None:
            w = vh.sem[g] ** -2.0
            vals.append(np.sum(w * v, axis=0) / w.sum(axis=0))
            sems.append(w.sum(axis=0) ** -0.5)
        else:
            vals.append(v.mean(axis=0))
        dts.append(vh.dt[g[0]])
    return VanHoveMatrix(vh.dx, np.array(dts), np.stack(vals),
                         np.stack(sems) if vh.sem is not None else None)
