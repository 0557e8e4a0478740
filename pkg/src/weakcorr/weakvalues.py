"""Post-selected weak values from pairs of weak measurements.

Second-measurement fluctuations are averaged over the shots and pixels
whose first-measurement fluctuation exceeds a threshold T, expressed in
units of that pixel's ensemble noise width. Correlations are y-averaged
(summed over vertical offsets) exactly like the CCF, so in expectation

    qwv(dx) = (2 phi_1 / sqrt(pi)) * attenuation * amplification(T) * ccf(dx).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv, erfcx

from weakcorr.analysis.correlate import column_ccf
from weakcorr.model import InvalidArgument

SIGN_WEIGHTED = "sign-weighted"
POSITIVE_ONLY = "positive-only"


class EmptySelection(ValueError):
    def __init__(self, retained):
        super().__init__(f"post-selection retained {retained} pixels")
        self.retained = retained


@dataclass(frozen=True)
class PostSelectionSpec:
    threshold: float = 0.0
    mode: str = SIGN_WEIGHTED

    def __post_init__(self):
        if self.threshold < 0:
            raise InvalidArgument("threshold must be non-negative")
        if self.mode not in (SIGN_WEIGHTED, POSITIVE_ONLY):
            raise InvalidArgument(f"unknown post-selection mode {self.mode!r}")

    @classmethod
    def from_discarded(cls, f_d, mode=SIGN_WEIGHTED):
        return cls(threshold_from_fd(f_d, mode), mode)

    @property
    def retained(self):
        return retained_fraction(self.threshold)

    @property
    def discarded_fraction(self):
        r = self.retained
        return 1 - 2 * r if self.mode == SIGN_WEIGHTED else 1 - r


def retained_fraction(threshold):
    """Fraction of a Gaussian above T standard deviations, erfc(T/sqrt2)/2."""
    threshold = np.asarray(threshold, float)
    if np.any(threshold < 0):
        raise InvalidArgument("threshold must be non-negative")
    out = 0.5 * erfc(threshold / math.sqrt(2))
    return out if out.ndim else float(out)


def threshold_from_fd(f_d, mode=SIGN_WEIGHTED):
    """Threshold giving discarded fraction ``f_d`` (inverse of the above)."""
    f_d = np.asarray(f_d, float)
    if np.any(f_d >= 1) or np.any(f_d < 0):
        raise InvalidArgument("discarded fraction must lie in [0, 1)")
    r = (1 - f_d) / 2 if mode == SIGN_WEIGHTED else 1 - f_d
    if np.any(r > 0.5):
        raise InvalidArgument("positive-only selection discards at least half the data")
    out = math.sqrt(2) * erfcinv(2 * r)
    return out if out.ndim else float(out)


def amplification(threshold):
    """Weak-value amplification exp(-T^2/2) / erfc(T/sqrt2) relative to T = 0."""
    threshold = np.asarray(threshold, float)
    if np.any(threshold < 0):
        raise InvalidArgument("threshold must be non-negative")
    out = 1.0 / erfcx(threshold / math.sqrt(2))  # stable for large T
    return out if out.ndim else float(out)


def attenuation(phi, theta):
    """Technical-noise attenuation (1 + phi^2/theta^2)^(-1/2)."""
    if not phi > 0 or not theta > 0:
        raise InvalidArgument("strengths must be positive")
    if math.isinf(theta):
        return 1.0
    return 1.0 / math.sqrt(1.0 + (phi / theta) ** 2)


def expected_scale(phi1, spec: PostSelectionSpec, theta=math.inf):
    """Expected qwv / ccf ratio for first-measurement strength ``phi1``."""
    return 2 * phi1 / math.sqrt(math.pi) * attenuation(phi1, theta) * amplification(spec.threshold)


@dataclass
class WeakValueResult:
    """Conditional-mean curves in FFT displacement order, plus bookkeeping.

    ``per_shot`` holds each shot's contribution scaled so that its mean over
    shots is ``curve``; it feeds standard errors and SNR estimates.
    """

    dx: np.ndarray
    curve: np.ndarray
    plus: np.ndarray
    minus: np.ndarray | None
    per_shot: np.ndarray
    spec: PostSelectionSpec
    retained_fraction: float
    amplification: float
    amplitude: float | None = None
    amplitude_sem: float | None = None
    snr: float | None = None
    attenuation: float | None = None

    @property
    def sem(self):
        m = self.per_shot.shape[0]
        return self.per_shot.std(axis=0, ddof=1) / math.sqrt(m)

    def centered(self):
        """(dx, curve) with dx ascending and zero in the middle."""
        return np.fft.fftshift(self.dx), np.fft.fftshift(self.curve)


def noise_width(d1):
    """Per-pixel ensemble standard deviation of first-measurement maps."""
    return np.std(d1, axis=0)


def qwv_estimate(d1, d2, window, spec: PostSelectionSpec = PostSelectionSpec(), pitch=1.0,
                 width=None) -> WeakValueResult:
    """Post-selected second-measurement mean versus displacement.

    Parameters
    ----------
    d1, d2 : (M, ny, nx) arrays
        Fluctuation maps of the first and second measurement, same shots.
    window : (ny, nx) array
        Real-space window applied to both maps.
    spec : PostSelectionSpec
    pitch : float
        Pixel pitch for the returned dx axis.
    width : (ny, nx) array, optional
        Noise width used for the threshold; estimated from ``d1`` if omitted.
    """
    d1 = np.asarray(d1, float)
    d2 = np.asarray(d2, float)
    if d1.shape != d2.shape:
        raise InvalidArgument("first and second maps are not aligned")
    if width is None:
        width = noise_width(d1)
    w = np.asarray(window, float)
    cut = spec.threshold * width
    b = d2 * w
    support = w > 0

    sel_p = (d1 > cut) & support
    norm_p = np.sum(w**2 * sel_p)
    if norm_p == 0:
        raise EmptySelection(int(sel_p.sum()))
    shot_p = column_ccf(w * sel_p, b, norm_p) * d1.shape[0]
    if spec.mode == SIGN_WEIGHTED:
        sel_m = (d1 < -cut) & support
        norm_m = np.sum(w**2 * sel_m)
        if norm_m == 0:
            raise EmptySelection(int(sel_m.sum()))
        shot_m = column_ccf(w * sel_m, b, norm_m) * d1.shape[0]
        per_shot = 0.5 * (shot_p - shot_m)
        minus = shot_m.mean(axis=0)
        kept = (sel_p.sum() + sel_m.sum()) / (support.sum() * d1.shape[0])
    else:
        per_shot = shot_p
        minus = None
        kept = sel_p.sum() / (support.sum() * d1.shape[0])
    nx = d1.shape[-1]
    dx = np.fft.fftfreq(nx, 1.0 / nx) * pitch
    return WeakValueResult(dx, per_shot.mean(axis=0), shot_p.mean(axis=0), minus, per_shot, spec,
                           float(kept), amplification(spec.threshold))


def ccf_estimate(d1, d2, window, pitch=1.0):
    """Plain cross-correlation with the same normalisation as :func:`qwv_estimate`.

    Returns (dx, curve, per_shot) in FFT displacement order.
    """
    w = np.asarray(window, float)
    norm = np.sum(w**2) * d1.shape[0]
    per_shot = column_ccf(d1 * w, d2 * w, norm) * d1.shape[0]
    nx = d1.shape[-1]
    dx = np.fft.fftfreq(nx, 1.0 / nx) * pitch
    return dx, per_shot.mean(axis=0), per_shot


def template_amplitude(curve, template, per_shot=None, region=None):
    """Least-squares amplitude of ``curve`` along a fixed ``template`` shape.

    Returns (amplitude, standard error). The error comes from shot-to-shot
    scatter when ``per_shot`` is given, from the residual otherwise.
    """
    t = np.asarray(template, float)
    sel = np.ones(t.shape, bool) if region is None else np.asarray(region, bool)
    tt = float(np.dot(t[sel], t[sel]))
    if tt == 0:
        raise InvalidArgument("template is zero on the fit region")
    amp = float(np.dot(curve[sel], t[sel]) / tt)
    if per_shot is not None:
        amps = per_shot[:, sel] @ t[sel] / tt
        sem = float(np.std(amps, ddof=1) / math.sqrt(len(amps)))
    else:
        resid = curve[sel] - amp * t[sel]
        sem = float(np.sqrt(np.sum(resid**2) / max(sel.sum() - 1, 1) / tt))
    return amp, sem


def snr(curve, per_shot, template, region=None):
    """Fitted amplitude over the rms per-point standard error of the curve."""
    amp, _ = template_amplitude(curve, template, None, region)
    sel = slice(None) if region is None else np.asarray(region, bool)
    m = per_shot.shape[0]
    floor = np.sqrt(np.mean((per_shot.std(axis=0, ddof=1)[sel] / math.sqrt(m)) ** 2))
    return float(abs(amp) / floor) if floor > 0 else 0.0


def snr_vs_fd(d1, d2, window, fd_grid, template, region=None, pitch=1.0):
    """Weak-value SNR at each discarded fraction, plus the plain-CCF baseline.

    Returns (fd array, snr array, ccf_snr float).
    """
    fd_grid = np.asarray(fd_grid, float)
    if np.any(fd_grid < 0) or np.any(fd_grid >= 1):
        raise InvalidArgument("discarded fractions must lie in [0, 1)")
    width = noise_width(d1)
    out = []
    for f in fd_grid:
        res = qwv_estimate(d1, d2, window, PostSelectionSpec.from_discarded(f), pitch, width)
        out.append(snr(res.curve, res.per_shot, template, region))
    _, curve, per_shot = ccf_estimate(d1, d2, window, pitch)
    return fd_grid, np.array(out), snr(curve, per_shot, template, region)


def qwv_pairs(maps, pairs, window, phis, spec: PostSelectionSpec = PostSelectionSpec(),
              pitch=1.0, theta=math.inf):
    """Weak values for several measurement pairs of one multi-pulse series.

    Each curve is also returned divided by its expected scale
    2 phi_i / sqrt(pi) * attenuation * amplification, which puts pairs with
    different first-measurement strengths on the common CCF scale.
    """
    results = {}
    for i, j in pairs:
        res = qwv_estimate(maps[i], maps[j], window, spec, pitch)
        scale = expected_scale(phis[i], spec, theta)
        results[(i, j)] = (res, res.curve / scale)
    return results


def per_shot_amplitudes(per_shot, template, region=None):
    """Template projection of every shot's contribution; their mean is the amplitude."""
    t = np.asarray(template, float)
    sel = np.ones(t.shape, bool) if region is None else np.asarray(region, bool)
    return per_shot[:, sel] @ t[sel] / float(np.dot(t[sel], t[sel]))


@dataclass
class StrengthFit:
    """Weighted straight line amp = slope * (g - offset)."""

    slope: float
    slope_se: float
    offset: float
    offset_se: float
    intercept: float
    intercept_se: float
    chi2: float


def strength_fit(g, amp, se) -> StrengthFit:
    """Fit amp = alpha + beta g with weights 1/se^2; offset b = -alpha / beta."""
    g = np.asarray(g, float)
    amp = np.asarray(amp, float)
    se = np.asarray(se, float)
    if g.size < 2:
        raise InvalidArgument("need at least two strengths")
    a = np.column_stack([np.ones_like(g), g]) / se[:, None]
    cov = np.linalg.inv(a.T @ a)
    alpha, beta = cov @ a.T @ (amp / se)
    resid = (amp - alpha - beta * g) / se
    b = -alpha / beta if beta != 0 else math.nan
    # delta method for b = -alpha / beta
    grad = np.array([-1.0 / beta, alpha / beta**2]) if beta != 0 else np.array([math.nan, math.nan])
    b_se = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    return StrengthFit(float(beta), float(math.sqrt(cov[1, 1])), float(b), b_se, float(alpha),
                       float(math.sqrt(cov[0, 0])), float(resid @ resid))


def slope_ratio(g, num, den):
    """Ratio of zero-intercept slopes versus g of two amplitude sets, with its error.

    ``num`` and ``den`` are lists (one entry per g) of per-shot amplitude
    arrays drawn from the same shots, so their correlation is kept. The
    slope weights come from ``den`` and are shared by both estimators.
    """
    g = np.asarray(g, float)
    se_d = np.array([np.std(d, ddof=1) / math.sqrt(len(d)) for d in den])
    w = se_d**-2.0
    c = g * w / np.sum(w * g * g)
    s_n = sum(ci * np.mean(n) for ci, n in zip(c, num))
    s_d = sum(ci * np.mean(d) for ci, d in zip(c, den))
    v_n = sum(ci**2 * np.var(n, ddof=1) / len(n) for ci, n in zip(c, num))
    v_d = sum(ci**2 * np.var(d, ddof=1) / len(d) for ci, d in zip(c, den))
    cv = sum(ci**2 * np.cov(n, d)[0, 1] / len(n) for ci, n, d in zip(c, num, den))
    r = s_n / s_d
    var = r * r * (v_n / s_n**2 + v_d / s_d**2 - 2 * cv / (s_n * s_d))
    return float(r), float(math.sqrt(max(var, 0.0)))
