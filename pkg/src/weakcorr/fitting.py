"""Real-space line-shape model of the CCF and least-squares fits.

The model for one time slice is

    G(dx, dt) = E(dx) s_p [P(dx - c dt) + P(dx + c dt)] / 2 + h_f exp(-gamma_f dt) P(dx)

with P the imaging point-spread function. P comes from a Gaussian spectral
weight exp(-k^2 sigma^2 / 2) truncated at the aperture cut-off k_NA, so the
hard edge produces the negative side-lobes seen around each peak. P(0) = 1.
E(dx) is an optional fixed envelope-overlap weight (1 by default).

The phonon term is evaluated as the spectral integral

    s_p int W(k) cos(k dx) cos(omega(k) dt) dk / int W(k) dk,

with omega^2 = c^2 k^2 + (b k^2)^2. For b = 0 this is exactly the pair of
travelling peaks above; ``dispersion`` = b = hbar / 2m adds the Bogoliubov
curvature, which matters once k_NA approaches the inverse healing length.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import least_squares

from weakcorr.model import InvalidArgument, sound_speed_ratio

log = logging.getLogger(__name__)

_NODES, _WEIGHTS = leggauss(96)


@dataclass(frozen=True)
class LineShapeParams:
    s_p: float
    h_f: float
    gamma_f: float
    c: float
    sigma: float  # imaging resolution parameter, metres
    k_cut: float  # aperture cut-off, rad/m
    exclusion: float = 0.0  # half-width around dx = 0 left out of fits
    dispersion: float = 0.0  # hbar / 2m in m^2/s; 0 gives a linear dispersion

    def __post_init__(self):
        if self.gamma_f < 0:
            raise InvalidArgument("gamma_f must be non-negative")
        if not self.sigma > 0:
            raise InvalidArgument("sigma must be positive")
        if not self.k_cut > 0:
            raise InvalidArgument("k_cut must be positive")

    @property
    def forward_lifetime(self):
        return math.inf if self.gamma_f == 0 else 1.0 / self.gamma_f


def _psf_parts(x, sigma, k_cut):
    """P(x), dP/dx and dP/dsigma by Gauss-Legendre quadrature over [0, k_cut]."""
    k = 0.5 * k_cut * (_NODES + 1.0)
    wq = 0.5 * k_cut * _WEIGHTS * np.exp(-0.5 * (k * sigma) ** 2)
    norm = wq.sum()
    dnorm = -(wq * k**2 * sigma).sum()
    x = np.asarray(x, float)[..., None]
    cos = np.cos(k * x)
    num = cos @ wq
    p = num / norm
    dp_dx = -(np.sin(k * x) * k) @ wq / norm
    dnum = -(cos * k**2 * sigma) @ wq
    dp_ds = (dnum * norm - num * dnorm) / norm**2
    return p, dp_dx, dp_ds


def _phonon_parts(dx, dt, c, sigma, k_cut, b):
    """Phonon term and its c and sigma derivatives (unit amplitude)."""
    k = 0.5 * k_cut * (_NODES + 1.0)
    wq = 0.5 * k_cut * _WEIGHTS * np.exp(-0.5 * (k * sigma) ** 2)
    norm = wq.sum()
    dnorm = -(wq * k**2 * sigma).sum()
    omega = np.sqrt((c * k) ** 2 + (b * k * k) ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        domega = np.where(omega > 0, c * k * k / np.where(omega > 0, omega, 1.0), k)
    x = np.asarray(dx, float)[..., None]
    ck = np.cos(k * x)
    tw = np.cos(omega * dt)
    num = (ck * tw) @ wq
    val = num / norm
    d_c = -(ck * np.sin(omega * dt) * dt * domega) @ wq / norm
    dnum = -(ck * tw * k**2 * sigma) @ wq
    d_s = (dnum * norm - num * dnorm) / norm**2
    return val, d_c, d_s


def psf(x, sigma, k_cut):
    """Band-limited point-spread function with P(0) = 1."""
    return _psf_parts(x, sigma, k_cut)[0]


def lineshape(dx, dt, params: LineShapeParams, envelope=None):
    """Model CCF on ``dx`` (metres) at delay ``dt`` (seconds)."""
    return _model_and_jac(np.asarray(dx, float), float(dt), params, envelope)[0]


_FREE = ("s_p", "h_f", "gamma_f", "c", "sigma")


def _model_and_jac(dx, dt, p: LineShapeParams, envelope=None):
    e = 1.0 if envelope is None else np.asarray(envelope, float)
    ph, ph_c, ph_s = _phonon_parts(dx, dt, p.c, p.sigma, p.k_cut, p.dispersion)
    p0, _, s0 = _psf_parts(dx, p.sigma, p.k_cut)
    decay = math.exp(-p.gamma_f * dt)
    phon = e * ph
    model = p.s_p * phon + p.h_f * decay * p0
    jac = {
        "s_p": phon * np.ones_like(dx),
        "h_f": decay * p0,
        "gamma_f": -dt * p.h_f * decay * p0,
        "c": e * p.s_p * ph_c,
        "sigma": e * p.s_p * ph_s + p.h_f * decay * s0,
    }
    return model, jac


def lineshape_jacobian(dx, dt, params: LineShapeParams, envelope=None):
    """Analytic derivatives of :func:`lineshape`, columns ordered s_p, h_f, gamma_f, c, sigma."""
    _, jac = _model_and_jac(np.asarray(dx, float), float(dt), params, envelope)
    return np.column_stack([np.broadcast_to(jac[n], np.shape(dx)) for n in _FREE])


def envelope_overlap(weights, dx_pixels):
    """Normalised autocorrelation of column weights at integer pixel shifts.

    ``weights`` is the per-column product of window and density envelope;
    the result is 1 at zero shift.
    """
    w = np.asarray(weights, float)
    n = len(w)
    f = np.fft.fft(w, 2 * n)
    ac = np.real(np.fft.ifft(np.abs(f) ** 2))
    idx = np.asarray(np.rint(dx_pixels), int) % (2 * n)
    return ac[idx] / ac[0]


class FitError(RuntimeError):
    """Optimiser did not converge; carries the best parameters reached."""

    def __init__(self, message, best, diagnostics):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics


@dataclass
class FitResult:
    params: LineShapeParams | list
    covariance: np.ndarray
    residuals: np.ndarray
    mode: str
    names: tuple
    chi2: float
    dof: int
    nfev: int = 0
    extra: dict = field(default_factory=dict)

    def stderr(self, name):
        i = self.names.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof if self.dof > 0 else math.nan


def _fit_mask(dx, exclusion):
    return np.abs(dx) >= exclusion if exclusion > 0 else np.ones(dx.shape, bool)


def _covariance(jac, chi2, dof, scale_by_chi2):
    jtj = jac.T @ jac
    cov = np.linalg.pinv(jtj)
    if scale_by_chi2 and dof > 0:
        cov = cov * (chi2 / dof)
    return 0.5 * (cov + cov.T)


def _run(fun, jac, x0, bounds, max_nfev, names, build):
    sol = least_squares(fun, x0, jac=jac, bounds=bounds, method="trf", x_scale="jac",
                        max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    if sol.status <= 0:
        raise FitError(f"fit did not converge: {sol.message}", build(sol.x),
                       {"nfev": sol.nfev, "cost": float(sol.cost), "message": sol.message,
                        "names": names})
    return sol


def _sigmas(sem, shape, weighted):
    if sem is None or not weighted:
        return np.ones(shape)
    sem = np.asarray(sem, float)
    if np.any(sem <= 0):
        raise InvalidArgument("standard errors must be positive")
    return sem


def fit_global(dx, dts, values, init: LineShapeParams, sem=None, weighted=True,
               envelope=None, max_nfev=2000) -> FitResult:
    """Fit all delay slices at once, sharing c, s_p, sigma and (h_f, gamma_f).

    ``values`` and ``sem`` have shape (n_dt, n_dx). With ``weighted`` False
    or no ``sem`` the covariance is scaled by the reduced chi-square.
    """
    dx = np.asarray(dx, float)
    dts = np.asarray(dts, float)
    values = np.asarray(values, float)
    if len(dts) < 2:
        raise InvalidArgument("a global fit needs at least two delay slices")
    if values.shape != (len(dts), len(dx)):
        raise InvalidArgument("values must have shape (n_dt, n_dx)")
    sig = _sigmas(sem, values.shape, weighted)
    sel = _fit_mask(dx, init.exclusion)

    def build(x):
        return replace(init, s_p=x[0], h_f=x[1], gamma_f=x[2], c=x[3], sigma=x[4])

    def fun(x):
        p = build(x)
        return np.concatenate([((lineshape(dx, t, p, envelope) - v) / s)[sel]
                               for t, v, s in zip(dts, values, sig)])

    def jac(x):
        p = build(x)
        return np.vstack([(lineshape_jacobian(dx, t, p, envelope) / s[:, None])[sel]
                          for t, s in zip(dts, sig)])

    x0 = np.array([init.s_p, init.h_f, init.gamma_f, init.c, init.sigma])
    lo = [-np.inf, -np.inf, 0.0, 0.0, 1e-3 / init.k_cut]
    hi = [np.inf, np.inf, np.inf, np.inf, 20.0 / init.k_cut]
    sol = _run(fun, jac, np.clip(x0, lo, hi), (lo, hi), max_nfev, _FREE, build)
    chi2 = float(2 * sol.cost)
    dof = sol.fun.size - len(x0)
    cov = _covariance(sol.jac, chi2, dof, not (weighted and sem is not None))
    return FitResult(build(sol.x), cov, sol.fun, "global", _FREE, chi2, dof, sol.nfev)


_IND = ("s_p", "f", "c")


def fit_individual(dx, dt, values, init: LineShapeParams, sem=None, weighted=True,
                   envelope=None, max_nfev=2000) -> FitResult:
    """Fit one delay slice with free s_p, c and forward amplitude f = h_f exp(-gamma_f dt).

    sigma is held at ``init.sigma``. The returned params carry h_f = f and
    gamma_f = 0 so that :func:`lineshape` at the same dt reproduces the fit.
    """
    dx = np.asarray(dx, float)
    values = np.asarray(values, float)
    sig = _sigmas(sem, values.shape, weighted)
    sel = _fit_mask(dx, init.exclusion)
    dt = float(dt)

    def build(x):
        return replace(init, s_p=x[0], h_f=x[1], gamma_f=0.0, c=x[2])

    def fun(x):
        return ((lineshape(dx, dt, build(x), envelope) - values) / sig)[sel]

    def jac(x):
        j = lineshape_jacobian(dx, dt, build(x), envelope)[:, [0, 1, 3]]
        return (j / sig[:, None])[sel]

    f0 = init.h_f * math.exp(-init.gamma_f * dt)
    x0 = np.array([init.s_p, f0, max(init.c, 0.0)])
    bounds = ([-np.inf, -np.inf, 0.0], [np.inf, np.inf, np.inf])
    sol = _run(fun, jac, x0, bounds, max_nfev, _IND, build)
    chi2 = float(2 * sol.cost)
    dof = sol.fun.size - 3
    cov = _covariance(sol.jac, chi2, dof, not (weighted and sem is not None))
    return FitResult(build(sol.x), cov, sol.fun, "individual", _IND, chi2, dof, sol.nfev,
                     {"dt": dt})


def fit_individual_all(dx, dts, values, init, sem=None, **kw):
    """:func:`fit_individual` for every slice; returns a list of results."""
    sem = [None] * len(dts) if sem is None else sem
    return [fit_individual(dx, t, v, init, s, **kw) for t, v, s in zip(dts, values, sem)]


def initial_guess(dx, dts, values, k_cut, exclusion=0.0, sigma=None,
                  dispersion=0.0) -> LineShapeParams:
    """Starting point from the data.

    c comes from tracking the positive-dx peak across the two largest
    delays, amplitudes from peak heights and gamma_f from the log ratio of
    the centre values of the two smallest delays.
    """
    dx = np.asarray(dx, float)
    dts = np.asarray(dts, float)
    values = np.asarray(values, float)
    order = np.argsort(dts)
    dts, values = dts[order], values[order]
    pos = dx > max(exclusion, 0.0)

    def peak(v):
        i = np.argmax(v[pos])
        return dx[pos][i], v[pos][i]

    x1, _ = peak(values[-2])
    x2, h2 = peak(values[-1])
    # a finite-difference speed from broad, pixel-quantised peaks is noisy;
    # fall back to the mean apparent speed when it is not sensible
    c = (x2 - x1) / (dts[-1] - dts[-2]) if dts[-1] > dts[-2] else 0.0
    apparent = 0.5 * (x1 / dts[-2] + x2 / dts[-1]) if dts[-2] > 0 else x2 / dts[-1]
    if not 0.5 * apparent < c < 2 * apparent:
        c = apparent
    if not c > 0:
        c = 1e-3
    centre = np.argmin(np.abs(dx))
    s_p = max(h2, 1e-12) if h2 > 0 else float(np.max(np.abs(values)))
    sigma = 0.5 / k_cut if sigma is None else sigma
    p0 = psf(np.array([c * dts[0], c * dts[1]]), sigma, k_cut)
    f = values[:2, centre] - s_p * p0
    if f[0] > 0 and f[1] > 0 and f[0] > f[1]:
        gamma = math.log(f[0] / f[1]) / (dts[1] - dts[0])
        h_f = f[0] * math.exp(gamma * dts[0])
    else:
        gamma, h_f = 1.0 / max(dts[0], 1e-6), max(f[0], 0.0)
    return LineShapeParams(s_p, h_f, gamma, c, sigma, k_cut, exclusion, dispersion)


@dataclass
class SoundFit:
    c0: float
    c0_err: float
    omega_ratio_sq: float
    r_c: np.ndarray
    c: np.ndarray

    def curve(self, r_c):
        return self.c0 * sound_speed_ratio(r_c, self.omega_ratio_sq)


def fit_sound_vs_rc(r_c, c, omega_ratio_sq, c_err=None) -> SoundFit:
    """One-parameter weighted least squares c = c0 * ratio(R_c), in closed form.

    A single point is accepted and returns c0 = c / ratio(R_c) with the
    point's error (or nan if none is given).
    """
    r_c = np.atleast_1d(np.asarray(r_c, float))
    c = np.atleast_1d(np.asarray(c, float))
    if r_c.size == 0 or r_c.shape != c.shape:
        raise InvalidArgument("need matching, non-empty R_c and c arrays")
    if not (np.all(np.isfinite(c)) and np.all(c > 0)):
        raise InvalidArgument("sound speeds must be finite and positive")
    f = sound_speed_ratio(r_c, omega_ratio_sq)
    f = np.atleast_1d(f)
    if c_err is not None:
        c_err = np.atleast_1d(np.asarray(c_err, float))
        if not (np.all(np.isfinite(c_err)) and np.all(c_err > 0)):
            raise InvalidArgument("uncertainties must be finite and positive")
    wts = np.ones_like(c) if c_err is None else c_err**-2.0
    sff = float(np.sum(wts * f * f))
    c0 = float(np.sum(wts * f * c) / sff)
    if c_err is not None:
        err = math.sqrt(1.0 / sff)
    elif c.size > 1:
        resid = c - c0 * f
        err = math.sqrt(float(np.sum(resid**2)) / (c.size - 1) / sff)
    else:
        err = math.nan
    return SoundFit(c0, err, omega_ratio_sq, r_c, c)
