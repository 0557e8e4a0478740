"""Ensemble simulation of repeated weak density measurements.

The condensate's longitudinal density fluctuations are a linear Gaussian
surrogate: a set of Bogoliubov modes on the pixel-column grid, band-limited
to the imaging aperture. Each shot is a coherent state of those modes whose
amplitudes are drawn from the thermal P-distribution (variance n_th); the
vacuum half quantum lives in the per-shot connected correlator and acts only
through measurement backaction. Summed, the two reproduce the symmetrised
occupation n_th + 1/2 of every mode.

A measurement returns the imaged fluctuation plus white projection noise
m / phi (var m = 1/2). For a coherent state the first-order Kraus factor
1 + phi sum_r m_r (n_r - <n_r>) is a displacement of every mode amplitude,
which is what :func:`weak_measure` applies.

Forward-scattered excitations are a second, purely statistical field whose
per-shot mode frequencies are Cauchy distributed; its ensemble two-time
correlation therefore decays exactly as exp(-gamma_f |dt|) while every
single realisation evolves unitarily.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from weakcorr.analysis.fourier import lowpass, na_mask, wavenumbers
from weakcorr.model import (
    CondensateParams,
    InvalidArgument,
    ProbeParams,
    bogoliubov_omega,
    phi_na,
    phi_pixel,
    photons_per_pixel,
    thermal_occupation,
)


@dataclass(frozen=True)
class Grid:
    """Camera grid in the object plane; ``nx`` runs along the long axis."""

    nx: int = 256
    ny: int = 64
    pitch: float = 0.5e-6

    def __post_init__(self):
        if self.nx < 8 or self.ny < 4 or self.pitch <= 0:
            raise InvalidArgument("grid too small or non-positive pitch")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def x(self):
        return (np.arange(self.nx) - self.nx // 2) * self.pitch

    @property
    def y(self):
        return (np.arange(self.ny) - self.ny // 2) * self.pitch


@dataclass(frozen=True, eq=False)
class PhysicsConfig:
    condensate: CondensateParams = field(default_factory=CondensateParams)
    probe: ProbeParams = field(default_factory=lambda: ProbeParams(pixel_area=0.25e-12))
    grid: Grid = field(default_factory=Grid)
    forward_strength: float = 0.0  # forward-scattered variance / phonon variance
    forward_decay_rate: float = 2.0e3  # 1/s
    number_jitter: float = 0.0  # relative rms of total atom number
    center_jitter: float = 0.0  # rms trap-centre offset along x, metres
    occulted: np.ndarray | None = None

    def __post_init__(self):
        area = self.grid.pitch**2
        if not math.isclose(self.probe.pixel_area, area, rel_tol=1e-9):
            object.__setattr__(self, "probe", replace(self.probe, pixel_area=area))
        if self.forward_strength < 0 or self.forward_decay_rate < 0:
            raise InvalidArgument("forward component parameters must be non-negative")
        if self.number_jitter < 0 or self.center_jitter < 0:
            raise InvalidArgument("jitter amplitudes must be non-negative")

    @property
    def k_na(self) -> float:
        return self.probe.k_na

    @cached_property
    def imaging(self) -> "Imaging":
        return Imaging(self)


class Imaging:
    """Pre-computed geometry shared by every shot of one configuration."""

    def __init__(self, config: PhysicsConfig):
        grid = config.grid
        cond = config.condensate
        self.config = config
        self.mask = na_mask(grid.shape, grid.pitch, config.k_na, config.occulted)
        self.k = wavenumbers(grid.nx, grid.pitch)
        self.band = (np.abs(self.k) <= config.k_na) & (self.k != 0)
        self.omega = bogoliubov_omega(self.k, cond)
        self.minus = (-np.arange(grid.nx)) % grid.nx

        profile = thomas_fermi_column(grid, cond.tf_radius_x, cond.tf_radius_z)
        line = profile.sum(axis=0)
        n_atoms = cond.atom_number * cond.condensate_fraction
        self.mean_profile = lowpass(profile * (n_atoms / profile.sum()), self.mask)
        self.line_peak = n_atoms * line.max() / profile.sum()  # atoms per pixel column
        self.envelope = np.sqrt(line / line.max())
        with np.errstate(invalid="ignore", divide="ignore"):
            transverse = np.where(line > 0, profile / line, 0.0)
        self.coupling = self.envelope[None, :] * transverse

        hbar, mass = cond.constants.hbar, cond.constants.atom_mass
        eps = hbar * self.k**2 / (2 * mass)
        with np.errstate(invalid="ignore", divide="ignore"):
            s_k = np.where(self.band, eps / np.where(self.omega > 0, self.omega, 1.0), 0.0)
        self.mode_amp = np.sqrt(self.line_peak * s_k / grid.nx)
        self.n_thermal = np.where(self.band, thermal_occupation(self.omega, cond.temperature, hbar), 0.0)

        phonon_var = float(np.sum(self.mode_amp**2 * (2 * self.n_thermal + 1)))
        nb = max(int(self.band.sum()), 1)
        fwd = config.forward_strength * phonon_var / nb
        self.forward_amp = np.where(self.band, math.sqrt(fwd), 0.0)

    def image(self, line: np.ndarray) -> np.ndarray:
        """Map a column-density fluctuation u(x) to the imaged 2D field."""
        return lowpass(self.coupling * line[None, :], self.mask)

    def image_adjoint(self, pixels: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`image`: 2D pixel weights -> per-column weights."""
        return np.sum(self.coupling * lowpass(pixels, self.mask), axis=0)

    def symmetric_kernel(self, dx: np.ndarray, dt: float) -> np.ndarray:
        """Ensemble symmetrised correlator of u between columns dx apart, dt later.

        Direct cosine sum over modes, independent of the FFT machinery.
        """
        dx = np.asarray(dx, dtype=float)[..., None]
        k, w = self.k[self.band], self.omega[self.band]
        a2 = self.mode_amp[self.band] ** 2
        occ = 2 * self.n_thermal[self.band] + 1
        phon = np.sum(a2 * occ * np.cos(k * dx - w * dt), axis=-1)
        f2 = self.forward_amp[self.band] ** 2
        decay = math.exp(-self.config.forward_decay_rate * abs(dt))
        return phon + decay * np.sum(f2 * np.cos(k * dx), axis=-1)


def thomas_fermi_column(grid: Grid, rx: float, rz: float, x0: float = 0.0) -> np.ndarray:
    """Column-integrated 3D Thomas-Fermi profile (unnormalised)."""
    x = grid.x[None, :] - x0
    y = grid.y[:, None]
    arg = 1.0 - (x / rx) ** 2 - (y / rz) ** 2
    return np.clip(arg, 0.0, None) ** 1.5


@dataclass
class PhononField:
    """Per-shot state of the fluctuation surrogate at time ``time``.

    ``amplitudes`` are coherent-state mode amplitudes in FFT order (zero
    outside the aperture band); ``occupations`` are the symmetrised
    occupations n_th + 1/2 of the band modes.
    """

    imaging: Imaging
    amplitudes: np.ndarray
    forward: np.ndarray
    forward_freq: np.ndarray
    time: float = 0.0

    @property
    def mode_grid(self):
        return self.imaging.k[self.imaging.band]

    @property
    def occupations(self):
        return self.imaging.n_thermal[self.imaging.band] + 0.5

    @property
    def density_profile(self):
        return self.imaging.mean_profile

    def coefficients(self) -> np.ndarray:
        """Hermitian Fourier coefficients c_k of the column fluctuation u(x)."""
        im = self.imaging
        c = im.mode_amp * (self.amplitudes + np.conj(self.amplitudes[im.minus]))
        c = c + im.forward_amp * (self.forward + np.conj(self.forward[im.minus]))
        return c

    def line_density(self) -> np.ndarray:
        """Column fluctuation u(x) in atoms per pixel column."""
        c = self.coefficients()
        return np.real(np.fft.ifft(c)) * c.size

    def fluctuation(self) -> np.ndarray:
        """Expected imaged 2D fluctuation <delta n_r> of this shot."""
        return self.imaging.image(self.line_density())

    def copy(self) -> "PhononField":
        return PhononField(self.imaging, self.amplitudes.copy(), self.forward.copy(),
                           self.forward_freq.copy(), self.time)


@dataclass(frozen=True)
class MeasurementPulse:
    """One weak measurement at ``time`` with dimensionless strength ``g``.

    ``technical_noise`` is the effective strength of added detection noise;
    ``inf`` disables it.
    """

    time: float
    g: float
    technical_noise: float = math.inf

    def phi(self, config: PhysicsConfig) -> float:
        return phi_pixel(self.g, config.grid.pitch**2, config.condensate.constants.sigma0)

    def phi_resolved(self, config: PhysicsConfig) -> float:
        return phi_na(self.g, config.probe.numerical_aperture)


@dataclass
class ShotRecord:
    """Outcomes of one ensemble member.

    ``outcomes[i]`` is the deduced atoms-per-pixel image of pulse i;
    ``noise[i]`` is its measurement-noise part (projection plus technical).
    """

    shot_id: int
    seed: tuple
    times: np.ndarray
    outcomes: np.ndarray
    noise: np.ndarray | None
    number_scale: float = 1.0
    center_offset: float = 0.0

    @property
    def fluctuations(self):
        return self.outcomes


def shot_rng(master_seed: int, shot_id: int) -> np.random.Generator:
    """Counter-based stream for one shot, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(shot_id),))
    return np.random.Generator(np.random.Philox(ss))


def _complex_normal(rng, var, size):
    s = np.sqrt(np.asarray(var) / 2.0)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def sample_initial_field(config: PhysicsConfig, rng) -> PhononField:
    """Draw one shot's coherent amplitudes from the thermal P-distribution."""
    if config.condensate.temperature < 0:
        raise InvalidArgument("temperature must be non-negative")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    im = config.imaging
    n = config.grid.nx
    beta = np.where(im.band, _complex_normal(rng, im.n_thermal, n), 0.0)
    alpha = np.where(im.band, _complex_normal(rng, 0.5, n), 0.0)
    gamma = config.forward_decay_rate
    nu = gamma * np.tan(np.pi * (rng.random(n) - 0.5)) if gamma > 0 else np.zeros(n)
    return PhononField(im, beta.astype(complex), alpha.astype(complex), nu)


def evolve(field: PhononField, dt: float) -> PhononField:
    """Free evolution by ``dt``: each mode picks up exp(-i omega dt)."""
    if dt < 0:
        raise InvalidArgument("dt must be non-negative")
    out = field.copy()
    if dt == 0:
        return out
    out.amplitudes = field.amplitudes * np.exp(-1j * field.imaging.omega * dt)
    out.forward = field.forward * np.exp(-1j * field.forward_freq * dt)
    out.time = field.time + dt
    return out


def weak_measure(field: PhononField, pulse: MeasurementPulse, rng, phi: float | None = None):
    """Measure ``field`` once; return (fluctuation outcome, post-measurement field).

    The outcome is <delta n_r> + m_r / phi (+ q_r / theta); the returned field
    carries the first-order Kraus displacement driven by the same m.
    """
    im = field.imaging
    if phi is None:
        phi = pulse.phi(im.config)
    if not phi > 0:
        raise InvalidArgument("measurement strength phi must be positive")
    shape = im.config.grid.shape
    m = rng.standard_normal(shape) * math.sqrt(0.5)
    noise = m / phi
    if math.isfinite(pulse.technical_noise):
        noise = noise + rng.standard_normal(shape) * math.sqrt(0.5) / pulse.technical_noise
    outcome = field.fluctuation() + noise

    post = field.copy()
    w = im.image_adjoint(m)
    post.amplitudes = field.amplitudes + phi * im.mode_amp * np.fft.fft(w)
    return outcome, post, noise


def _run_shot(config, pulses, master_seed, shot_id, keep_noise):
    rng = shot_rng(master_seed, shot_id)
    im = config.imaging
    grid = config.grid
    scale = 1.0 + config.number_jitter * rng.standard_normal() if config.number_jitter else 1.0
    offset = config.center_jitter * rng.standard_normal() if config.center_jitter else 0.0
    if offset:
        kx = wavenumbers(grid.nx, grid.pitch)
        shifted = np.fft.ifft(np.fft.fft(im.mean_profile, axis=1) * np.exp(-1j * kx * offset), axis=1)
        mean = np.real(shifted) * scale
    else:
        mean = im.mean_profile * scale

    state = sample_initial_field(config, rng)
    outs = np.empty((len(pulses),) + grid.shape)
    noises = np.empty_like(outs) if keep_noise else None
    for i, pulse in enumerate(pulses):
        state = evolve(state, pulse.time - state.time)
        dn, state, noise = weak_measure(state, pulse, rng)
        outs[i] = mean + dn
        if keep_noise:
            noises[i] = noise
    return ShotRecord(shot_id, (int(master_seed), shot_id), np.array([p.time for p in pulses]),
                      outs, noises, scale, offset)


def validate_pulses(pulses, config: PhysicsConfig):
    if len(pulses) < 2:
        raise InvalidArgument("a sequence needs at least two pulses")
    times = np.array([p.time for p in pulses], dtype=float)
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise InvalidArgument("pulse times must be non-negative and strictly increasing")
    for p in pulses:
        if not p.g > 0:
            raise InvalidArgument("pulse strength g must be positive")
        if p.phi_resolved(config) > 0.1 + 5e-3:
            warnings.warn(f"resolved measurement strength {p.phi_resolved(config):.3f} exceeds 0.1; "
                          "first-order backaction may be inaccurate", stacklevel=3)


def run_sequence(config: PhysicsConfig, pulses, shots: int, seed: int = 0,
                 workers: int = 1, keep_noise: bool = True) -> list:
    """Simulate ``shots`` independent realisations of the pulse sequence.

    Output is ordered by shot id and bit-identical for a given seed whatever
    the worker count.
    """
    if shots < 2:
        raise InvalidArgument("an ensemble needs at least two shots")
    validate_pulses(pulses, config)
    config.imaging  # build shared geometry once, before any worker threads
    job = lambda j: _run_shot(config, pulses, seed, j, keep_noise)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, range(shots)))
    else:
        records = [job(j) for j in range(shots)]
    return records


def stack_outcomes(records, pulse: int) -> np.ndarray:
    """(shots, ny, nx) array of one pulse's outcomes."""
    return np.stack([r.outcomes[pulse] for r in records])


# Frame rendering ---------------------------------------------------------

@dataclass(frozen=True)
class FringeSpec:
    """Probe etalon fringes: sum of sinusoids whose phases drift shot to shot."""

    amplitudes: tuple = (0.03, 0.02)
    wavevectors: tuple = ((0.35e6, 0.12e6), (0.08e6, 0.45e6))  # (kx, ky) rad/m
    drift: float = 1.0  # rms phase drift between shots, rad
    mismatch: float = 0.15  # rms phase slip between with-atoms and probe frames, rad


@dataclass
class FrameSet:
    """Raw frames per pulse: ``plus`` (with atoms), ``probe`` and ``dark``."""

    plus: np.ndarray
    probe: np.ndarray
    dark: np.ndarray
    clamped: int = 0


def pci_from_density(n, detuning_ratio, area, sigma0):
    return n * sigma0 / (2.0 * detuning_ratio * area)


def render_frames(record: ShotRecord, config: PhysicsConfig, pulses, *, fringes: FringeSpec | None = None,
                  atom_shot_noise: bool = False, probe_shot_noise: bool = True,
                  dark_level: float = 0.0, readout_noise: float = 0.0,
                  lowpass_signal: bool = True, rng=None) -> FrameSet:
    """Invert the PCI relation to produce (I_plus, I_0, I_D) per pulse.

    The record's outcomes already contain projection noise, which is the
    photon shot noise of the with-atoms frame; ``atom_shot_noise`` adds
    independent photon noise on top and is meant for noiseless inputs.
    """
    if rng is None:
        rng = shot_rng(record.seed[0] + 7919, record.shot_id)
    grid = config.grid
    probe = config.probe
    sigma0 = probe.constants.sigma0
    area = grid.pitch**2
    y, x = np.meshgrid(grid.y, grid.x, indexing="ij")
    mask = config.imaging.mask

    n_p = len(pulses)
    plus = np.empty((n_p,) + grid.shape)
    prb = np.empty_like(plus)
    dark = np.empty_like(plus)
    clamped = 0
    drift = rng.standard_normal(len(fringes.amplitudes)) * fringes.drift if fringes else None
    for i, pulse in enumerate(pulses):
        n = record.outcomes[i]
        if lowpass_signal:
            noise = record.noise[i] if record.noise is not None else 0.0
            n = lowpass(n - noise, mask) + noise
        n0 = photons_per_pixel(pulse.g, probe.detuning_ratio, area, sigma0)
        base_plus = np.ones(grid.shape)
        base_probe = np.ones(grid.shape)
        if fringes:
            slip = rng.standard_normal(len(fringes.amplitudes)) * fringes.mismatch
            for j, (amp, (kx, ky)) in enumerate(zip(fringes.amplitudes, fringes.wavevectors)):
                ph = kx * x + ky * y + drift[j] + 0.7 * i
                base_plus += amp * np.sin(ph)
                base_probe += amp * np.sin(ph + slip[j])
        g_pci = pci_from_density(n, probe.detuning_ratio, area, sigma0)
        ip = n0 * base_plus * (1.0 - g_pci)
        i0 = n0 * base_probe
        if atom_shot_noise:
            ip = ip + np.sqrt(np.clip(ip, 0, None)) * rng.standard_normal(grid.shape)
        if probe_shot_noise:
            i0 = i0 + np.sqrt(np.clip(i0, 0, None)) * rng.standard_normal(grid.shape)
        d = np.full(grid.shape, float(dark_level))
        if readout_noise:
            ip = ip + readout_noise * rng.standard_normal(grid.shape)
            i0 = i0 + readout_noise * rng.standard_normal(grid.shape)
            d = d + readout_noise * rng.standard_normal(grid.shape)
        ip = ip + dark_level
        i0 = i0 + dark_level
        clamped += int(np.sum(ip < 0) + np.sum(i0 < 0))
        plus[i] = np.clip(ip, 0, None)
        prb[i] = np.clip(i0, 0, None)
        dark[i] = d
    return FrameSet(plus, prb, dark, clamped)
