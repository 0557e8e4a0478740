"""Figure-level workflows shared by the command line and the test suite."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from weakcorr import __version__, io, plots
from weakcorr.analysis.correlate import DSFMatrix, VanHoveMatrix, mirror_index
from weakcorr.analysis.pipeline import (
    analysis_window,
    analyze_pairs,
    crop,
    fluctuation_maps,
    merge_duplicate_delays,
)
from weakcorr.config import RunConfig
from weakcorr.fitting import (
    FitResult,
    LineShapeParams,
    fit_global,
    fit_individual,
    fit_sound_vs_rc,
    initial_guess,
    lineshape,
)
from weakcorr.model import InvalidArgument, bogoliubov_omega
from weakcorr.simulator import PhysicsConfig, run_sequence
from weakcorr.weakvalues import (
    PostSelectionSpec,
    amplification,
    ccf_estimate,
    expected_scale,
    noise_width,
    per_shot_amplitudes,
    qwv_estimate,
    slope_ratio,
    snr,
    strength_fit,
    template_amplitude,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "WEAKCORR_WORKERS"


class DataError(ValueError):
    """Input data do not match the configuration or are unusable."""


def worker_count(explicit=None) -> int:
    if explicit:
        return max(int(explicit), 1)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise InvalidArgument(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# -- ensembles ---------------------------------------------------------------

@dataclass
class Ensemble:
    label: str
    group: str
    physics: PhysicsConfig
    pulses: list
    outcomes: np.ndarray | None  # (M, P, ny, nx)
    maps: np.ndarray | None = None

    @property
    def times(self):
        return np.array([p.time for p in self.pulses])

    @property
    def strengths(self):
        return np.array([p.g for p in self.pulses])

    def fluctuations(self, n_components, release=False):
        if self.maps is None:
            self.maps = fluctuation_maps(self.outcomes, n_components)
            if release:
                self.outcomes = None
        return self.maps


def sequence_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def simulate(cfg: RunConfig, workers=None) -> list:
    sim = cfg.simulation
    out = []
    for i, (label, group, phys, pulses) in enumerate(cfg.sequences()):
        recs = run_sequence(phys, pulses, sim.shots, sequence_seed(sim.seed, i),
                            worker_count(workers), keep_noise=False)
        outcomes = np.stack([r.outcomes for r in recs])
        out.append(Ensemble(label, group, phys, pulses, outcomes))
        log.info("simulated %s: %d shots x %d pulses", label, sim.shots, len(pulses))
    return out


def _grid_meta(cfg):
    g = cfg.grid()
    return {"nx": g.nx, "ny": g.ny, "pitch": g.pitch}


def ensembles_to_container(ensembles, cfg: RunConfig) -> io.TensorContainer:
    c = io.TensorContainer(metadata={
        "kind": "ensemble", "config_hash": cfg.hash(), "grid": _grid_meta(cfg),
        "sequences": [{"label": e.label, "group": e.group} for e in ensembles],
        "producer": f"weakcorr {__version__}",
    })
    for e in ensembles:
        c.add(f"{e.label}/outcomes", e.outcomes, ("shot", "pulse", "y", "x"), "atoms/pixel")
        c.add(f"{e.label}/times", e.times, ("pulse",), "s")
        c.add(f"{e.label}/g", e.strengths, ("pulse",), "")
    return c


def _check_grid(meta, cfg):
    if meta.get("grid") != _grid_meta(cfg):
        raise DataError(f"input grid {meta.get('grid')} does not match the configured grid {_grid_meta(cfg)}")


def container_to_ensembles(c: io.TensorContainer, cfg: RunConfig) -> list:
    if c.metadata.get("kind") != "ensemble":
        raise DataError("container does not hold an ensemble")
    _check_grid(c.metadata, cfg)
    known = {lab: (grp, phys, pulses) for lab, grp, phys, pulses in cfg.sequences()}
    out = []
    for s in c.metadata["sequences"]:
        lab = s["label"]
        if lab not in known:
            raise DataError(f"sequence {lab!r} is not described by the configuration")
        grp, phys, pulses = known[lab]
        if not np.allclose(c[f"{lab}/times"], [p.time for p in pulses]):
            raise DataError(f"sequence {lab!r}: pulse times differ from the configuration")
        out.append(Ensemble(lab, s["group"], phys, pulses, c[f"{lab}/outcomes"]))
    return out


def delay_pairs(n_pulses, mode="adjacent"):
    if mode == "all":
        return [(i, j) for i in range(n_pulses) for j in range(i + 1, n_pulses)]
    return [(i, i + 1) for i in range(n_pulses - 1)]


def groups(ensembles):
    out = {}
    for e in ensembles:
        out.setdefault(e.group, []).append(e)
    return out


def _window(cfg, phys):
    return analysis_window(phys.grid.shape, phys.grid.pitch, phys.condensate.tf_radius_x,
                           cfg.analysis_settings())


# -- CCF / Van Hove / DSF ----------------------------------------------------

def analyze(cfg: RunConfig, ensembles, release=False) -> dict:
    """Van Hove matrix and structure factor for every sequence group."""
    settings = cfg.analysis_settings()
    out = {}
    for name, members in groups(ensembles).items():
        phys = members[0].physics
        window = _window(cfg, phys)
        pairs = []
        for e in members:
            maps = e.fluctuations(settings.pca_components, release)
            for i, j in delay_pairs(len(e.pulses), cfg.qwv.pairs):
                pairs.append((e.times[j] - e.times[i], maps[:, i], maps[:, j]))
        out[name] = analyze_pairs(pairs, phys.grid.pitch, phys.k_na, settings, window)
    return out


def products_to_container(products: dict, cfg: RunConfig) -> io.TensorContainer:
    c = io.TensorContainer(metadata={"kind": "products", "config_hash": cfg.hash(),
                                     "grid": _grid_meta(cfg), "groups": sorted(products),
                                     "producer": f"weakcorr {__version__}"})
    for name in sorted(products):
        p = products[name]
        vh, s = p.van_hove, p.structure
        c.add(f"{name}/dx", vh.dx, ("dx",), "m")
        c.add(f"{name}/dt", vh.dt, ("dt",), "s")
        c.add(f"{name}/van_hove", vh.values, ("dt", "dx"), "atoms^2/pixel^2")
        c.add(f"{name}/van_hove_sem", vh.sem, ("dt", "dx"), "atoms^2/pixel^2")
        c.add(f"{name}/k", s.k, ("k",), "rad/m")
        c.add(f"{name}/omega", s.omega, ("omega",), "rad/s")
        c.add(f"{name}/dsf", s.values, ("omega", "k"), "arb")
    return c


def container_to_van_hove(c: io.TensorContainer, cfg: RunConfig) -> dict:
    if c.metadata.get("kind") != "products":
        raise DataError("container does not hold analysis products")
    _check_grid(c.metadata, cfg)
    return {g: VanHoveMatrix(c[f"{g}/dx"], c[f"{g}/dt"], c[f"{g}/van_hove"], c[f"{g}/van_hove_sem"])
            for g in c.metadata["groups"]}


def dsf_ridge(s: DSFMatrix, condensate, k_na):
    sel = (s.k > 0) & (s.k <= k_na * (1 + 1e-12))
    return s.k[sel], s.ridge()[sel], bogoliubov_omega(s.k[sel], condensate)


# -- fits --------------------------------------------------------------------

@dataclass
class FitReport:
    global_fit: FitResult | None
    individual: list = field(default_factory=list)


def _dispersion(cfg, phys):
    if not cfg.fit.dispersion:
        return 0.0
    k = phys.condensate.constants
    return k.hbar / (2 * k.atom_mass)


def fit_van_hove(cfg: RunConfig, vh: VanHoveMatrix, phys: PhysicsConfig) -> FitReport:
    settings = cfg.analysis_settings()
    v = crop(vh, settings.max_dx)
    excl = cfg.fit.exclusion_um * 1e-6
    init = initial_guess(v.dx, v.dt, v.values, phys.k_na, excl, dispersion=_dispersion(cfg, phys))
    sem = v.sem if cfg.fit.weighted else None
    report = FitReport(None)
    if cfg.fit.mode in ("global", "both") and len(v.dt) >= 2:
        report.global_fit = fit_global(v.dx, v.dt, v.values, init, sem, cfg.fit.weighted)
        init = report.global_fit.params
    if cfg.fit.mode in ("individual", "both"):
        for i, t in enumerate(v.dt):
            report.individual.append(fit_individual(v.dx, t, v.values[i], init,
                                                    None if sem is None else sem[i],
                                                    cfg.fit.weighted))
    return report


def fit_rows(report: FitReport, group: str):
    rows = []
    if report.global_fit is not None:
        r = report.global_fit
        p = r.params
        rows.append({"group": group, "mode": "global", "dt": math.nan, "c": p.c,
                     "c_se": r.stderr("c"), "s_p": p.s_p, "h_f": p.h_f, "gamma_f": p.gamma_f,
                     "sigma": p.sigma, "chi2": r.chi2, "dof": r.dof})
    for r in report.individual:
        p = r.params
        rows.append({"group": group, "mode": "individual", "dt": r.extra["dt"], "c": p.c,
                     "c_se": r.stderr("c"), "s_p": p.s_p, "h_f": p.h_f, "gamma_f": p.gamma_f,
                     "sigma": p.sigma, "chi2": r.chi2, "dof": r.dof})
    return rows


def _columns(rows):
    if not rows:
        return {}
    return {k: [r[k] for r in rows] for k in rows[0]}


# -- weak values -------------------------------------------------------------

@dataclass
class QWVEntry:
    label: str
    group: str
    pair: tuple
    dt: float
    g1: float
    g2: float
    phi1: float
    dx: np.ndarray
    ccf: np.ndarray
    ccf_per_shot: np.ndarray
    results: dict  # fd -> WeakValueResult


def qwv_entries(cfg: RunConfig, ensembles, release=False) -> list:
    settings = cfg.analysis_settings()
    spec_mode = cfg.qwv.mode
    out = []
    for e in ensembles:
        maps = e.fluctuations(settings.pca_components, release)
        window = _window(cfg, e.physics)
        pitch = e.physics.grid.pitch
        for i, j in delay_pairs(len(e.pulses), cfg.qwv.pairs):
            d1, d2 = maps[:, i], maps[:, j]
            dx, ccf, per = ccf_estimate(d1, d2, window, pitch)
            width = noise_width(d1)
            res = {}
            for fd in cfg.qwv.fd_grid:
                spec = PostSelectionSpec.from_discarded(fd, spec_mode)
                res[fd] = qwv_estimate(d1, d2, window, spec, pitch, width)
            out.append(QWVEntry(e.label, e.group, (i, j), e.times[j] - e.times[i],
                                e.pulses[i].g, e.pulses[j].g, e.pulses[i].phi(e.physics),
                                dx, ccf, per, res))
    return out


def _template(cfg, entries, phys):
    """Line-shape template per delay, fitted to the pooled CCF at that delay."""
    by_dt = {}
    for en in entries:
        by_dt.setdefault(round(en.dt, 12), []).append(en)
    excl = cfg.fit.exclusion_um * 1e-6
    templates = {}
    for key, ens in by_dt.items():
        if not key > 0:
            raise InvalidArgument("weak-value pairs need a positive delay")
        dx = np.fft.fftshift(ens[0].dx)
        curve = np.mean([np.fft.fftshift(e.ccf) for e in ens], axis=0)
        curve = 0.5 * (curve + curve[mirror_index(len(curve))])
        var = np.mean([e.ccf_per_shot.var(axis=0, ddof=1) / len(e.ccf_per_shot) for e in ens],
                      axis=0) / len(ens)
        sem = np.sqrt(np.fft.fftshift(var))
        sel = np.abs(dx) <= cfg.analysis.max_dx_um * 1e-6 + 1e-12
        pos = sel & (dx > excl)
        ip = int(np.argmax(curve[pos]))
        init = LineShapeParams(float(curve[pos][ip]), 0.0, 0.0, max(dx[pos][ip] / key, 1e-4),
                               0.5 / phys.k_na, phys.k_na, excl, _dispersion(cfg, phys))
        fit = fit_individual(dx[sel], key, curve[sel], init, sem[sel], cfg.fit.weighted)
        t = lineshape(dx, key, fit.params)
        t[~sel] = 0.0
        templates[key] = np.fft.ifftshift(t)
    return templates


@dataclass
class QWVReport:
    rows: list
    strength: dict
    ratios: list
    snr_rows: list
    entries: list


def qwv_report(cfg: RunConfig, ensembles, release=False) -> QWVReport:
    """Amplitude tables, strength fits and amplification ratios for every group."""
    entries = qwv_entries(cfg, ensembles, release)
    rows, ratios, snr_rows = [], [], []
    strength = {}
    for gname, members in groups(ensembles).items():
        ens = [e for e in entries if e.group == gname]
        phys = members[0].physics
        templates = _template(cfg, ens, phys)
        for en in ens:
            t = templates[round(en.dt, 12)]
            region = t != 0
            a, se = template_amplitude(en.ccf, t, en.ccf_per_shot, region)
            base_snr = snr(en.ccf, en.ccf_per_shot, t, region)
            rows.append({"label": en.label, "group": gname, "i": en.pair[0], "j": en.pair[1],
                         "dt": en.dt, "g1": en.g1, "g2": en.g2, "phi1": en.phi1, "kind": "ccf",
                         "fd": math.nan, "threshold": math.nan, "amplification": math.nan,
                         "amplitude": a, "amplitude_se": se, "snr": base_snr,
                         "retained": 1.0})
            for fd, r in en.results.items():
                a, se = template_amplitude(r.curve, t, r.per_shot, region)
                r.amplitude, r.amplitude_se = a, se
                r.snr = snr(r.curve, r.per_shot, t, region)
                rows.append({"label": en.label, "group": gname, "i": en.pair[0], "j": en.pair[1],
                             "dt": en.dt, "g1": en.g1, "g2": en.g2, "phi1": en.phi1, "kind": "qwv",
                             "fd": fd, "threshold": r.spec.threshold,
                             "amplification": r.amplification, "amplitude": a,
                             "amplitude_se": se, "snr": r.snr, "retained": r.retained_fraction})
                snr_rows.append({"label": en.label, "group": gname, "fd": fd, "snr": r.snr,
                                 "ccf_snr": base_snr})
        # strength dependence, only where first-measurement strengths differ
        first = [e for e in ens if e.pair == (0, 1)]
        gs = np.array([e.g1 for e in first])
        if len(set(gs)) >= 2:
            t_of = [templates[round(e.dt, 12)] for e in first]
            ccf_amps = [template_amplitude(e.ccf, t, e.ccf_per_shot, t != 0)
                        for e, t in zip(first, t_of)]
            strength[(gname, "ccf")] = strength_fit(gs, [a for a, _ in ccf_amps],
                                                    [s for _, s in ccf_amps])
            for fd in cfg.qwv.fd_grid:
                amps = [template_amplitude(e.results[fd].curve, t, e.results[fd].per_shot, t != 0)
                        for e, t in zip(first, t_of)]
                strength[(gname, f"qwv fd={fd:g}")] = strength_fit(gs, [a for a, _ in amps],
                                                                   [s for _, s in amps])
            if 0.0 in cfg.qwv.fd_grid:
                den = [per_shot_amplitudes(e.results[0.0].per_shot, t, t != 0)
                       for e, t in zip(first, t_of)]
                for fd in cfg.qwv.fd_grid:
                    num = [per_shot_amplitudes(e.results[fd].per_shot, t, t != 0)
                           for e, t in zip(first, t_of)]
                    r, se = slope_ratio(gs, num, den)
                    thr = first[0].results[fd].spec.threshold
                    ratios.append({"group": gname, "fd": fd, "threshold": thr,
                                   "theory": amplification(thr), "measured": r, "measured_se": se})
    return QWVReport(rows, strength, ratios, snr_rows, entries)


def qwv_van_hove(cfg: RunConfig, entries, fd=0.0) -> dict:
    """Per-group Van Hove matrices built from scale-normalised weak values."""
    out = {}
    by_group = {}
    for en in entries:
        by_group.setdefault(en.group, []).append(en)
    for g, ens in by_group.items():
        dts, vals, sems = [], [], []
        for en in ens:
            r = en.results[fd]
            scale = expected_scale(en.phi1, r.spec)
            curve = np.fft.fftshift(r.curve) / scale
            sem = np.fft.fftshift(r.sem) / scale
            mirror = mirror_index(len(curve))
            dts.append(en.dt)
            vals.append(0.5 * (curve + curve[mirror]))
            sems.append(0.5 * (sem + sem[mirror]))
        order = np.argsort(dts)
        dx = np.fft.fftshift(ens[0].dx)
        vh = VanHoveMatrix(dx, np.array(dts)[order], np.stack(vals)[order], np.stack(sems)[order])
        out[g] = merge_duplicate_delays(vh)
    return out


# -- writing -----------------------------------------------------------------

def write_products(outdir: Path, products: dict, cfg: RunConfig, physics: dict, plot=True):
    outdir.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    io.write(outdir / "products.wkc", products_to_container(products, cfg))
    for name, p in sorted(products.items()):
        vh, s = p.van_hove, p.structure
        tt, xx = np.meshgrid(vh.dt, vh.dx, indexing="ij")
        io.write_csv(outdir / f"van_hove_{name}.csv",
                     {"dt_s": tt, "dx_m": xx, "value": vh.values, "sem": vh.sem}, h)
        ww, kk = np.meshgrid(s.omega, s.k, indexing="ij")
        io.write_csv(outdir / f"dsf_{name}.csv", {"omega_rad_s": ww, "k_rad_m": kk, "S": s.values}, h)
        phys = physics[name]
        k, ridge, theory = dsf_ridge(s, phys.condensate, phys.k_na)
        io.write_csv(outdir / f"dsf_ridge_{name}.csv",
                     {"k_rad_m": k, "ridge_omega": ridge, "bogoliubov_omega": theory}, h)
        if plot:
            plots.van_hove(vh, outdir / f"van_hove_{name}.png", f"Van Hove ({name})")
            plots.structure_factor(s, phys.condensate, outdir / f"dsf_{name}.png", phys.k_na)


def write_fits(outdir: Path, reports: dict, cfg: RunConfig):
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for g, rep in sorted(reports.items()):
        rows += fit_rows(rep, g)
    if rows:
        io.write_csv(outdir / "fits.csv", _columns(rows), cfg.hash())
    return rows


def write_qwv(outdir: Path, rep: QWVReport, cfg: RunConfig, plot=True):
    outdir.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    io.write_csv(outdir / "qwv_amplitudes.csv", _columns(rep.rows), h)
    if rep.snr_rows:
        io.write_csv(outdir / "snr_vs_fd.csv", _columns(rep.snr_rows), h)
    if rep.ratios:
        io.write_csv(outdir / "amplification_vs_fd.csv", _columns(rep.ratios), h)
    if rep.strength:
        srows = [{"group": g, "kind": k, "slope": f.slope, "slope_se": f.slope_se,
                  "offset": f.offset, "offset_se": f.offset_se, "intercept": f.intercept,
                  "intercept_se": f.intercept_se, "chi2": f.chi2}
                 for (g, k), f in sorted(rep.strength.items())]
        io.write_csv(outdir / "amplitude_vs_g.csv", _columns(srows), h)
    c = io.TensorContainer(metadata={"kind": "qwv", "config_hash": h, "grid": _grid_meta(cfg),
                                     "producer": f"weakcorr {__version__}"})
    for en in rep.entries:
        key = f"{en.label}/{en.pair[0]}-{en.pair[1]}"
        c.add(f"{key}/dx", np.fft.fftshift(en.dx), ("dx",), "m")
        c.add(f"{key}/ccf", np.fft.fftshift(en.ccf), ("dx",), "atoms^2/pixel^2")
        for fd, r in en.results.items():
            c.add(f"{key}/qwv_fd{fd:g}", np.fft.fftshift(r.curve), ("dx",), "atoms/pixel")
            c.add(f"{key}/qwv_fd{fd:g}_sem", np.fft.fftshift(r.sem), ("dx",), "atoms/pixel")
    io.write(outdir / "qwv.wkc", c)
    if plot:
        for en in rep.entries:
            dx = np.fft.fftshift(en.dx)
            series = {f"fd={fd:g}": np.fft.fftshift(r.curve) for fd, r in en.results.items()}
            plots.curves(dx, series, outdir / f"qwv_{en.label}_{en.pair[0]}{en.pair[1]}.png",
                         "conditional mean", f"{en.label} M{en.pair[0] + 1}-M{en.pair[1] + 1}")
        if rep.ratios:
            fd = np.array([r["fd"] for r in rep.ratios])
            plots.xy(fd, {"measured": np.array([r["measured"] for r in rep.ratios]),
                          "theory": np.array([r["theory"] for r in rep.ratios])},
                     outdir / "amplification_vs_fd.png", "discarded fraction", "amplification",
                     errors={"measured": np.array([r["measured_se"] for r in rep.ratios])})


def hash_outputs(outdir: Path) -> dict:
    """sha256 of every data file (containers and CSV) under ``outdir``."""
    out = {}
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.suffix in (".wkc", ".csv"):
            out[str(p.relative_to(outdir))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


# -- reproductions -------------------------------------------------------------

FIGURES = ("fig2", "fig3", "fig4")


def reproduce(name: str, outdir, cfg: RunConfig, workers=None, plot=True) -> dict:
    """Run one bundled figure recipe end to end; returns the output hashes."""
    if name not in FIGURES:
        raise InvalidArgument(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ensembles = simulate(cfg, workers)
    physics = {g: m[0].physics for g, m in groups(ensembles).items()}
    summary = {"figure": name, "config_hash": cfg.hash()}
    if name == "fig2":
        products = analyze(cfg, ensembles, release=True)
        write_products(outdir, products, cfg, physics, plot)
        reports = {g: fit_van_hove(cfg, p.van_hove, physics[g]) for g, p in products.items()}
        rows = write_fits(outdir, reports, cfg)
        summary["fits"] = rows
    elif name == "fig3":
        rep = qwv_report(cfg, ensembles, release=True)
        write_qwv(outdir, rep, cfg, plot)
        summary["ratios"] = rep.ratios
    else:
        rep = qwv_report(cfg, ensembles, release=True)
        write_qwv(outdir, rep, cfg, plot)
        vhs = qwv_van_hove(cfg, rep.entries, 0.0)
        reports = {g: fit_van_hove(cfg, vh, physics[g]) for g, vh in vhs.items()}
        rows = write_fits(outdir, reports, cfg)
        pts = [(physics[g].condensate.condensate_fraction, rep_.global_fit.params.c,
                rep_.global_fit.stderr("c")) for g, rep_ in sorted(reports.items())
               if rep_.global_fit is not None]
        if pts:
            rc, c, ce = map(np.array, zip(*pts))
            w = next(iter(physics.values())).condensate.omega_ratio_sq
            sfit = fit_sound_vs_rc(rc, c, w, ce)
            io.write_csv(outdir / "sound_vs_rc.csv",
                         {"r_c": rc, "c": c, "c_se": ce, "model": sfit.curve(rc)}, cfg.hash())
            summary["c0"] = sfit.c0
            summary["c0_se"] = sfit.c0_err
        summary["fits"] = rows
        if plot:
            for g, vh in vhs.items():
                plots.van_hove(vh, outdir / f"qwv_van_hove_{g}.png", f"QWV Van Hove ({g})")
    hashes = hash_outputs(outdir)
    (outdir / "hashes.json").write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")
    summary["hashes"] = hashes
    return summary
