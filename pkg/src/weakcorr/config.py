"""YAML run configuration.

Keys carry their unit as a suffix (``_um``, ``_ms``, ``_nK``, ``_mm_s``);
everything is converted to SI when the physics and analysis objects are
built. Unknown keys anywhere in the tree are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from weakcorr.analysis.pipeline import AnalysisSettings
from weakcorr.model import MM_PER_S, MS, NK, UM, CondensateParams, InvalidArgument, ProbeParams
from weakcorr.simulator import Grid, MeasurementPulse, PhysicsConfig


class ConfigError(InvalidArgument):
    """Configuration is missing, malformed or fails validation."""


@dataclass
class PhysicsBlock:
    atom_number: float = 2.0e5
    sound_speed_mm_s: float = 1.35
    condensate_fraction: float = 1.0
    temperature_nK: float = 20.0
    tf_radius_x_um: float = 45.0
    tf_radius_z_um: float = 3.0
    omega_ratio_sq: float = 1.0
    detuning_ratio: float = 124.3
    intensity_ratio: float = 12.0
    pulse_duration_us: float = 16.4
    numerical_aperture: float = 0.32
    forward_strength: float = 0.0
    forward_decay_rate: float = 2000.0  # 1/s
    number_jitter: float = 0.0
    center_jitter_um: float = 0.0


@dataclass
class PulseBlock:
    time_ms: float
    g: float
    technical_noise: float | None = None


@dataclass
class SequenceBlock:
    pulses: list
    label: str = ""
    group: str = "main"  # sequences sharing a group are analysed together
    physics: dict = field(default_factory=dict)  # per-sequence overrides of the physics block


@dataclass
class SimulationBlock:
    nx: int = 256
    ny: int = 64
    pitch_um: float = 0.5
    shots: int = 128
    seed: int = 0
    sequences: list = field(default_factory=list)
    keep_noise: bool = False


@dataclass
class AnalysisBlock:
    window_margin: float = 1.1
    window_half_height_um: float = 8.0
    taper: float = 0.2
    pca_components: int = 7
    small_k_radius_um_inv: float | None = None  # optics convention, 1/um
    small_k_retained: int | None = None
    small_k_target: float = 0.87
    small_k_basis: int = 512
    max_dx_um: float = 15.0


@dataclass
class QWVBlock:
    fd_grid: list = field(default_factory=lambda: [0.0, 0.4, 0.8])
    mode: str = "sign-weighted"
    pairs: str = "adjacent"  # adjacent | all


@dataclass
class FitBlock:
    mode: str = "global"  # global | individual | both
    exclusion_um: float = 0.0
    weighted: bool = True
    dispersion: bool = True


@dataclass
class RunConfig:
    physics: PhysicsBlock = field(default_factory=PhysicsBlock)
    simulation: SimulationBlock = field(default_factory=SimulationBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    qwv: QWVBlock = field(default_factory=QWVBlock)
    fit: FitBlock = field(default_factory=FitBlock)
    name: str = ""

    # -- SI views --------------------------------------------------------

    def grid(self) -> Grid:
        s = self.simulation
        return Grid(s.nx, s.ny, s.pitch_um * UM)

    def physics_config(self, overrides: dict | None = None) -> PhysicsConfig:
        p = dataclasses.replace(self.physics, **(overrides or {}))
        cond = CondensateParams(
            atom_number=p.atom_number,
            sound_speed=p.sound_speed_mm_s * MM_PER_S,
            condensate_fraction=p.condensate_fraction,
            tf_radius_x=p.tf_radius_x_um * UM,
            tf_radius_z=p.tf_radius_z_um * UM,
            omega_ratio_sq=p.omega_ratio_sq,
            temperature=p.temperature_nK * NK,
        )
        grid = self.grid()
        probe = ProbeParams(p.detuning_ratio, p.intensity_ratio, p.pulse_duration_us * 1e-6,
                            p.numerical_aperture, grid.pitch**2)
        return PhysicsConfig(cond, probe, grid, p.forward_strength, p.forward_decay_rate,
                             p.number_jitter, p.center_jitter_um * UM)

    def sequences(self):
        """[(label, group, PhysicsConfig, [MeasurementPulse, ...]), ...]"""
        out = []
        for i, seq in enumerate(self.simulation.sequences):
            pulses = [MeasurementPulse(p.time_ms * MS, p.g,
                                       math.inf if p.technical_noise is None else p.technical_noise)
                      for p in seq.pulses]
            out.append((seq.label or f"seq{i}", seq.group, self.physics_config(seq.physics), pulses))
        return out

    def analysis_settings(self) -> AnalysisSettings:
        a = self.analysis
        r = None if a.small_k_radius_um_inv is None else 2 * math.pi * a.small_k_radius_um_inv / UM
        return AnalysisSettings(a.window_margin, a.window_half_height_um * UM, a.taper,
                                a.pca_components, r, a.small_k_retained, a.small_k_target,
                                a.small_k_basis, a.max_dx_um * UM)

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {
    "physics": PhysicsBlock,
    "simulation": SimulationBlock,
    "analysis": AnalysisBlock,
    "qwv": QWVBlock,
    "fit": FitBlock,
}


def _coerce(value, annotation, where):
    # YAML 1.1 reads "2.0e5" as a string; numeric fields accept it anyway
    kind = str(annotation).split("|")[0].strip()
    if value is None or kind not in ("float", "int", "bool"):
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if kind == "int":
        if out != int(out):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(out)
    return out


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(types))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    data = {k: _coerce(v, types[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(data) -> RunConfig:
    if not isinstance(data, dict) or not data:
        raise ConfigError("configuration is empty")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kw = {"name": str(data.get("name", ""))}
    for key, cls in _NESTED.items():
        kw[key] = _build(cls, data.get(key), key)
    sim = kw["simulation"]
    seqs = []
    for i, raw in enumerate(sim.sequences or []):
        seq = _build(SequenceBlock, raw, f"simulation.sequences[{i}]")
        seq.pulses = [_build(PulseBlock, p, f"simulation.sequences[{i}].pulses[{j}]")
                      for j, p in enumerate(seq.pulses or [])]
        where = f"simulation.sequences[{i}].physics"
        if not isinstance(seq.physics, dict):
            raise ConfigError(f"{where}: expected a mapping")
        phys_types = {f.name: f.type for f in dataclasses.fields(PhysicsBlock)}
        bad = sorted(set(seq.physics) - set(phys_types))
        if bad:
            raise ConfigError(f"{where}: unknown key(s) {', '.join(bad)}")
        seq.physics = {k: _coerce(v, phys_types[k], f"{where}.{k}") for k, v in seq.physics.items()}
        seqs.append(seq)
    sim.sequences = seqs
    cfg = RunConfig(**kw)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    s = cfg.simulation
    if s.shots < 2:
        raise ConfigError("simulation.shots must be at least 2")
    if not s.sequences:
        raise ConfigError("simulation.sequences must list at least one pulse sequence")
    for i, seq in enumerate(s.sequences):
        if len(seq.pulses) < 2:
            raise ConfigError(f"simulation.sequences[{i}] needs at least two pulses")
    if cfg.fit.mode not in ("global", "individual", "both"):
        raise ConfigError(f"fit.mode must be global, individual or both, not {cfg.fit.mode!r}")
    if cfg.qwv.pairs not in ("adjacent", "all"):
        raise ConfigError("qwv.pairs must be adjacent or all")
    if any(not 0 <= f < 1 for f in cfg.qwv.fd_grid):
        raise ConfigError("qwv.fd_grid entries must lie in [0, 1)")
    try:
        labels = [lab for lab, _, _, _ in cfg.sequences()]
        if len(set(labels)) != len(labels):
            raise ConfigError("sequence labels must be unique")
        for _, _, phys, _ in cfg.sequences():
            phys.imaging  # noqa: B018 - builds and validates geometry
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)


def apply_overrides(cfg: RunConfig, shots=None, seed=None) -> RunConfig:
    """Command-line flags take precedence over config keys."""
    sim = cfg.simulation
    if shots is not None:
        sim = dataclasses.replace(sim, shots=int(shots))
    if seed is not None:
        sim = dataclasses.replace(sim, seed=int(seed))
    out = dataclasses.replace(cfg, simulation=sim)
    validate(out)
    return out


def bundled(name: str) -> RunConfig:
    """Load one of the packaged reproduction configs (fig2, fig3, fig4)."""
    from importlib import resources

    res = resources.files("weakcorr") / "configs" / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return from_dict(yaml.safe_load(res.read_text()))
