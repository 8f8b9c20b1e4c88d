"""Run configuration: a sectioned ``key = value`` text file.

Sections are ``model``, ``dynamics``, ``ensemble`` and ``output``.  Unknown
sections or keys are rejected, and :func:`dump_config` writes the complete
effective configuration so that ``load(dump(cfg)) == cfg``.

Lists are comma separated; slit intervals are written ``start:stop``.  All
quantities are dimensionless (hbar = electron mass = 1, lengths in units of
the grid spacing unless ``spacing`` says otherwise).
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields, replace

import numpy as np

from .doubleslit import CavityGeometry, DoubleSlitModel, PixelArray
from .exceptions import ConfigurationError
from .lindblad import LindbladGenerator
from .unravel import SpectralStep, WaitingTime

MODEL_KINDS = ("double_slit", "two_level")
SAMPLERS = ("waiting", "spectral")


@dataclass(frozen=True)
class ModelSection:
    kind: str = "double_slit"
    alpha: float = 1.0
    # two-level model: H = pauli_z * sigma_z, jump |1><0|
    pauli_z: float = 0.0
    # cavity
    # default cavity: 8 columns along the beam, 16 rows across it, wall at
    # column 2 (a narrow gun chamber), two 3-row slits and 8 pixels on the screen
    grid_shape: tuple = (8, 16)
    spacing: float = 1.0
    wall_column: int = 2
    slits: tuple = ((1, 4), (12, 15))
    n_pixels: int = 8
    kernel: str = "gaussian"
    kernel_range: float = 0.5
    kernel_amplitude: float = 1.0
    # initial state: "wavepacket", "pixel:<s>" (cavity) or "0", "1", "+" (two-level)
    initial_state: str = "wavepacket"
    packet_center: tuple = (1.5, 8.5)
    packet_width: float = 0.75
    packet_momentum: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class DynamicsSection:
    dt: float = 0.05
    horizon: float = 400.0
    t_max: float = 400.0
    ode_dt: float = 0.01
    sampler: str = "waiting"
    bisection_tol: float = 1e-9
    snapshot_interval: float = 1.0


@dataclass(frozen=True)
class EnsembleSection:
    n_trajectories: int = 1000
    master_seed: int = 20240611
    workers: int = 1
    snapshot_times: tuple = ()
    keep_records: bool = False


@dataclass(frozen=True)
class OutputSection:
    directory: str = "qjumps-out"
    formats: tuple = ("csv",)


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = ModelSection()
    dynamics: DynamicsSection = DynamicsSection()
    ensemble: EnsembleSection = EnsembleSection()
    output: OutputSection = OutputSection()

    def with_overrides(self, seed=None, workers=None, directory=None) -> "RunConfig":
        ens, out = self.ensemble, self.output
        if seed is not None:
            ens = replace(ens, master_seed=int(seed))
        if workers is not None:
            ens = replace(ens, workers=int(workers))
        if directory is not None:
            out = replace(out, directory=str(directory))
        cfg = replace(self, ensemble=ens, output=out)
        validate(cfg)
        return cfg


_SECTIONS = {"model": ModelSection, "dynamics": DynamicsSection,
             "ensemble": EnsembleSection, "output": OutputSection}


# --------------------------------------------------------------------------
# value encoding
# --------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def _encode(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _fmt_float(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{a}:{b}" for a, b in value)
        return ", ".join(_encode(v) for v in value)
    return str(value)


def _split(text: str):
    return [t.strip() for t in text.split(",") if t.strip()]


def _decode(name: str, default, text: str):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if name == "slits":
            out = []
            for item in _split(text):
                a, b = item.split(":")
                out.append((int(a), int(b)))
            return tuple(out)
        if name == "grid_shape":
            return tuple(int(v) for v in _split(text))
        if name in ("packet_center", "packet_momentum", "snapshot_times"):
            return tuple(float(v) for v in _split(text))
        if isinstance(default, tuple):
            return tuple(_split(text))
        return text.strip()
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {name} = {text!r}") from exc


# --------------------------------------------------------------------------
# load / dump
# --------------------------------------------------------------------------

def loads(text: str) -> RunConfig:
    """Parse configuration text; missing keys take their defaults."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigurationError(f"unknown section [{name}]")
        cls = _SECTIONS[name]
        defaults = cls()
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigurationError(f"unknown key {name}.{key}")
            values[key] = _decode(key, getattr(defaults, key), raw)
        sections[name] = cls(**values)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc


def dumps(cfg: RunConfig) -> str:
    """Complete effective configuration in canonical form."""
    lines = []
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(cls):
            lines.append(f"{f.name} = {_encode(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()


# --------------------------------------------------------------------------
# validation and construction
# --------------------------------------------------------------------------

def validate(cfg: RunConfig) -> None:
    """Re-check every section; building the model re-validates geometry and pixels."""
    m, d, e = cfg.model, cfg.dynamics, cfg.ensemble
    if m.kind not in MODEL_KINDS:
        raise ConfigurationError(f"model.kind must be one of {MODEL_KINDS}, got {m.kind!r}")
    if m.alpha < 0:
        raise ConfigurationError("model.alpha must be >= 0")
    if d.sampler not in SAMPLERS:
        raise ConfigurationError(f"dynamics.sampler must be one of {SAMPLERS}")
    for key in ("dt", "horizon", "t_max", "ode_dt", "bisection_tol", "snapshot_interval"):
        if not getattr(d, key) > 0:
            raise ConfigurationError(f"dynamics.{key} must be positive")
    if d.horizon < d.dt or d.horizon < d.ode_dt:
        raise ConfigurationError("dynamics.horizon must be at least one step")
    if e.n_trajectories < 1 or e.workers < 1:
        raise ConfigurationError("ensemble.n_trajectories and ensemble.workers must be positive")
    if not 0 <= e.master_seed < 2 ** 64:
        raise ConfigurationError("ensemble.master_seed must be a 64-bit unsigned integer")
    for t in e.snapshot_times:
        if not 0 <= t <= d.horizon:
            raise ConfigurationError(f"snapshot time {t} outside [0, {d.horizon}]")
    bad = set(cfg.output.formats) - {"csv", "records"}
    if bad:
        raise ConfigurationError(f"unsupported output formats {sorted(bad)}")
    build_model(cfg)


def sampler_mode(cfg: RunConfig):
    d = cfg.dynamics
    if d.sampler == "spectral":
        return SpectralStep(d.dt)
    return WaitingTime(d.ode_dt, d.bisection_tol)


@dataclass
class BuiltModel:
    """Generator, initial state and histogram bins for a configuration."""

    generator: LindbladGenerator
    psi0: np.ndarray
    bins: tuple
    rows: tuple
    cavity: DoubleSlitModel | None = None


def _two_level(m: ModelSection) -> BuiltModel:
    h = m.pauli_z * np.diag([1.0, -1.0]).astype(complex)
    t = np.array([[0, 0], [1, 0]], dtype=complex)
    gen = LindbladGenerator(h, m.alpha, [t])
    states = {"0": [1, 0], "1": [0, 1], "+": [1 / np.sqrt(2), 1 / np.sqrt(2)]}
    if m.initial_state not in states:
        raise ConfigurationError(f"two-level initial_state must be one of {sorted(states)}")
    return BuiltModel(gen, np.array(states[m.initial_state], dtype=complex), (1,), (1,))


def _cavity(m: ModelSection) -> BuiltModel:
    wall = m.wall_column if m.wall_column >= 0 else None
    geom = CavityGeometry(m.grid_shape, m.spacing, wall, m.slits if wall is not None else ())
    pixels = PixelArray.evenly_spaced(geom, m.n_pixels, m.kernel_range, m.kernel_amplitude,
                                      m.kernel)
    model = DoubleSlitModel(geom, pixels, m.alpha)
    if m.initial_state == "wavepacket":
        psi = model.wavepacket(m.packet_center, m.packet_width, m.packet_momentum)
    elif m.initial_state.startswith("pixel:"):
        s = int(m.initial_state.split(":", 1)[1])
        if not 0 <= s < model.n_pixels:
            raise ConfigurationError(f"no pixel {s}")
        psi = model.bound_state(s)
    else:
        raise ConfigurationError("cavity initial_state must be 'wavepacket' or 'pixel:<index>'")
    bins = tuple(range(model.n_grid, model.dim))
    return BuiltModel(model.generator, psi, bins, tuple(model.pixel_rows()), model)


def build_model(cfg: RunConfig) -> BuiltModel:
    if cfg.model.kind == "two_level":
        return _two_level(cfg.model)
    return _cavity(cfg.model)


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def preset(name: str) -> RunConfig:
    """Built-in configurations: ``double_slit``, ``double_slit_large`` and ``two_level``."""
    if name == "double_slit":
        return RunConfig()
    if name == "double_slit_large":
        return RunConfig(
            model=ModelSection(grid_shape=(64, 128), wall_column=16, slits=((54, 60), (69, 75)),
                               n_pixels=32, kernel="gaussian", kernel_range=1.5,
                               packet_center=(8.0, 64.5), packet_width=6.0,
                               packet_momentum=(1.0, 0.0)),
            dynamics=DynamicsSection(dt=0.05, horizon=200.0, t_max=200.0, ode_dt=0.05),
            ensemble=EnsembleSection(n_trajectories=10000))
    if name == "two_level":
        return RunConfig(
            model=ModelSection(kind="two_level", alpha=1.0, initial_state="0"),
            dynamics=DynamicsSection(dt=1e-3, horizon=10.0, t_max=10.0, ode_dt=1e-2),
            ensemble=EnsembleSection(n_trajectories=10000, snapshot_times=(0.5, 1.0, 2.0)))
    raise ConfigurationError(f"unknown preset {name!r}; choose double_slit, double_slit_large "
                             "or two_level")
