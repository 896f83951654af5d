"""Experiment configuration: an INI file with fixed sections and keys.

Numbers may be written as plain floats, ``inf``, or simple arithmetic on
``pi`` (``2*pi*1.1e6``, ``pi/2``).  Unknown sections or keys are errors.
The config seed is the only source of randomness: the noise seed and the
readout shot-noise stream are both derived from it.
"""
from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .lightshift import TrapConfig
from .noise import AnalyticErrorParams, NoiseConfig

SEQUENCES = ("single_gate", "decay", "spacing_scan", "budget", "certify")
FORMATS = ("json", "csv", "both")


class ConfigError(ValueError):
    pass


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "inf": math.inf}


def parse_number(text: str) -> float:
    """Evaluate a float literal or arithmetic expression over pi."""
    src = str(text).strip().lower()
    if not src:
        raise ConfigError("empty number")
    try:
        return float(src)
    except ValueError:
        pass
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        return float(ev(tree))
    except ZeroDivisionError as exc:
        raise ConfigError(f"division by zero in {text!r}") from exc


def _format_number(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


@dataclass(frozen=True)
class LightShiftRequest:
    """How to obtain the force parameters: target phase (None = optimal
    entangling phase for the dimension) and which quantity is fixed."""
    theta: float | None = None
    eta: float = 0.17
    gate_time: float = 35e-6
    fix: str = "delta"
    shift: float | None = None
    n_max: int = 20

    def __post_init__(self):
        if self.fix not in ("delta", "shift"):
            raise ConfigError("lightshift.fix must be 'delta' or 'shift'")
        if self.fix == "shift" and self.shift is None:
            raise ConfigError("lightshift.shift is required when fix = shift")
        if self.gate_time <= 0 or self.eta <= 0:
            raise ConfigError("gate_time and eta must be positive")
        if self.n_max < 1:
            raise ConfigError("lightshift.n_max must be >= 1")


@dataclass(frozen=True)
class SpacingScanConfig:
    points: int = 181
    start: float = 0.0
    stop: float = 2 * math.pi
    pulse_time: float = 35e-6

    def __post_init__(self):
        if self.points < 1:
            raise ConfigError("spacing.points must be >= 1")
        if self.pulse_time < 0:
            raise ConfigError("spacing.pulse_time must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    dimension: int = 2
    sequence: str = "decay"
    n_gates: int = 9
    shots: int = 500
    phases: int = 12
    seed: int = 1
    dims: tuple = (2, 3, 4, 5)
    workers: int = 1
    motion_n_max: int | None = None
    joint_budget: bool = False
    certify_input: str | None = None
    trap: TrapConfig = field(default_factory=TrapConfig)
    lightshift: LightShiftRequest = field(default_factory=LightShiftRequest)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    analytic: AnalyticErrorParams = field(default_factory=AnalyticErrorParams)
    spacing: SpacingScanConfig = field(default_factory=SpacingScanConfig)
    output_dir: str = "out"
    output_format: str = "both"

    def __post_init__(self):
        if not 2 <= self.dimension <= 5:
            raise ConfigError("dimension must lie in 2..5")
        if any(not 2 <= d <= 5 for d in self.dims) or not self.dims:
            raise ConfigError("dims must be a non-empty list within 2..5")
        if self.sequence not in SEQUENCES:
            raise ConfigError(f"sequence must be one of {SEQUENCES}")
        if self.output_format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.n_gates < 1 or self.shots < 0 or self.phases < 3 or self.workers < 1:
            raise ConfigError("n_gates >= 1, shots >= 0, phases >= 3 and workers >= 1 required")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    # randomness ---------------------------------------------------------
    def _children(self):
        return np.random.SeedSequence(self.seed).spawn(2)

    @property
    def noise_seed(self) -> int:
        return int(self._children()[0].generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def readout_rng(self) -> np.random.Generator:
        return np.random.default_rng(self._children()[1])

    def resolved_noise(self) -> NoiseConfig:
        return replace(self.noise, rng_seed=self.noise_seed)

    # overrides ----------------------------------------------------------
    def with_overrides(self, seed=None, out=None, fmt=None, samples=None, dimension=None):
        cfg = self
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if out is not None:
            kw["output_dir"] = str(out)
        if fmt is not None:
            kw["output_format"] = fmt
        if dimension is not None:
            kw["dimension"] = int(dimension)
            kw["dims"] = (int(dimension),)
        if samples is not None:
            kw["noise"] = replace(cfg.noise, n_samples=int(samples))
        try:
            return replace(cfg, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def as_dict(self) -> dict:
        """Resolved configuration, section by section, as written in files."""
        out = {}
        for sec, spec in _SCHEMA.items():
            out[sec] = {k: _dump(getter(self), kind) for k, (kind, getter, _) in spec.items()}
        return out


# --- schema --------------------------------------------------------------

def _dump(v, kind):
    if v is None:
        return "none"
    if kind == "float":
        return _format_number(v)
    if kind == "floats":
        return ", ".join(_format_number(x) for x in v)
    if kind == "ints":
        return ", ".join(str(int(x)) for x in v)
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


def _load(text: str, kind: str):
    t = text.strip()
    if t.lower() in ("none", "auto", "") and kind in ("float?", "int?", "str?"):
        return None
    try:
        if kind in ("float", "float?"):
            return parse_number(t)
        if kind in ("int", "int?"):
            v = parse_number(t)
            if v != int(v):
                raise ConfigError(f"expected an integer, got {text!r}")
            return int(v)
        if kind == "floats":
            return tuple(parse_number(x) for x in t.split(",") if x.strip())
        if kind == "ints":
            return tuple(int(parse_number(x)) for x in t.split(",") if x.strip())
        if kind == "bool":
            if t.lower() in ("true", "yes", "1", "on"):
                return True
            if t.lower() in ("false", "no", "0", "off"):
                return False
            raise ConfigError(f"expected a boolean, got {text!r}")
    except (ValueError, OverflowError) as exc:
        raise ConfigError(f"bad value {text!r}: {exc}") from exc
    return t


def _noise_keys():
    kinds = {"n_samples": "int", "transition_sensitivity": "floats"}
    out = {}
    for f in fields(NoiseConfig):
        if f.name == "rng_seed":
            continue
        kind = kinds.get(f.name, "float")
        out[f.name] = (kind, (lambda c, n=f.name: getattr(c.noise, n)), ("noise", f.name))
    return out


_SCHEMA = {
    "experiment": {
        "dimension": ("int", lambda c: c.dimension, ("", "dimension")),
        "sequence": ("str", lambda c: c.sequence, ("", "sequence")),
        "n_gates": ("int", lambda c: c.n_gates, ("", "n_gates")),
        "shots": ("int", lambda c: c.shots, ("", "shots")),
        "phases": ("int", lambda c: c.phases, ("", "phases")),
        "seed": ("int", lambda c: c.seed, ("", "seed")),
        "dims": ("ints", lambda c: c.dims, ("", "dims")),
        "workers": ("int", lambda c: c.workers, ("", "workers")),
        "motion_n_max": ("int?", lambda c: c.motion_n_max, ("", "motion_n_max")),
        "joint_budget": ("bool", lambda c: c.joint_budget, ("", "joint_budget")),
        "certify_input": ("str?", lambda c: c.certify_input, ("", "certify_input")),
    },
    "trap": {
        "omega_com": ("float", lambda c: c.trap.omega_com, ("trap", "omega_com")),
        "omega_breathing": ("float?", lambda c: c.trap.omega_breathing, ("trap", "omega_breathing")),
        "ion_spacing_phase": ("float", lambda c: c.trap.ion_spacing_phase, ("trap", "ion_spacing_phase")),
    },
    "lightshift": {
        "theta": ("float?", lambda c: c.lightshift.theta, ("lightshift", "theta")),
        "eta": ("float", lambda c: c.lightshift.eta, ("lightshift", "eta")),
        "gate_time": ("float", lambda c: c.lightshift.gate_time, ("lightshift", "gate_time")),
        "fix": ("str", lambda c: c.lightshift.fix, ("lightshift", "fix")),
        "shift": ("float?", lambda c: c.lightshift.shift, ("lightshift", "shift")),
        "n_max": ("int", lambda c: c.lightshift.n_max, ("lightshift", "n_max")),
    },
    "noise": _noise_keys(),
    "analytic": {
        "qubit_scattering_error": ("float", lambda c: c.analytic.qubit_scattering_error,
                                   ("analytic", "qubit_scattering_error")),
        "d_state_lifetime": ("float", lambda c: c.analytic.d_state_lifetime,
                             ("analytic", "d_state_lifetime")),
    },
    "spacing": {
        "points": ("int", lambda c: c.spacing.points, ("spacing", "points")),
        "start": ("float", lambda c: c.spacing.start, ("spacing", "start")),
        "stop": ("float", lambda c: c.spacing.stop, ("spacing", "stop")),
        "pulse_time": ("float", lambda c: c.spacing.pulse_time, ("spacing", "pulse_time")),
    },
    "output": {
        "dir": ("str", lambda c: c.output_dir, ("", "output_dir")),
        "format": ("str", lambda c: c.output_format, ("", "output_format")),
    },
}

_SUBCLASSES = {"trap": TrapConfig, "lightshift": LightShiftRequest, "noise": NoiseConfig,
               "analytic": AnalyticErrorParams, "spacing": SpacingScanConfig}


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    top = {}
    sub = {k: {} for k in _SUBCLASSES}
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            kind, _, (target, name) = _SCHEMA[sec][key]
            val = _load(raw, kind)
            if target:
                sub[target][name] = val
            else:
                top[name] = val
    try:
        for name, cls in _SUBCLASSES.items():
            kw = sub[name]
            if name == "noise" and "transition_sensitivity" in kw:
                kw["transition_sensitivity"] = tuple(kw["transition_sensitivity"])
            top[name] = cls(**kw)
        return ExperimentConfig(**top)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def dump_config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, vals in cfg.as_dict().items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in vals.items())
        lines.append("")
    return "\n".join(lines)
