"""Experiment configuration: presets, INI files and command-line overrides.

A config file is plain ``key = value`` text grouped in sections::

    [experiment]
    preset = l96-default
    algorithm = rni
    t_final = 30

    [model]
    F = 5

Section names are only for readability, except ``[model]`` (preset-specific
model constants) and ``[sweep]`` (comma-separated axis values).
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError

__all__ = [
    "PRESETS",
    "MODEL_KEYS",
    "ALGORITHMS",
    "ExperimentConfig",
    "from_preset",
    "load_config",
    "normalize_algorithm",
    "parse_axes",
]

ALGORITHMS = ("rni", "rni-plus", "rls", "none")
MODES = ("simulate", "assimilate", "estimate")
_ALIASES = {"rni+": "rni-plus", "rniplus": "rni-plus"}

# preset defaults for ExperimentConfig fields
PRESETS: dict[str, dict] = {
    "l96-default": dict(algorithm="rni", unknowns="slow:0-19", mu=50.0, update_interval=0.1, fd_order=3,
                        dt=1e-3, t_final=30.0, record_interval=0.1, initial_guess=1.0),
    "rbc-default": dict(algorithm="rls", mu1=8000.0, mu2=8000.0, n_obs=16, update_interval=0.05, fd_order=3,
                        dt=1e-5, t_final=0.5, record_interval=0.05),
    "scalar-toy": dict(algorithm="rls", mu=10.0, update_interval=5.0, fd_order=3, dt=1e-2, t_final=150.0,
                       record_interval=5.0, initial_guess=1.0),
}

# preset-specific model constants accepted in [model] / overrides, with defaults
MODEL_KEYS: dict[str, dict] = {
    "l96-default": {"K": 40, "J": 5, "F": 5.0, "observed_fast": "", "scheme": "rk4-fixed"},
    "rbc-default": {"Ra": 1e5, "Pr": 1.0, "Ra_proxy": 9e4, "Pr_proxy": 1.1, "Nx": 128, "Nz": 64,
                    "spinup_time": 0.2, "form": "", "cache_dir": "", "snapshots": 1},
    "scalar-toy": {"lambda_true": 2.0},
}


def normalize_algorithm(name: str) -> str:
    name = str(name).strip().lower()
    name = _ALIASES.get(name, name)
    if name not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {name!r}; expected one of rni, rni+, rls, none")
    return name


@dataclass
class ExperimentConfig:
    preset: str = "l96-default"
    mode: str = "estimate"
    algorithm: str = "rni"
    unknowns: str = ""
    mu: float = 50.0
    mu1: float = 8000.0
    mu2: float = 8000.0
    n_obs: int = 4
    update_interval: float = 0.1
    fd_order: int = 3
    dt: float = 1e-3
    t_final: float = 30.0
    seed: int = 0
    output_dir: str = ""
    record_interval: float = 0.1
    initial_guess: float = 1.0
    cond_threshold: float = 1e8
    max_skips: int = 100
    test_mode: bool = False
    twin_init: bool = False
    summary_window: tuple = (0.8, 1.0)
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> "ExperimentConfig":
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}; expected one of {tuple(PRESETS)}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        self.algorithm = normalize_algorithm(self.algorithm)
        for name in ("update_interval", "dt", "t_final", "record_interval"):
            if not float(getattr(self, name)) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("mu", "mu1", "mu2"):
            if float(getattr(self, name)) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.fd_order not in (1, 2, 3):
            raise ConfigurationError(f"fd_order must be 1, 2 or 3, got {self.fd_order!r}")
        if self.n_obs < 1:
            raise ConfigurationError("n_obs must be >= 1")
        lo, hi = self.summary_window
        if not 0 <= lo < hi <= 1:
            raise ConfigurationError("summary_window must satisfy 0 <= start < end <= 1")
        allowed = MODEL_KEYS[self.preset]
        for key in self.overrides:
            if key not in allowed:
                raise ConfigurationError(f"unknown model key {key!r} for preset {self.preset}; allowed: {sorted(allowed)}")
        return self

    def model(self, key: str):
        """Model constant from overrides, falling back to the preset default."""
        default = MODEL_KEYS[self.preset][key]
        value = self.overrides.get(key, default)
        try:
            return type(default)(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"model key {key!r}: cannot convert {value!r}") from exc

    def replace(self, **changes) -> "ExperimentConfig":
        overrides = dict(self.overrides)
        fields = {f.name for f in dataclasses.fields(self)}
        direct = {}
        for k, v in changes.items():
            if k in fields:
                direct[k] = v
            else:
                overrides[k] = v
        return dataclasses.replace(self, overrides=overrides, **direct)

    def as_items(self) -> list[tuple[str, str]]:
        items = []
        for f in dataclasses.fields(self):
            if f.name == "overrides":
                continue
            items.append((f.name, _fmt(getattr(self, f.name))))
        for k in sorted(self.overrides):
            items.append((f"model.{k}", _fmt(self.overrides[k])))
        return items


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    if not isinstance(value, str):
        return value
    kind = _FIELD_TYPES[name]
    text = value.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"{name}: cannot parse {value!r} as {kind}") from exc
    return text


def from_preset(preset: str, **changes) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; expected one of {tuple(PRESETS)}")
    values = dict(PRESETS[preset])
    values["preset"] = preset
    direct, overrides = {}, {}
    for k, v in changes.items():
        (direct if k in _FIELD_TYPES else overrides)[k] = v
    values.update({k: _coerce(k, v) for k, v in direct.items() if v is not None})
    overrides.update(values.pop("overrides", {}) if isinstance(values.get("overrides"), dict) else {})
    return ExperimentConfig(overrides=overrides, **values)


def parse_axes(section) -> dict[str, list]:
    """``key = v1, v2, ...`` lines to a dict of value lists (values kept as text)."""
    axes = {}
    for key, text in section.items():
        values = [v.strip() for v in str(text).split(",") if v.strip()]
        if not values:
            raise ConfigurationError(f"sweep axis {key!r} is empty")
        axes[key] = values
    return axes


def load_config(path, preset: str | None = None, **changes):
    """Read an INI file; returns ``(config, sweep_axes)``.

    Precedence: preset defaults < file < ``changes`` (command line).
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    direct, model, axes = {}, {}, {}
    for name in parser.sections():
        sec = parser[name]
        if name == "sweep":
            axes = parse_axes(sec)
        elif name == "model":
            model.update(sec)
        else:
            for key, value in sec.items():
                if key not in _FIELD_TYPES or key == "overrides":
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{name}]")
                direct[key] = value
    chosen = preset or direct.pop("preset", None) or "l96-default"
    direct.pop("preset", None)
    direct.update({k: v for k, v in changes.items() if v is not None})
    direct.update(model)
    return from_preset(chosen, **direct), axes
