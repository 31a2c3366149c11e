"""Run configuration: one versioned JSON document covering every stage.

Unknown keys are rejected. Values may be overridden from the command line
with dotted paths, e.g. ``shape.iterations=500``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .appearance import AppearanceConfig
from .errors import ConfigError
from .pipeline import ProviderConfig
from .register import AlignConfig, IcpConfig, IterSchedule, RansacConfig, ShapeSolverConfig
from .synthbench import DegradeConfig, SceneConfig

CONFIG_VERSION = 1


@dataclass
class AlignFlags:
    filter_shape_pairs: bool = False
    reject_worse: bool = True


@dataclass
class ViewSelConfig:
    k: int = 4
    lambda_s: float = 0.5
    lambda_v: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class EvalConfig:
    emd_cap: int = 512


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    threads: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    shape: ShapeSolverConfig = field(default_factory=ShapeSolverConfig)
    schedule: IterSchedule = field(default_factory=IterSchedule)
    align: AlignFlags = field(default_factory=AlignFlags)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    viewsel: ViewSelConfig = field(default_factory=ViewSelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def align_config(self):
        return AlignConfig(self.ransac, self.shape, self.schedule, self.align.filter_shape_pairs,
                           self.align.reject_worse)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(v) for v in obj)
    return obj


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, sub)
        elif isinstance(current, (tuple, frozenset)):
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = type(current)(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{sub}: expected true/false")
            kwargs[name] = value
        elif isinstance(current, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{sub}: expected a number, got {value!r}")
            if isinstance(current, int):
                if not float(value).is_integer():
                    raise ConfigError(f"{sub}: expected an integer, got {value!r}")
                value = int(value)
            kwargs[name] = float(value) if isinstance(current, float) else value
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigError(f"{sub}: expected a string")
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def from_dict(data) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.version} (expected {CONFIG_VERSION})")
    return cfg


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        apply_override(data, item)
    return from_dict(data)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, item: str):
    """Set ``a.b.c=value`` in nested ``data`` (value parsed as JSON when possible)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = _parse_value(text)
    return data
