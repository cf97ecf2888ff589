"""JSON scenario configs: one block per module, defaults embedded, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from pathlib import Path

from .acoustic import amplitude_at
from .sim_engine import Scenario, TrajectoryError, WhaleSpec, load_trajectory

# distance at which the default proximity threshold sits on the A0/d law
AMPLITUDE_THRESHOLD_RANGE = 1500.0
_INTERNAL = {"base_dir"}


class ConfigError(ValueError):
    """Invalid config; ``path`` is the dotted field path of the offending value."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


def _is_union(tp) -> bool:
    return typing.get_origin(tp) in (typing.Union, types.UnionType)


def _coerce(tp, v, path):
    if dataclasses.is_dataclass(tp):
        return _build(tp, v, path)
    if _is_union(tp):
        args = typing.get_args(tp)
        if v is None:
            if type(None) in args:
                return None
            raise ConfigError(path, "must not be null")
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, v, path)
            except ConfigError as e:
                errors.append(e)
        raise errors[0]
    if tp is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, f"expected a number, got {v!r}")
        return float(v)
    if tp is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        return v
    if tp is bool:
        if not isinstance(v, bool):
            raise ConfigError(path, f"expected true/false, got {v!r}")
        return v
    if tp is str:
        if not isinstance(v, str):
            raise ConfigError(path, f"expected a string, got {v!r}")
        return v
    if tp is tuple or typing.get_origin(tp) is tuple:
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {v!r}")
        args = typing.get_args(tp)
        item = args[0] if args else float
        return tuple(_coerce(item, x, f"{path}[{i}]") for i, x in enumerate(v))
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls) if f.init and f.name not in _INTERNAL]
    for k in sorted(data):
        if k not in names:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown key")
    kw = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kw)
    except ValueError as e:
        msg = str(e)
        head = msg.split()[0] if msg else ""
        # point at the field when the message names it first
        if head in names:
            path = f"{path}.{head}" if path else head
        raise ConfigError(path or "scenario", msg) from None


def scenario_from_dict(data: dict, base_dir=".", check_files: bool = True) -> Scenario:
    """Build a validated :class:`Scenario` from a parsed config.

    Args:
        data: Parsed JSON object. Every key is optional.
        base_dir: Directory that relative trajectory paths resolve against.
        check_files: Load and validate referenced trajectory files.

    Raises:
        ConfigError: with the dotted path of the first offending field.
    """
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a JSON object")
    data = dict(data)
    whales = data.pop("whales", [])
    if not isinstance(whales, list):
        raise ConfigError("whales", "expected a list")
    specs = tuple(_build(WhaleSpec, w, f"whales[{i}]") for i, w in enumerate(whales))

    man = data.get("maneuver", {})
    if isinstance(man, dict) and "amplitude_threshold" not in man:
        ac = data.get("acoustic", {})
        scale = ac.get("amplitude_scale", 1000.0) if isinstance(ac, dict) else 1000.0
        if isinstance(scale, (int, float)) and not isinstance(scale, bool):
            data["maneuver"] = {**man, "amplitude_threshold":
                                float(amplitude_at(AMPLITUDE_THRESHOLD_RANGE, scale))}

    sc = _build(Scenario, data, "")
    sc = dataclasses.replace(sc, whales=specs, base_dir=str(base_dir))
    if check_files:
        for i, spec in enumerate(specs):
            p = Path(spec.trajectory)
            if not p.is_absolute():
                p = Path(base_dir) / p
            if not p.is_file():
                raise ConfigError(f"whales[{i}].trajectory", f"file not found: {p}")
            try:
                tracks = load_trajectory(p)
            except TrajectoryError as e:
                raise ConfigError(f"whales[{i}].trajectory", f"{p}: {e}") from None
            if spec.whale_id is not None and spec.whale_id not in tracks:
                raise ConfigError(f"whales[{i}].whale_id", f"{spec.whale_id!r} not in {p}")
    return sc


def load_config(path) -> tuple[Scenario, dict]:
    """Read, parse and validate a JSON config; returns ``(scenario, raw)``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return scenario_from_dict(raw, base_dir=path.resolve().parent), raw


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form (key order and whitespace ignored)."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
