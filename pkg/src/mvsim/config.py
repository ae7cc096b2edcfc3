"""Run configuration: strict JSON schema, defaults, and semantic checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional, Union

import jsonschema

COMMANDS = (
    "simulate",
    "histogram",
    "strong-rate",
    "weak-rate",
    "rate-study",
    "moments",
    "variations-check",
    "count-multiindex",
)

RATE_COMMANDS = ("strong-rate", "weak-rate", "rate-study")
DEFAULT_D_LIST = [16, 32, 64, 128, 256, 512, 1024]


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_int_or_list = {"oneOf": [_pos_int, {"type": "array", "items": _pos_int, "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "d": _pos_int,
        "d_list": {"type": "array", "items": _pos_int, "minItems": 1},
        "n_steps": _pos_int,
        "t_end": _pos_num,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "replicates": _pos_int,
        "observable": {"type": "string"},
        "out_dir": {"type": "string", "minLength": 1},
        "backend": {"enum": ["auto", "numpy", "compiled"]},
        "record": {"type": "boolean"},
        "bins": _pos_int,
        "range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "p": _int_or_list,
        "n": _int_or_list,
        "strong_norm": {"enum": ["rms", "abs"]},
        "weak_replicates": {"type": "integer", "minimum": 0},
        "weak_rel_ci": _pos_num,
        "weak_max": {"type": "integer", "minimum": 0},
        "at_start": {"type": "boolean"},
    },
}


@dataclass
class RunConfig:
    command: str
    model: Union[str, dict] = "paper-example"
    d: Optional[int] = None
    d_list: Optional[list] = None
    n_steps: int = 64
    t_end: float = 1.0
    seed: int = 0
    replicates: int = 1
    observable: str = "paper-g"
    out_dir: str = "mvsim-out"
    backend: str = "auto"
    record: bool = False
    bins: int = 99
    range: Optional[list] = None
    p: Any = None
    n: Any = None
    strong_norm: str = "rms"
    weak_replicates: int = 0
    weak_rel_ci: float = 0.15
    weak_max: int = 0
    at_start: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def _command_defaults(raw: dict) -> dict:
    cmd = raw["command"]
    out = {}
    if cmd == "simulate":
        out["d"] = 16
    elif cmd == "histogram":
        out.update(d=2048, replicates=1)
    elif cmd in RATE_COMMANDS:
        out.update(d_list=list(DEFAULT_D_LIST), replicates=256)
        if cmd != "strong-rate":
            out.update(weak_replicates=4096, weak_max=16384)
    elif cmd == "moments":
        out.update(d_list=[16, 256, 2048], replicates=16, p=2)
    elif cmd == "variations-check":
        out.update(model="smooth-gauss", d_list=[2, 4, 8], replicates=100, p=2)
    elif cmd == "count-multiindex":
        out.update(n=list(range(1, 7)), p=list(range(2, 7)))
    return out


def validate_config(raw: Union[str, bytes, dict]) -> RunConfig:
    """Parse, schema-check and default a config; errors carry JSON-pointer paths."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(e.absolute_path)))
    if errors:
        err = errors[0]
        path = _pointer(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(raw) - set(SCHEMA["properties"]))
            raise ConfigError(f"unknown key(s) {extra}", path or "/" + extra[0])
        raise ConfigError(err.message, path)

    merged = {**_command_defaults(raw), **raw}
    cfg = RunConfig(**{f.name: merged[f.name] for f in fields(RunConfig) if f.name in merged})
    _check_semantics(cfg)
    return cfg


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _check_semantics(cfg: RunConfig) -> None:
    if cfg.d_list is not None:
        if any(b <= a for a, b in zip(cfg.d_list, cfg.d_list[1:])):
            raise ConfigError("d_list must be ascending", "/d_list")
    if cfg.range is not None and not cfg.range[1] > cfg.range[0]:
        raise ConfigError("range must be [lo, hi] with hi > lo", "/range")
    cmd = cfg.command
    if cmd in RATE_COMMANDS:
        if cfg.replicates < 2:
            raise ConfigError(f"{cmd} needs replicates >= 2", "/replicates")
        if len(cfg.d_list) < 3:
            raise ConfigError("a rate fit needs at least 3 entries", "/d_list")
    if cmd == "moments" and any(2 * p > 8 for p in _as_list(cfg.p)):
        raise ConfigError("moment order must satisfy 2p <= 8", "/p")
    if cmd == "variations-check" and any(p not in (2, 4) for p in _as_list(cfg.p)):
        raise ConfigError("variation moments support p in {2, 4}", "/p")
    if cmd == "count-multiindex" and any(not 2 <= p <= 10 for p in _as_list(cfg.p)):
        raise ConfigError("tuple length must lie in [2, 10]", "/p")
    if cmd == "histogram" and cfg.d is None:
        raise ConfigError("histogram needs d", "/d")


def load_config(path) -> RunConfig:
    """Read a config file, or the ``config`` echo inside a run manifest."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        return validate_config(text)
    if isinstance(raw, dict) and "config" in raw and "command" not in raw:
        raw = raw["config"]
    return validate_config(raw)


def strip_defaults(cfg: RunConfig) -> dict:
    """Config as a dict without None entries, suitable for re-validation."""
    return {k: v for k, v in cfg.to_dict().items() if v is not None}
