"""Flat `key = value` run configuration.

Keys are dotted (`data.*`, `model.*`, `train.*`) and typed by the dataclass
defaults; unknown keys and malformed values are rejected with the offending
line number.
"""

from __future__ import annotations

from dataclasses import asdict

from .errors import ConfigError
from .model import ModelConfig
from .synthdata import SynthConfig
from .train import TrainConfig


def default_config() -> dict:
    out: dict[str, object] = {}
    for prefix, obj in (("data", SynthConfig()), ("model", ModelConfig()),
                        ("train", TrainConfig())):
        for k, v in asdict(obj).items():
            out[f"{prefix}.{k}"] = v
    out["data.count"] = 2000
    out["seed"] = 0
    return out


def _parse_value(raw: str, default, key: str, lineno: int):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (tuple, list)):
            parts = [p for p in raw.replace(",", " ").split() if p]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return type(default)(type(d)(p) for d, p in zip(default, parts))
        return raw
    except ValueError as exc:
        raise ConfigError(
            f"line {lineno}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, defaults: dict | None = None) -> dict:
    """Parse overrides onto the defaults; returns the fully resolved dict."""
    resolved = dict(defaults if defaults is not None else default_config())
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in resolved:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        resolved[key] = _parse_value(raw, resolved[key], key, lineno)
    return resolved


def load_config(path: str, defaults: dict | None = None) -> dict:
    with open(path) as fh:
        return parse_config(fh.read(), defaults)


def split_config(resolved: dict) -> tuple[SynthConfig, ModelConfig,
                                          TrainConfig, int, int]:
    """(data cfg, model cfg, train cfg, dataset count, seed)."""
    def sub(prefix: str) -> dict:
        return {k.split(".", 1)[1]: v for k, v in resolved.items()
                if k.startswith(prefix + ".")}
    data = sub("data")
    count = int(data.pop("count"))
    if "box" in data:
        data["box"] = tuple(data["box"])
    return (SynthConfig(**data), ModelConfig(**sub("model")),
            TrainConfig(**sub("train")), count, int(resolved["seed"]))


def format_config(resolved: dict) -> str:
    """Canonical echo of a resolved configuration."""
    lines = []
    for k in sorted(resolved):
        v = resolved[k]
        if isinstance(v, (tuple, list)):
            v = ", ".join(repr(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
