"""Model configuration and the plain-text ``key=value`` config format."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class GatingMode(str, enum.Enum):
    ONLY_SHORT_TERM = "OnlyShortTerm"
    NO_GATING = "NoGating"
    FIXED_PARAM = "FixedParam"
    FEATURE = "Feature"

    def __str__(self) -> str:
        return self.value


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def format_kv(values: Mapping[str, Any]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def _fmt(v: Any) -> str:
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def coerce(value: str, kind: Any, key: str) -> Any:
    """Convert a config string to ``kind`` (the dataclass field default's type)."""
    try:
        if isinstance(kind, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(kind, enum.Enum):
            return type(kind)(value)
        if isinstance(kind, int):
            return int(value)
        if isinstance(kind, float):
            return float(value)
        if isinstance(kind, tuple):
            return tuple(float(x) for x in value.split(","))
        if kind is None:
            return None if value.lower() in ("", "none") else int(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def from_mapping(cls, values: Mapping[str, Any], *, strict: bool = True):
    """Build dataclass ``cls`` from string or typed values, rejecting unknown keys."""
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if strict and unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in values.items():
        if key not in names:
            continue
        kwargs[key] = coerce(val, getattr(defaults, key), key) if isinstance(val, str) else val
    return cls(**kwargs)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the desk-scale toy model."""

    H: int = 32
    W: int = 32
    C: int = 3
    Q: int = 8
    K: int = 64
    A: int = 4
    L: int = 2
    n_st: int = 4
    n_lt: int = 4
    s: int = 4
    num_classes: int = 6
    gating_mode: GatingMode = GatingMode.FEATURE
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "gating_mode", GatingMode(self.gating_mode))
        for name in ("H", "W", "C", "Q", "K", "A", "L", "n_st", "n_lt", "s", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.H % self.Q or self.W % self.Q:
            raise ConfigError(f"patch size Q={self.Q} must divide H={self.H} and W={self.W}")
        if self.K % self.A:
            raise ConfigError(f"heads A={self.A} must divide K={self.K}")

    @property
    def N(self) -> int:
        """Patches per frame."""
        return (self.H * self.W) // (self.Q * self.Q)

    @property
    def head_dim(self) -> int:
        return self.K // self.A

    @property
    def patch_dim(self) -> int:
        return self.C * self.Q * self.Q

    @property
    def uses_long_stream(self) -> bool:
        return self.gating_mode is not GatingMode.ONLY_SHORT_TERM

    @property
    def frames_total(self) -> int:
        return self.n_st + (self.n_lt if self.uses_long_stream else 0)

    @property
    def tokens_total(self) -> int:
        return self.N * self.frames_total + 1

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_text(self) -> str:
        return format_kv(self.to_dict())

    @classmethod
    def from_text(cls, text: str) -> ModelConfig:
        return from_mapping(cls, parse_kv(text))

    def replace(self, **changes) -> ModelConfig:
        return dataclasses.replace(self, **changes)


TOY_GRADCHECK_CONFIG = ModelConfig(H=16, W=16, Q=8, K=32, A=4, L=2, n_st=2, n_lt=2, s=2, num_classes=4)
