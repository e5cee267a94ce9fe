"""Run configuration: a plain-text ``key = value`` file plus command-line overrides.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Unknown keys are rejected and every value is checked when it is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from . import guided_filter as gf
from .training.objective import TrainConfig

__all__ = ["ConfigError", "RunConfig", "KEYS"]


class ConfigError(ValueError):
    pass


def _int(lo: int | None = None, odd: bool = False):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got {text!r}") from None
        if lo is not None and v < lo:
            raise ConfigError(f"must be >= {lo}, got {v}")
        if odd and v % 2 == 0:
            raise ConfigError(f"must be odd, got {v}")
        return v
    return parse


def _float(lo: float | None = None, strict: bool = False, hi: float | None = None):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got {text!r}") from None
        if v != v or v in (float("inf"), float("-inf")):
            raise ConfigError(f"must be finite, got {text!r}")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ConfigError(f"must be {'>' if strict else '>='} {lo}, got {v}")
        if hi is not None and v >= hi:
            raise ConfigError(f"must be < {hi}, got {v}")
        return v
    return parse


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ConfigError(f"expected one of {list(options)}, got {text!r}")
        return text
    return parse


# file key -> (attribute, parser)
KEYS = {
    "radius": ("radius", _int(1)),
    "epsilon": ("epsilon", _float(0.0, strict=True)),
    "subsample": ("subsample", _int(1)),
    "lambda": ("lam", _float(0.0)),
    "iters": ("iters", _int(1)),
    "context.k": ("context_iters", _int(1)),
    "net.k1": ("k1", _int(1, odd=True)),
    "net.k2": ("k2", _int(1, odd=True)),
    "net.channels": ("channels", _int(1)),
    "train.lr": ("lr", _float(0.0)),
    "train.decay": ("decay", _float(0.0)),
    "train.momentum": ("momentum", _float(0.0, hi=1.0)),
    "train.epochs": ("epochs", _int(1)),
    "train.lr_policy": ("lr_policy", _choice("fixed", "poly")),
    "seed": ("seed", _int(0)),
}


@dataclass
class RunConfig:
    radius: int = 50
    epsilon: float = 1.0
    subsample: int = 4
    lam: float = 1.0
    iters: int = 3
    context_iters: int = 1
    k1: int = 15
    k2: int = 15
    channels: int = 32
    lr: float = 0.01
    decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 4
    lr_policy: str = "poly"
    seed: int = 0
    explicit: set[str] = field(default_factory=set, compare=False)   # keys set by file or overrides

    def set(self, key: str, value: str) -> None:
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parse = KEYS[key]
        try:
            setattr(self, attr, parse(value.strip()))
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        self.explicit.add(key)

    def apply_overrides(self, items) -> "RunConfig":
        """Apply ``key=value`` strings (as given to ``--set``)."""
        for item in items or ():
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            self.set(key, value)
        return self

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected key = value")
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text(), str(path))

    def dumps(self) -> str:
        """Config file text holding every key (round-trips through :meth:`parse`)."""
        lines = []
        for key, (attr, _) in KEYS.items():
            lines.append(f"{key} = {getattr(self, attr)}")
        return "\n".join(lines) + "\n"

    def filter_config(self, fast: bool = False) -> gf.GuidedFilterConfig:
        return gf.GuidedFilterConfig(self.radius, self.epsilon, self.subsample if fast else 1)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.decay, self.momentum, self.epochs, self.seed, self.lr_policy)


assert {f.name for f in fields(RunConfig)} - {"explicit"} == {a for a, _ in KEYS.values()}
