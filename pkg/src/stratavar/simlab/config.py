"""Flat ``key=value`` experiment configuration."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from ..partition import GreedyConfig
from ..sampler import ResampleSchedule

EXPERIMENTS = ("fig1", "fig2", "fig3", "fig4", "rankbound")


class ConfigError(ValueError):
    pass


# Per-experiment defaults; anything not listed falls back to the dataclass default.
DEFAULTS = {
    "fig1": dict(dims=(1, 2, 4, 8), samples=1000),
    "fig2": dict(dims=(1, 2, 4, 8), k=8, n=360, samples=100, trials=4000, distribution="both"),
    "fig3": dict(n=100, k=16, samples=20, trials=100000, greedy_trials=100000, greedy_block=10),
    "fig4": dict(dims=(16,), n=1000, ks=(8, 16, 24, 32, 40), trials=20000, restarts=10,
                 greedy_trials=100, greedy_block=10),
    "rankbound": dict(dims=(2,), n=6, k=2, samples=20),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dims: tuple = (1, 2, 4, 8)
    k: int = 8
    ks: tuple = (8, 16, 24, 32, 40)
    n: int = 100
    trials: int = 1000
    samples: int = 100
    seed: int = 0
    distribution: str = "normal"
    input_path: Optional[str] = None
    header: bool = False
    output_path: Optional[str] = None
    greedy_trials: int = 100
    greedy_block: int = 10
    period: int = 100
    restarts: int = 1
    scale_decades: float = 6.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("k", "n", "trials", "samples", "greedy_trials", "greedy_block", "period", "restarts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.dims or min(self.dims) < 1:
            raise ConfigError(f"dims must be positive integers, got {self.dims}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError(f"ks must be positive integers, got {self.ks}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.distribution not in ("normal", "lognormal", "both"):
            raise ConfigError(f"distribution must be normal, lognormal or both, got {self.distribution!r}")
        if self.input_path is not None and not os.access(self.input_path, os.R_OK):
            raise ConfigError(f"input file {self.input_path!r} is not readable")
        if self.output_path is not None:
            parent = Path(self.output_path).resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                raise ConfigError(f"output directory {str(parent)!r} is not writable")

    @property
    def greedy(self) -> GreedyConfig:
        return GreedyConfig(self.greedy_trials, self.greedy_block, self.seed)

    @property
    def schedule(self) -> ResampleSchedule:
        return ResampleSchedule(self.period)

    def canonical(self) -> str:
        """``key=value`` lines of every setting that affects results."""
        lines = []
        for f in fields(self):
            if f.name == "output_path":
                continue
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


_ALIASES = {"input": "input_path", "out": "output_path", "output": "output_path"}
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if key in ("dims", "ks"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind in ("int",):
            return int(raw)
        if kind in ("float",):
            return float(raw)
        if kind in ("bool",):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw or None


def parse_settings(lines, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(experiment: str, path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Experiment defaults, then the config file, then ``overrides``."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    settings = dict(DEFAULTS[experiment])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        settings.update(parse_settings(text.splitlines(), str(path)))
    for key, value in (overrides or {}).items():
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        settings[key] = _coerce(key, value) if isinstance(value, str) else value
    if settings.setdefault("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {settings['experiment']!r}, not {experiment!r}")
    return ExperimentConfig(**settings)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)


def worker_count() -> int:
    """Worker cap from ``STRATAVAR_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("STRATAVAR_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STRATAVAR_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("STRATAVAR_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)
