"""Experiment configuration: a JSON file whose keys mirror the dataclasses below."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class Paths:
    corpus: str = ""
    noise: str = ""
    data: str = "data"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


@dataclass
class DSPSettings:
    taps_per_bin: int = 10
    mu: float = 0.5
    epsilon: float = 1e-6
    search_ms: float = 500.0
    n_bands: int = 8


@dataclass
class LossSettings:
    p: float = 0.5
    alpha: float = 0.5


@dataclass
class Sizes:
    hours: float = 2.0
    clip_seconds: float = 10.0
    n_rooms: int = 20
    steps: int = 1000
    batch_size: int = 1
    lr: float = 1e-3
    checkpoint_every: int = 200
    max_clips: int = 0


@dataclass
class ExperimentConfig:
    paths: Paths = field(default_factory=Paths)
    variant: str = "TDPF-2"
    strategy: str = "finetune"
    seed: int = 0
    embedding_provider: str = "stub"
    embedding_file: str = ""
    pesq_cmd: str = ""
    dsp: DSPSettings = field(default_factory=DSPSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    sizes: Sizes = field(default_factory=Sizes)

    def validate(self) -> None:
        from .net import VARIANTS
        from .training import STRATEGIES

        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}")
        if self.embedding_provider not in ("stub", "file"):
            raise ConfigError("embedding_provider must be 'stub' or 'file'")
        if self.embedding_provider == "file" and not self.embedding_file:
            raise ConfigError("embedding_provider 'file' needs embedding_file")
        if self.pesq_cmd and ("{ref}" not in self.pesq_cmd or "{deg}" not in self.pesq_cmd):
            raise ConfigError("pesq_cmd needs {ref} and {deg} placeholders")
        d, lo, sz = self.dsp, self.loss, self.sizes
        checks = [
            (d.taps_per_bin >= 1, "dsp.taps_per_bin must be >= 1"),
            (0 < d.mu <= 2, "dsp.mu must be in (0, 2]"),
            (d.epsilon > 0, "dsp.epsilon must be positive"),
            (0 < d.search_ms <= 500, "dsp.search_ms must be in (0, 500]"),
            (d.n_bands >= 1, "dsp.n_bands must be >= 1"),
            (0 < lo.p <= 1, "loss.p must be in (0, 1]"),
            (0 <= lo.alpha <= 1, "loss.alpha must be in [0, 1]"),
            (sz.hours > 0, "sizes.hours must be positive"),
            (sz.clip_seconds >= 1, "sizes.clip_seconds must be at least 1"),
            (sz.n_rooms >= 1, "sizes.n_rooms must be >= 1"),
            (sz.steps >= 1, "sizes.steps must be >= 1"),
            (sz.batch_size >= 1, "sizes.batch_size must be >= 1"),
            (sz.lr > 0, "sizes.lr must be positive"),
            (sz.checkpoint_every >= 1, "sizes.checkpoint_every must be >= 1"),
            (sz.max_clips >= 0, "sizes.max_clips must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)} in {where or 'top level'}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
            continue
        kwargs[name] = _coerce(current, value, path)
    return cls(**kwargs)


def _coerce(current, value, path: str):
    number = isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(current, float) and number:
        return float(value)
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if type(value) is type(current):
        return value
    raise ConfigError(f"{path} must be {type(current).__name__}, got {type(value).__name__}")


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return config_from_dict(data)
