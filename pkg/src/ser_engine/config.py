"""One YAML file holding every knob, with a validated, typed view of it.

Sections: ``paths``, ``audio``, ``augment``, ``features`` (``frame`` and
``mel``), ``model``, ``metrics``, ``stages`` and a top-level ``seed``.
Unknown keys and bad values are collected and reported together.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .audio import CANONICAL_DURATION, CANONICAL_RATE
from .augment import AugmentPolicy
from .errors import ConfigError, SerError
from .features import FrameConfig, MelConfig
from .nn.model import ModelConfig

SEED_ENV = "SER_ENGINE_SEED"
DEFAULT_SEED = 0


@dataclass
class PathsConfig:
    dataset_root: str | None = None
    work_dir: str = "work"


@dataclass
class AudioConfig:
    sample_rate: int = CANONICAL_RATE
    duration: float = CANONICAL_DURATION
    split: list = field(default_factory=lambda: [0.85, 0.075, 0.075])
    actor_disjoint: bool = False


@dataclass
class MetricsConfig:
    bootstrap: int = 1000
    alpha: float = 0.05
    max_n: int = 4
    top_k: int = 5


@dataclass
class EngineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    frame: FrameConfig = field(default_factory=FrameConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    stages: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED

    def with_seed(self, seed):
        """Propagate one seed to every seeded component."""
        self.seed = int(seed)
        self.augment.seed = self.seed
        self.model.seed = self.seed
        return self

    def to_dict(self):
        return {
            "paths": asdict(self.paths),
            "audio": asdict(self.audio),
            "augment": self.augment.to_dict(),
            "features": {"frame": asdict(self.frame), "mel": asdict(self.mel)},
            "model": self.model.to_dict(),
            "metrics": asdict(self.metrics),
            "stages": self.stages,
            "seed": self.seed,
        }


_TOP = ("paths", "audio", "augment", "features", "model", "metrics", "stages", "seed")


def _section(cls, raw, where, problems):
    """Instantiate dataclass ``cls`` from ``raw``, recording every problem."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected a mapping, got {type(raw).__name__}")
        return cls()
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            problems.append(f"{where}.{key}: unknown key")
            continue
        default = getattr(cls(), key)
        if not _type_ok(value, default):
            problems.append(f"{where}.{key}: expected {type(default).__name__}, got {type(value).__name__}")
            continue
        kwargs[key] = value
    try:
        obj = cls(**kwargs)
    except (SerError, ValueError, TypeError) as exc:
        problems.append(f"{where}: {exc}")
        return cls()
    validate = getattr(obj, "validate", None)
    if validate is not None:
        try:
            validate()
        except (SerError, ValueError) as exc:
            problems.extend(f"{where}: {p.strip()}" for p in str(exc).split(";"))
    return obj


def _type_ok(value, default):
    if default is None:
        return value is None or isinstance(value, (int, float, str))
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def config_from_dict(raw) -> EngineConfig:
    problems = []
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    for key in raw:
        if key not in _TOP:
            problems.append(f"{key}: unknown section")
    cfg = EngineConfig()
    cfg.paths = _section(PathsConfig, raw.get("paths"), "paths", problems)
    cfg.audio = _section(AudioConfig, raw.get("audio"), "audio", problems)
    cfg.augment = _section(AugmentPolicy, raw.get("augment"), "augment", problems)
    feats = raw.get("features") or {}
    if not isinstance(feats, dict):
        problems.append("features: expected a mapping")
        feats = {}
    for key in feats:
        if key not in ("frame", "mel"):
            problems.append(f"features.{key}: unknown key")
    cfg.frame = _section(FrameConfig, feats.get("frame"), "features.frame", problems)
    cfg.mel = _section(MelConfig, feats.get("mel"), "features.mel", problems)
    cfg.model = _section(ModelConfig, raw.get("model"), "model", problems)
    cfg.metrics = _section(MetricsConfig, raw.get("metrics"), "metrics", problems)
    stages = raw.get("stages") or {}
    if not isinstance(stages, dict):
        problems.append("stages: expected a mapping")
    else:
        for kind, spec in stages.items():
            if kind not in ("asr", "mt", "tts"):
                problems.append(f"stages.{kind}: unknown stage")
            elif not isinstance(spec, dict) or "transport" not in spec:
                problems.append(f"stages.{kind}: needs a 'transport' key")
        cfg.stages = stages
    split = cfg.audio.split
    if len(split) != 3 or any(not isinstance(r, (int, float)) or r < 0 for r in split) \
            or abs(sum(split) - 1.0) > 1e-9:
        problems.append(f"audio.split: need three non-negative ratios summing to 1, got {split}")
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        problems.append(f"seed: expected a non-negative integer, got {seed!r}")
    if problems:
        raise ConfigError(problems)
    if seed is not None:
        cfg.seed = seed
    return cfg


def load_config(path=None, seed=None) -> EngineConfig:
    """Load ``path`` (or defaults) and resolve the seed.

    Seed precedence: ``seed`` argument, then the file's ``seed``, then the
    ``SER_ENGINE_SEED`` environment variable, then 0.
    """
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"{path}: not valid YAML ({exc.__class__.__name__})"]) from None
    cfg = config_from_dict(raw)
    if seed is not None:
        resolved = seed
    elif isinstance(raw, dict) and raw.get("seed") is not None:
        resolved = raw["seed"]
    elif os.environ.get(SEED_ENV, "").strip():
        text = os.environ[SEED_ENV].strip()
        try:
            resolved = int(text)
        except ValueError:
            raise ConfigError([f"{SEED_ENV}: not an integer: {text!r}"]) from None
    else:
        resolved = DEFAULT_SEED
    return cfg.with_seed(resolved)
