"""YAML project configuration with one section per workflow stage.

Unknown keys are rejected at every level so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .blur import BlurDomainSpec
from .data import SynthConfig
from .exceptions import ConfigError, InvalidRangeError
from .training import TrainConfig


def _check_keys(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be a mapping, got {type(d).__name__}")
    bad = set(d) - set(allowed)
    if bad:
        raise ConfigError(f"unknown keys in '{section}': {sorted(bad)}; allowed: {sorted(allowed)}")


def _synth_from_dict(d: dict) -> SynthConfig:
    _check_keys("synth", d, [f.name for f in dataclasses.fields(SynthConfig)])
    d = dict(d)
    domain_keys = [f.name for f in dataclasses.fields(BlurDomainSpec)]
    for key in ("unknown", "known"):
        if key in d:
            _check_keys(f"synth.{key}", d[key], domain_keys)
            sub = dict(d[key])
            for rk in ("length_range", "angle_range", "sigma_range"):
                if rk in sub:
                    sub[rk] = tuple(sub[rk])
            d[key] = BlurDomainSpec.from_dict(sub)
    if d.get("known_mode", "exact") not in ("exact", "estimated"):
        raise ConfigError(f"synth.known_mode must be 'exact' or 'estimated', got {d['known_mode']!r}")
    try:
        return SynthConfig(**d)
    except (TypeError, InvalidRangeError) as exc:
        raise ConfigError(f"synth: {exc}") from exc


@dataclass(frozen=True)
class DeblurrerConfig:
    """Known-domain Wiener deblurrer; ``nsr: auto`` calibrates on the known-domain source pairs."""

    nsr: Union[float, str] = "auto"
    n_kernel_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.nsr != "auto" and not (isinstance(self.nsr, (int, float)) and self.nsr >= 0):
            raise ConfigError(f"deblurrer.nsr must be 'auto' or a number >= 0, got {self.nsr!r}")


@dataclass(frozen=True)
class ClassifierConfig:
    width: int = 32
    iters: int = 1500
    batch_size: int = 16
    crop: int = 64
    lr: float = 1e-3
    seed: int = 0
    n_scenes: int = 120
    highpass: float = 2.0


@dataclass(frozen=True)
class AblationConfig:
    ratios: tuple = ("5:5", "6:4", "9:1")
    total_iters: Optional[int] = None


_SECTIONS = ("synth", "train", "deblurrer", "classifier", "ablate")


@dataclass(frozen=True)
class ProjectConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    deblurrer: DeblurrerConfig = field(default_factory=DeblurrerConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    ablate: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "ProjectConfig":
        d = d or {}
        _check_keys("<top level>", d, _SECTIONS)
        kw = {}
        if "synth" in d:
            kw["synth"] = _synth_from_dict(d["synth"] or {})
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"] or {})
        for name, typ in (("deblurrer", DeblurrerConfig), ("classifier", ClassifierConfig), ("ablate", AblationConfig)):
            if name in d:
                sub = d[name] or {}
                _check_keys(name, sub, [f.name for f in dataclasses.fields(typ)])
                if name == "ablate" and "ratios" in sub:
                    sub = dict(sub, ratios=tuple(str(r) for r in sub["ratios"]))
                try:
                    kw[name] = typ(**sub)
                except TypeError as exc:
                    raise ConfigError(f"{name}: {exc}") from exc
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "deblurrer": dataclasses.asdict(self.deblurrer),
            "classifier": dataclasses.asdict(self.classifier),
            "ablate": {"ratios": list(self.ablate.ratios), "total_iters": self.ablate.total_iters},
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None) -> ProjectConfig:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return ProjectConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ProjectConfig.from_dict(raw)


def dump_config(cfg: ProjectConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(json.loads(json.dumps(cfg.to_dict(), default=str)), sort_keys=True))


__all__ = ["AblationConfig", "ClassifierConfig", "DeblurrerConfig", "ProjectConfig", "dump_config", "load_config"]
