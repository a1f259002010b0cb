"""Alternating discriminator/translator optimisation with checkpointed resume.

Every random draw at iteration ``t`` comes from a generator seeded with
``(seed, t, purpose)``, so a run restored from a checkpoint replays exactly
the batches, augmentations and mixing ratios of an uninterrupted run.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import AugmentationPolicy, CurriculumSchedule, augment, curriculum_sample
from .exceptions import ConfigError, EmptyInputError, InvalidRangeError, ManifestMismatchError, NonFiniteError
from .imaging import laplacian_variance
from .losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    gradient_penalty,
    non_saturating_generator_loss,
    reconstruction_loss,
    total_losses,
)
from .networks import FeatureExtractor, PatchDiscriminator, TranslationGenerator, config_hash, save_params, tensor_pyramid

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("iteration", "adv", "rec", "grad_pen", "total_g", "total_d", "curriculum_fraction", "lr")


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 20000
    batch_size: int = 8
    crop: int = 64
    lr_initial: float = 2e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weights: LossWeights = LossWeights()
    curriculum: Optional[CurriculumSchedule] = None
    seed: int = 0
    d_steps_per_g_step: int = 1
    checkpoint_every: int = 1000
    non_saturating: bool = False
    generator_widths: tuple = (16, 24, 32)
    discriminator_widths: tuple = (32, 64, 64)
    discriminator_highpass: float = 2.0
    discriminator_lowpass: float = 0.0
    generator_noise: bool = False
    feature_channels: tuple = (16, 32, 32)
    feature_seed: int = 1234
    feature_gain: float = 10.0
    augmentation: AugmentationPolicy = AugmentationPolicy()

    def __post_init__(self):
        if self.total_iters < 0:
            raise ConfigError("total_iters must be >= 0")
        if self.batch_size < 1 or self.d_steps_per_g_step < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, d_steps_per_g_step and checkpoint_every must be >= 1")
        if not (self.lr_initial >= 0 and math.isfinite(self.lr_initial)):
            raise ConfigError("lr_initial must be finite and >= 0")
        for name in ("discriminator_highpass", "discriminator_lowpass"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and >= 0")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for name in ("generator_widths", "discriminator_widths", "feature_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.augmentation.crop != self.crop:
            object.__setattr__(self, "augmentation", dataclasses.replace(self.augmentation, crop=self.crop))

    @property
    def levels(self) -> int:
        return len(self.generator_widths)

    @property
    def schedule(self) -> CurriculumSchedule:
        return self.curriculum if self.curriculum is not None else CurriculumSchedule.scaled(self.total_iters)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        nested = {"weights": LossWeights, "curriculum": CurriculumSchedule, "augmentation": AugmentationPolicy}
        for key, typ in nested.items():
            if isinstance(d.get(key), dict):
                sub_known = {f.name for f in dataclasses.fields(typ)}
                bad = set(d[key]) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                d[key] = typ(**d[key])
        try:
            return cls(**d)
        except (TypeError, InvalidRangeError) as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return config_hash(self.to_dict())


def lr_at(t: int, cfg: TrainConfig) -> float:
    """Constant learning rate for the first half of training, then linear decay to zero."""
    total = cfg.total_iters
    if not 0 <= t <= total:
        raise InvalidRangeError(f"iteration {t} outside [0, {total}]")
    half = math.ceil(total / 2)
    if t < half:
        return cfg.lr_initial
    if total == half:
        return 0.0
    return cfg.lr_initial * (total - t) / (total - half)


# --------------------------------------------------------------------------
# state


@dataclass
class Models:
    generator: TranslationGenerator
    discriminator: PatchDiscriminator
    phi: FeatureExtractor

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Models":
        return cls(
            TranslationGenerator(cfg.generator_widths, seed=cfg.seed, output_noise=cfg.generator_noise),
            PatchDiscriminator(cfg.discriminator_widths, seed=cfg.seed + 1, highpass=cfg.discriminator_highpass,
                               lowpass=cfg.discriminator_lowpass),
            FeatureExtractor(cfg.feature_channels, seed=cfg.feature_seed, gain=cfg.feature_gain),
        )


@dataclass
class TrainingData:
    B: np.ndarray
    K: np.ndarray
    b_variance: np.ndarray

    @classmethod
    def from_images(cls, B: Sequence, K: Sequence) -> "TrainingData":
        if len(B) == 0 or len(K) == 0:
            raise EmptyInputError("training needs non-empty B and K sets")
        B = np.stack([np.asarray(b, dtype=np.float64) for b in B])
        K = np.stack([np.asarray(k, dtype=np.float64) for k in K])
        return cls(B, K, np.array([laplacian_variance(b) for b in B]))


@dataclass
class TrainState:
    iteration: int
    optim_g: torch.optim.Adam
    optim_d: torch.optim.Adam
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, models: Models, cfg: TrainConfig) -> "TrainState":
        return cls(
            0,
            torch.optim.Adam(models.generator.parameters(), lr=cfg.lr_initial, betas=cfg.betas, eps=cfg.adam_eps),
            torch.optim.Adam(models.discriminator.parameters(), lr=cfg.lr_initial, betas=cfg.betas, eps=cfg.adam_eps),
        )

    @property
    def curriculum_fraction(self) -> float:
        return self.history[-1][6] if self.history else float("nan")


def _rng(cfg: TrainConfig, t: int, purpose: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, t, purpose, sub])


def _batch(images: np.ndarray, idx, cfg: TrainConfig, t: int, purpose: int) -> torch.Tensor:
    seeds = _rng(cfg, t, purpose + 100).integers(0, 2**63, len(idx))
    crops = [augment(images[i], cfg.augmentation, int(s)) for i, s in zip(idx, seeds)]
    return torch.from_numpy(np.stack(crops).transpose(0, 3, 1, 2).copy()).float()


def sample_batches(data: TrainingData, cfg: TrainConfig, t: int, step: int = 0):
    """(B batch, K batch, mixing ratios) for iteration ``t`` and discriminator step ``step``."""
    frac = cfg.schedule.fraction(t)
    b_seed = int(_rng(cfg, t, 0, step).integers(0, 2**63))
    b_idx = curriculum_sample(data.b_variance, cfg.schedule, t, cfg.batch_size, b_seed)
    k_idx = _rng(cfg, t, 1, step).integers(0, len(data.K), cfg.batch_size)
    yb = _batch(data.B, b_idx, cfg, t, 10 + step)
    kb = _batch(data.K, k_idx, cfg, t, 50 + step)
    eps = torch.from_numpy(_rng(cfg, t, 2, step).uniform(0.0, 1.0, cfg.batch_size)).float()
    return yb, kb, eps, frac


def sample_noise(cfg: TrainConfig, t: int, purpose: int, shape, sub: int = 0) -> Optional[torch.Tensor]:
    """Standard normal output noise for the translator, or None when disabled."""
    if not cfg.generator_noise:
        return None
    return torch.from_numpy(_rng(cfg, t, purpose, sub).standard_normal(tuple(shape))).float()


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for g in opt.param_groups:
        g["lr"] = lr


def discriminator_step(models: Models, state: TrainState, yb, kb, eps, cfg: TrainConfig, noise=None):
    G, D = models.generator, models.discriminator
    with torch.no_grad():
        fake = G.translate(yb, noise)
    adv_d = adversarial_loss(D(kb), D(fake))
    gp = gradient_penalty(D.score, yb, fake, eps)
    loss_d = -adv_d + cfg.weights.lambda_grad * gp
    state.optim_d.zero_grad(set_to_none=True)
    loss_d.backward()
    state.optim_d.step()
    return adv_d.detach(), gp.detach()


def generator_losses(models: Models, yb, kb, cfg: TrainConfig, noise=None):
    """(adv, rec, objective) for a translator update on a fixed batch."""
    G, D = models.generator, models.discriminator
    pyr = tensor_pyramid(yb, G.levels)
    outs = G(pyr, noise)
    with torch.no_grad():
        real_scores = D(kb)
    fake_scores = D(outs[0])
    adv = adversarial_loss(real_scores, fake_scores)
    rec = reconstruction_loss(models.phi, pyr, outs)
    adv_term = non_saturating_generator_loss(fake_scores) if cfg.non_saturating else adv
    return adv, rec, adv_term + cfg.weights.lambda_rec * rec


def train_step(state: TrainState, data: TrainingData, models: Models, cfg: TrainConfig) -> tuple[TrainState, LossReport]:
    """One round: ``d_steps_per_g_step`` discriminator updates, then one translator update."""
    t = state.iteration
    lr = lr_at(t, cfg)
    _set_lr(state.optim_g, lr)
    _set_lr(state.optim_d, lr)
    G, D = models.generator, models.discriminator
    G.train()
    D.train()
    for p in D.parameters():
        p.requires_grad_(True)
    for step in range(cfg.d_steps_per_g_step):
        yb, kb, eps, frac = sample_batches(data, cfg, t, step)
        adv_d, gp = discriminator_step(models, state, yb, kb, eps, cfg, sample_noise(cfg, t, 3, yb.shape, step))
    for p in D.parameters():
        p.requires_grad_(False)
    adv, rec, objective = generator_losses(models, yb, kb, cfg, sample_noise(cfg, t, 4, yb.shape))
    state.optim_g.zero_grad(set_to_none=True)
    objective.backward()
    state.optim_g.step()
    for p in D.parameters():
        p.requires_grad_(True)
    try:
        report = total_losses(adv, rec, gp, cfg.weights, adv_d=adv_d)
    except NonFiniteError as exc:
        raise NonFiniteError(f"iteration {t}: {exc}; lr={lr} curriculum_fraction={frac}") from exc
    state.iteration = t + 1
    state.history.append((t, report.adv, report.rec, report.grad_pen, report.total_g, report.total_d, frac, lr))
    return state, report


# --------------------------------------------------------------------------
# checkpoints and the outer loop


def save_checkpoint(path, state: TrainState, models: Models, cfg: TrainConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "iteration": state.iteration,
        "generator": models.generator.state_dict(),
        "discriminator": models.discriminator.state_dict(),
        "optim_g": state.optim_g.state_dict(),
        "optim_d": state.optim_d.state_dict(),
        "history": list(state.history),
        "rng": {"seed": cfg.seed, "scheme": "counter(seed, iteration, purpose)"},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, models: Models, cfg: TrainConfig) -> TrainState:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ManifestMismatchError(f"unsupported checkpoint version {payload.get('format_version')}")
    if payload["config_hash"] != cfg.hash():
        raise ManifestMismatchError(
            f"checkpoint {path} was written with config {payload['config_hash']}, current config is {cfg.hash()}"
        )
    models.generator.load_state_dict(payload["generator"])
    models.discriminator.load_state_dict(payload["discriminator"])
    state = TrainState.initial(models, cfg)
    state.optim_g.load_state_dict(payload["optim_g"])
    state.optim_d.load_state_dict(payload["optim_d"])
    state.iteration = payload["iteration"]
    state.history = [tuple(r) for r in payload["history"]]
    return state


def write_log(path, history) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def run_training(data: TrainingData, models: Models, cfg: TrainConfig, out_dir=None,
                 resume: bool = True, stop_at: Optional[int] = None, progress_every: int = 0) -> TrainState:
    """Train to ``cfg.total_iters`` (or ``stop_at``), checkpointing into ``out_dir``.

    With ``resume`` and an existing ``out_dir/checkpoints/latest.pt`` the run
    continues from there; the checkpoint must come from the same config.
    """
    out = Path(out_dir) if out_dir is not None else None
    latest = out / "checkpoints" / "latest.pt" if out is not None else None
    if resume and latest is not None and latest.exists():
        state = load_checkpoint(latest, models, cfg)
        log.info("resumed from %s at iteration %d", latest, state.iteration)
    else:
        state = TrainState.initial(models, cfg)
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    while state.iteration < end:
        state, report = train_step(state, data, models, cfg)
        t = state.iteration
        if progress_every and t % progress_every == 0:
            log.info("iter %d adv=%.4f rec=%.4f gp=%.4f total_d=%.4f", t, report.adv, report.rec,
                     report.grad_pen, report.total_d)
        if out is not None and (t % cfg.checkpoint_every == 0 or t == end):
            save_checkpoint(latest, state, models, cfg)
            write_log(out / "train_log.csv", state.history)
    if out is not None:
        if state.iteration == 0:
            write_log(out / "train_log.csv", state.history)
        if state.iteration >= cfg.total_iters:
            save_params(out / "generator.pt", models.generator, cfg.to_dict())
            save_params(out / "discriminator.pt", models.discriminator, cfg.to_dict())
    return state


def train_on_bundle(bundle, cfg: TrainConfig, out_dir=None, **kwargs) -> TranslationGenerator:
    """Train a translator on ``bundle.B`` against ``bundle.K`` and return it."""
    data = TrainingData.from_images(bundle.B, bundle.K)
    models = Models.from_config(cfg)
    run_training(data, models, cfg, out_dir, **kwargs)
    return models.generator
