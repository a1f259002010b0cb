"""Deblurring pipeline, metric tables, the B:S ratio ablation and converter validation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn

from .blur import BlurDomainSpec, BlurPair, DEFAULT_KNOWN_DOMAIN, DEFAULT_UNKNOWN_DOMAIN
from .data import SynthConfig, render_scene, synthesize_bundle
from .exceptions import EmptyInputError, InfeasibleRatioError, NotConfiguredError
from .imaging import check_image, laplacian_variance, psnr, ssim
from .networks import (
    HIGHPASS_SCALE,
    PatchDiscriminator,
    TranslationGenerator,
    _seeded_init,
    gaussian_highpass,
    to_images,
    to_tensor,
)

METRIC_COLUMNS = (
    "image_id",
    "psnr_input",
    "ssim_input",
    "psnr_direct",
    "ssim_direct",
    "psnr_pipeline",
    "ssim_pipeline",
    "psnr_converted_vs_input",
    "laplacian_var_input",
    "laplacian_var_converted",
)


def translate_images(g: Optional[nn.Module], images: Sequence[np.ndarray], batch: int = 16) -> list[np.ndarray]:
    """Run the translator on numpy images; ``g=None`` is the identity."""
    images = [check_image(im) for im in images]
    if g is None:
        return [im.copy() for im in images]
    was_training = g.training
    g.eval()
    dtype = next(g.parameters()).dtype
    out = []
    try:
        with torch.no_grad():
            # group by shape so mixed sizes still batch
            for i in range(0, len(images), batch):
                chunk = images[i : i + batch]
                if len({im.shape for im in chunk}) == 1:
                    out.extend(to_images(g.translate(to_tensor(chunk, dtype))))
                else:
                    out.extend(to_images(g.translate(to_tensor(im, dtype)))[0] for im in chunk)
    finally:
        g.train(was_training)
    return out


def deblur_pipeline(g: Optional[nn.Module], deblurrer, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate ``y`` into the known domain, then deblur it. Returns ``(G(y), x_hat)``."""
    (converted,) = translate_images(g, [y])
    return converted, deblurrer.predict(converted)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def means(self) -> dict:
        if not self.rows:
            raise EmptyInputError("metrics table has no rows")
        return {c: float(np.mean([r[c] for r in self.rows])) for c in METRIC_COLUMNS[1:]}

    @property
    def gain(self) -> float:
        m = self.means()
        return m["psnr_pipeline"] - m["psnr_direct"]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def from_csv(cls, path) -> "MetricsTable":
        with open(path, newline="") as fh:
            rows = [{k: (v if k == "image_id" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]
        return cls(rows)

    def summary(self, config_hash: Optional[str] = None, **extra) -> dict:
        out = {"n_images": len(self.rows), "means": self.means(), "pipeline_minus_direct_psnr": self.gain,
               "config_hash": config_hash}
        out.update(extra)
        return out

    def write_summary(self, path, config_hash: Optional[str] = None, **extra) -> dict:
        s = self.summary(config_hash, **extra)
        Path(path).write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")
        return s


def evaluate_set(g: Optional[nn.Module], deblurrer, test: Sequence[BlurPair],
                 ids: Optional[Sequence[str]] = None) -> MetricsTable:
    """Score input, direct deblurring, conversion and the full pipeline on every test pair."""
    if len(test) == 0:
        raise EmptyInputError("evaluate_set needs at least one test pair")
    ids = list(ids) if ids is not None else [f"{i:05d}" for i in range(len(test))]
    converted = translate_images(g, [p.blurry for p in test])
    rows = []
    for name, pair, c in zip(ids, test, converted):
        y, x = pair.blurry, pair.sharp
        direct = deblurrer.predict(y)
        pipe = deblurrer.predict(c)
        rows.append({
            "image_id": name,
            "psnr_input": psnr(y, x),
            "ssim_input": ssim(y, x),
            "psnr_direct": psnr(direct, x),
            "ssim_direct": ssim(direct, x),
            "psnr_pipeline": psnr(pipe, x),
            "ssim_pipeline": ssim(pipe, x),
            "psnr_converted_vs_input": psnr(c, y),
            "laplacian_var_input": laplacian_variance(y),
            "laplacian_var_converted": laplacian_variance(c),
        })
    return MetricsTable(rows)


# --------------------------------------------------------------------------
# B:S ratio ablation


def parse_ratio(r) -> float:
    """``"6:4"``, ``(6, 4)`` or ``0.6`` to the B fraction."""
    if isinstance(r, str):
        a, b = (float(v) for v in r.split(":"))
    elif isinstance(r, (tuple, list)):
        a, b = (float(v) for v in r)
    else:
        a, b = float(r), 1.0 - float(r)
    if a <= 0 or b <= 0:
        raise InfeasibleRatioError(f"ratio {r!r} leaves one side empty")
    return a / (a + b)


def check_ratio_feasible(n_scenes: int, ratio: float, min_b_images: int = 1, frames_per_scene: int = 1) -> int:
    """Number of B scenes for ``ratio``; raises if the split cannot be realised."""
    n_b = int(math.floor(ratio * n_scenes + 0.5))
    if n_b < 1 or n_b > n_scenes - 1:
        raise InfeasibleRatioError(f"ratio {ratio:.3f} on {n_scenes} scenes gives {n_b} B scenes")
    if n_b * frames_per_scene < min_b_images:
        raise InfeasibleRatioError(
            f"ratio {ratio:.3f} leaves {n_b * frames_per_scene} B images, need at least {min_b_images}")
    return n_b


@dataclass(frozen=True)
class AblationRow:
    ratio: str
    b_fraction: float
    n_b_images: int
    n_s_images: int
    psnr_input: float
    psnr_direct: float
    psnr_pipeline: float
    gain: float


def ratio_ablation(synth: SynthConfig, ratios: Sequence, train_cfg, deblurrer,
                   train_fn: Optional[Callable] = None, out_dir=None) -> list[AblationRow]:
    """Train one translator per B:S ratio with identical seeds and score each on the same test set.

    ``train_fn(bundle, train_cfg, out_dir)`` must return a generator; it
    defaults to :func:`blurshift.training.train_on_bundle`.
    """
    from .training import train_on_bundle

    train_fn = train_fn or train_on_bundle
    if len(ratios) == 0:
        raise EmptyInputError("no ratios given")
    fractions = [parse_ratio(r) for r in ratios]
    # curriculum starts on the sharpest half of B, which must fill a batch
    start = train_cfg.schedule.start_fraction
    min_b = int(math.ceil(train_cfg.batch_size / start))
    for f in fractions:
        check_ratio_feasible(synth.n_scenes, f, min_b, synth.frames_per_scene)
    rows = []
    for r, f in zip(ratios, fractions):
        bundle = synthesize_bundle(replace(synth, ratio=f))
        sub = None if out_dir is None else Path(out_dir) / _ratio_tag(r)
        g = train_fn(bundle, train_cfg, sub)
        table = evaluate_set(g, deblurrer, bundle.test, bundle.test_ids)
        if sub is not None:
            table.to_csv(sub / "metrics.csv")
        m = table.means()
        rows.append(AblationRow(_ratio_tag(r), f, len(bundle.B), len(bundle.S), m["psnr_input"],
                                m["psnr_direct"], m["psnr_pipeline"], m["psnr_pipeline"] - m["psnr_direct"]))
    return rows


def _ratio_tag(r) -> str:
    if isinstance(r, str):
        return r
    if isinstance(r, (tuple, list)):
        return ":".join(f"{v:g}" for v in r)
    return f"{float(r):g}"


def write_ablation(path, rows: Sequence[AblationRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(AblationRow.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


# --------------------------------------------------------------------------
# converter validation


class _ClassifierNet(nn.Module):
    def __init__(self, width: int = 32, seed: int = 0, highpass: float = 0.0):
        super().__init__()
        self.highpass = highpass
        self.convs = nn.ModuleList([
            nn.Conv2d(3, width, 3, padding=1),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.Conv2d(2 * width, 2 * width, 3, stride=2, padding=1),
        ])
        self.out = nn.Linear(2 * width, 1)
        _seeded_init(self, seed)

    def forward(self, x):
        if self.highpass:
            h = HIGHPASS_SCALE * gaussian_highpass(x, self.highpass)
        else:
            h = 2.0 * x - 1.0
        for c in self.convs:
            h = F.leaky_relu(c(h), 0.2)
        return self.out(h.mean(dim=(2, 3))).squeeze(1)


class KernelClassifier(ClassifierMixin, BaseEstimator):
    """Four-layer CNN labelling an image as known-domain blur (1) or not (0).

    Trained from scratch on its own labelled synthetic images; it never sees
    translator outputs.
    """

    def __init__(self, width: int = 32, iters: int = 1500, batch_size: int = 16, crop: int = 64,
                 lr: float = 1e-3, seed: int = 0, highpass: float = 2.0):
        self.width = width
        self.iters = iters
        self.batch_size = batch_size
        self.crop = crop
        self.lr = lr
        self.seed = seed
        self.highpass = highpass

    def fit(self, X, y):
        imgs = [check_image(im) for im in X]
        labels = np.asarray(y, dtype=np.float32)
        if len(imgs) == 0 or len(imgs) != len(labels):
            raise EmptyInputError("KernelClassifier.fit needs matching non-empty images and labels")
        self.classes_ = np.array([0, 1])
        net = _ClassifierNet(self.width, self.seed, self.highpass)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        rng = np.random.default_rng(self.seed)
        c = min([self.crop] + [min(im.shape[:2]) for im in imgs])
        for t in range(self.iters):
            idx = rng.integers(0, len(imgs), self.batch_size)
            crops = []
            for i in idx:
                h, w = imgs[i].shape[:2]
                a, b = rng.integers(0, h - c + 1), rng.integers(0, w - c + 1)
                crop = np.rot90(imgs[i][a : a + c, b : b + c], int(rng.integers(0, 4)))
                crops.append(np.ascontiguousarray(crop))
            logits = net(to_tensor(crops))
            for g in opt.param_groups:
                g["lr"] = self.lr * (1.0 - t / self.iters)
            loss = F.binary_cross_entropy_with_logits(logits, torch.from_numpy(labels[idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
        self.net_ = net.eval()
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotConfiguredError("KernelClassifier is not trained; call fit() first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        with torch.no_grad():
            p = np.array([float(torch.sigmoid(self.net_(to_tensor(check_image(im))))[0]) for im in X])
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


def classifier_training_set(unknown: BlurDomainSpec = DEFAULT_UNKNOWN_DOMAIN,
                            known: BlurDomainSpec = DEFAULT_KNOWN_DOMAIN, n_scenes: int = 120,
                            size: int = 96, seed: int = 7_000_003) -> tuple[list, np.ndarray]:
    """Fresh scenes blurred once per domain, labelled 1 for ``known`` and 0 for ``unknown``.

    The scene seeds come from their own stream so none of these images
    appear in a synthesized benchmark.
    """
    rng = np.random.default_rng(seed)
    X, y = [], []
    for s in rng.integers(0, 2**63, n_scenes):
        sharp = render_scene(int(s), size)
        X.append(unknown.synthesize(sharp, int(rng.integers(0, 2**63))).blurry)
        y.append(0)
        X.append(known.synthesize(sharp, int(rng.integers(0, 2**63))).blurry)
        y.append(1)
    return X, np.array(y)


@dataclass(frozen=True)
class ConverterReport:
    acc1: float
    acc2: float
    acc1_raw: float
    acc2_raw: float
    acc2_known: Optional[float] = None
    n_images: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def validate_converter(d: Optional[PatchDiscriminator], classifier: KernelClassifier, inputs: Sequence,
                       converted: Sequence, known: Optional[Sequence] = None) -> ConverterReport:
    """Fraction of images judged known-domain by the discriminator (acc1) and the classifier (acc2).

    ``*_raw`` repeat both on the untranslated inputs; ``acc2_known`` is the
    classifier's hit rate on real known-domain images when given.
    """
    if len(inputs) == 0 or len(converted) == 0:
        raise EmptyInputError("validate_converter needs images")
    classifier._check_fitted()

    def d_acc(images):
        if d is None:
            return float("nan")
        dtype = next(d.parameters()).dtype
        with torch.no_grad():
            return float(np.mean([float(d.score(to_tensor(check_image(im), dtype))[0]) > 0.5 for im in images]))

    def c_acc(images):
        return float(np.mean(classifier.predict(images)))

    return ConverterReport(
        acc1=d_acc(converted),
        acc2=c_acc(converted),
        acc1_raw=d_acc(inputs),
        acc2_raw=c_acc(inputs),
        acc2_known=c_acc(known) if known is not None and len(known) else None,
        n_images=len(converted),
    )


__all__ = [
    "METRIC_COLUMNS",
    "AblationRow",
    "ConverterReport",
    "KernelClassifier",
    "MetricsTable",
    "check_ratio_feasible",
    "classifier_training_set",
    "deblur_pipeline",
    "evaluate_set",
    "parse_ratio",
    "ratio_ablation",
    "translate_images",
    "validate_converter",
    "write_ablation",
]
