"""scikit-learn style front end: a blur translator estimator and the full deblurring pipeline."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline

from .data import AugmentationPolicy
from .evaluation import translate_images
from .exceptions import EmptyInputError, NotConfiguredError
from .imaging import check_image
from .losses import LossWeights
from .networks import WienerDeblurrer, to_tensor
from .training import Models, TrainConfig, TrainingData, run_training


def check_image_list(X, name: str = "X", min_side: int = 8) -> list[np.ndarray]:
    """Validate a non-empty sequence of RGB images (a single image is wrapped)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    if X is None or len(X) == 0:
        raise EmptyInputError(f"{name} is empty")
    return [check_image(im, min_side=min_side, name=f"{name}[{i}]") for i, im in enumerate(X)]


class BlurTranslator(TransformerMixin, BaseEstimator):
    """Learns to move images from an unknown blur domain into a known one.

    ``fit(X, y)`` takes unknown-domain images ``X`` and known-domain images
    ``y``; the two sets are unpaired and may differ in size. ``transform``
    returns translated images.
    """

    def __init__(self, total_iters: int = 20000, batch_size: int = 8, crop: int = 64, lr_initial: float = 2e-4,
                 lambda_rec: float = 0.8, lambda_grad: float = 0.005, feature_gain: float = 10.0,
                 generator_widths: Sequence[int] = (16, 24, 32), discriminator_widths: Sequence[int] = (32, 64, 64),
                 discriminator_highpass: float = 2.0, augment: bool = True, seed: int = 0, out_dir: Optional[str] = None):
        self.total_iters = total_iters
        self.batch_size = batch_size
        self.crop = crop
        self.lr_initial = lr_initial
        self.lambda_rec = lambda_rec
        self.lambda_grad = lambda_grad
        self.feature_gain = feature_gain
        self.generator_widths = generator_widths
        self.discriminator_widths = discriminator_widths
        self.discriminator_highpass = discriminator_highpass
        self.augment = augment
        self.seed = seed
        self.out_dir = out_dir

    def train_config(self) -> TrainConfig:
        aug = AugmentationPolicy(crop=self.crop) if self.augment else AugmentationPolicy.disabled(self.crop)
        return TrainConfig(
            total_iters=self.total_iters,
            batch_size=self.batch_size,
            crop=self.crop,
            lr_initial=self.lr_initial,
            weights=LossWeights(self.lambda_rec, self.lambda_grad),
            feature_gain=self.feature_gain,
            generator_widths=tuple(self.generator_widths),
            discriminator_widths=tuple(self.discriminator_widths),
            discriminator_highpass=self.discriminator_highpass,
            augmentation=aug,
            seed=self.seed,
        )

    def fit(self, X, y):
        B = check_image_list(X, "X")
        K = check_image_list(y, "y")
        cfg = self.train_config()
        self.models_ = Models.from_config(cfg)
        self.state_ = run_training(TrainingData.from_images(B, K), self.models_, cfg, self.out_dir)
        self.generator_ = self.models_.generator
        self.n_iter_ = self.state_.iteration
        return self

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotConfiguredError("BlurTranslator is not fitted; call fit() first")

    def transform(self, X) -> list[np.ndarray]:
        self._check_fitted()
        return translate_images(self.generator_, check_image_list(X, "X"))

    def discriminator_score(self, X) -> np.ndarray:
        """Mean patch score of the trained discriminator for each image."""
        self._check_fitted()
        d = self.models_.discriminator
        with torch.no_grad():
            return np.array([float(d.score(to_tensor(im))[0]) for im in check_image_list(X, "X")])


def make_deblur_pipeline(translator: BlurTranslator, deblurrer: Optional[WienerDeblurrer] = None) -> Pipeline:
    """Translate, then deblur with a known-domain model; ``transform`` yields deblurred images."""
    return Pipeline([("translate", translator), ("deblur", deblurrer or WienerDeblurrer())])


__all__ = ["BlurTranslator", "check_image_list", "make_deblur_pipeline"]
