"""Training objectives for the blur translator and its discriminator."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Callable, Sequence

import torch

from .exceptions import InvalidRangeError, LevelMismatchError, NonFiniteError, ScoreDomainError, ShapeMismatchError


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 0.8
    lambda_grad: float = 0.005

    def __post_init__(self):
        for name, v in (("lambda_rec", self.lambda_rec), ("lambda_grad", self.lambda_grad)):
            if not (math.isfinite(v) and v >= 0):
                raise InvalidRangeError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    """Per-batch scalars. ``adv_d`` is the adversarial term seen by the discriminator step."""

    adv: float
    rec: float
    grad_pen: float
    total_g: float
    total_d: float
    adv_d: float

    def as_row(self) -> tuple:
        return astuple(self)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def adversarial_loss(d_scores_real, d_scores_fake) -> torch.Tensor:
    """``mean log D(real) + mean log(1 - D(fake))``.

    The translator minimises this value and the discriminator maximises it.
    """
    real = _as_tensor(d_scores_real)
    fake = _as_tensor(d_scores_fake)
    for name, s in (("real", real), ("fake", fake)):
        if s.numel() == 0:
            raise ScoreDomainError(f"no {name} scores")
        if not bool(((s > 0) & (s < 1)).all()):
            raise ScoreDomainError(f"{name} scores must lie strictly inside (0, 1)")
    return torch.log(real).mean() + torch.log1p(-fake).mean()


def non_saturating_generator_loss(d_scores_fake) -> torch.Tensor:
    fake = _as_tensor(d_scores_fake)
    return -torch.log(fake).mean()


def interpolate(y_real: torch.Tensor, y_fake: torch.Tensor, eps) -> torch.Tensor:
    """``eps * y_real + (1 - eps) * y_fake`` with one ratio per batch element."""
    if y_real.shape != y_fake.shape:
        raise ShapeMismatchError(f"interpolation shapes differ: {tuple(y_real.shape)} vs {tuple(y_fake.shape)}")
    eps = torch.as_tensor(eps, dtype=y_real.dtype)
    if eps.ndim == 0:
        eps = eps.expand(y_real.shape[0])
    if bool(((eps < 0) | (eps > 1)).any()):
        raise InvalidRangeError("mixing ratio must lie in [0, 1]")
    eps = eps.view(-1, *([1] * (y_real.ndim - 1)))
    return eps * y_real + (1.0 - eps) * y_fake


def gradient_penalty(d: Callable, y_real: torch.Tensor, y_fake: torch.Tensor, eps,
                     create_graph: bool = True) -> torch.Tensor:
    """Mean over the batch of ``(||grad_yhat D(yhat)||_2 - 1)^2``.

    ``d`` maps a batch to per-image scalar scores (for a patch discriminator,
    its mean patch score). The gradient norm runs over every pixel and channel
    of one interpolated image.
    """
    y_hat = interpolate(y_real.detach(), y_fake.detach(), eps).requires_grad_(True)
    scores = d(y_hat)
    (grad,) = torch.autograd.grad(scores.sum(), y_hat, create_graph=create_graph)
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def reconstruction_loss(phi: Callable, pyr_in: Sequence[torch.Tensor], gen_out: Sequence[torch.Tensor]) -> torch.Tensor:
    """Multi-scale perceptual L1 between the input pyramid and the generator output.

    At each level the summed absolute feature difference of one image is
    divided by the element count of that level's feature maps; levels and the
    batch are then averaged.
    """
    if len(pyr_in) != len(gen_out):
        raise LevelMismatchError(f"{len(pyr_in)} input levels vs {len(gen_out)} output levels")
    per_level = []
    for i, (a, b) in enumerate(zip(pyr_in, gen_out)):
        if a.shape != b.shape:
            raise LevelMismatchError(f"level {i + 1}: input {tuple(a.shape)} vs output {tuple(b.shape)}")
        fa, fb = phi(a), phi(b)
        t_i = sum(f[0].numel() for f in fa)
        dist = sum((x - y).abs().flatten(1).sum(1) for x, y in zip(fa, fb))
        per_level.append((dist / t_i).mean())
    return torch.stack(per_level).mean()


def total_losses(adv, rec, grad_pen, w: LossWeights = LossWeights(), adv_d=None) -> LossReport:
    adv_d = adv if adv_d is None else adv_d
    vals = [float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for v in (adv, rec, grad_pen, adv_d)]
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteError(f"non-finite loss input: adv={vals[0]} rec={vals[1]} grad_pen={vals[2]} adv_d={vals[3]}")
    adv, rec, grad_pen, adv_d = vals
    return LossReport(
        adv=adv,
        rec=rec,
        grad_pen=grad_pen,
        total_g=adv + w.lambda_rec * rec,
        total_d=-adv_d + w.lambda_grad * grad_pen,
        adv_d=adv_d,
    )
