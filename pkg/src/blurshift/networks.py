"""Translation generator, patch discriminator, fixed feature extractor and the
known-domain deblurrers.

All trainable parts are ``torch.nn.Module`` instances working on NCHW
tensors with values in ``[0, 1]``. Numpy images cross the boundary through
:func:`to_tensor` / :func:`to_images`.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin
from torch import nn

from .blur import BlurDomainSpec, BlurKernel, DEFAULT_KNOWN_DOMAIN, mean_kernel
from .exceptions import (
    BackendLoadError,
    EmptyInputError,
    ImageTooSmallError,
    InvalidRangeError,
    LevelMismatchError,
    ManifestMismatchError,
    NotConfiguredError,
)
from .imaging import check_image, psnr

ARCHIVE_VERSION = 1
LOGIT_CLAMP = 15.0
HIGHPASS_SCALE = 8.0


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack ``(H, W, 3)`` images (or one image) into an ``(N, 3, H, W)`` tensor."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    arr = np.stack([check_image(im) for im in images])
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy()).to(dtype)


def to_images(t: torch.Tensor) -> list[np.ndarray]:
    arr = t.detach().cpu().double().numpy().transpose(0, 2, 3, 1)
    return [np.clip(a, 0.0, 1.0) for a in arr]


def tensor_pyramid(x: torch.Tensor, m: int) -> list[torch.Tensor]:
    """Area-average pyramid of a batch; matches :func:`imaging.build_pyramid` for even sides."""
    levels = [x]
    for _ in range(m - 1):
        prev = levels[-1]
        levels.append(F.avg_pool2d(prev, 2, ceil_mode=True, count_include_pad=False))
    return levels


def gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable per-channel gaussian blur with reflect padding."""
    r = int(3 * sigma + 0.5)
    t = torch.arange(-r, r + 1, dtype=x.dtype, device=x.device)
    g = torch.exp(-(t**2) / (2 * sigma * sigma))
    g = g / g.sum()
    c = x.shape[1]
    lo = F.conv2d(F.pad(x, (r, r, 0, 0), mode="reflect"), g.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
    return F.conv2d(F.pad(lo, (0, 0, r, r), mode="reflect"), g.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)


def gaussian_highpass(x: torch.Tensor, sigma: float) -> torch.Tensor:
    return x - gaussian_blur(x, sigma)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _seeded_init(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu", generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class TranslationGenerator(nn.Module):
    """Three-scale encoder/decoder with image injection at every scale.

    Every scale emits ``clamp(input + tanh(head))``; the heads start at zero
    so a fresh generator is the identity map.

    With ``output_noise`` the finest scale also adds ``scale * z`` for a
    caller-supplied standard normal ``z`` and a learned per-channel
    ``scale`` (zero at init). Without ``z`` the output is the noise-free
    mean, which is what inference uses.
    """

    def __init__(self, widths: Sequence[int] = (16, 32, 48), seed: int = 0, zero_heads: bool = True,
                 output_noise: bool = False):
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        self.output_noise = bool(output_noise)
        self.levels = len(self.widths)
        c = self.widths
        self.inject = nn.ModuleList([nn.Conv2d(3, ci, 3, padding=1) for ci in c])
        self.down = nn.ModuleList([nn.Conv2d(c[i], c[i + 1], 3, stride=2, padding=1) for i in range(self.levels - 1)])
        self.fuse_in = nn.ModuleList([nn.Conv2d(2 * c[i], c[i], 1) for i in range(1, self.levels)])
        self.enc = nn.ModuleList([ResBlock(ci) for ci in c])
        self.up = nn.ModuleList([nn.Conv2d(c[i + 1], c[i], 3, padding=1) for i in range(self.levels - 1)])
        self.fuse_out = nn.ModuleList([nn.Conv2d(2 * c[i], c[i], 1) for i in range(self.levels - 1)])
        self.dec = nn.ModuleList([ResBlock(ci) for ci in c])
        self.heads = nn.ModuleList([nn.Conv2d(ci, 3, 3, padding=1) for ci in c])
        self.noise_scale = nn.Parameter(torch.zeros(3)) if self.output_noise else None
        _seeded_init(self, seed)
        if zero_heads:
            for h in self.heads:
                nn.init.zeros_(h.weight)
                nn.init.zeros_(h.bias)

    def manifest(self) -> dict:
        return {"kind": "TranslationGenerator", "widths": list(self.widths), "output_noise": self.output_noise}

    def forward(self, pyramid: Sequence[torch.Tensor], noise: Optional[torch.Tensor] = None) -> list[torch.Tensor]:
        if len(pyramid) != self.levels:
            raise LevelMismatchError(f"generator expects {self.levels} levels, got {len(pyramid)}")
        feats = []
        h = None
        for i, img in enumerate(pyramid):
            z = F.relu(self.inject[i](img))
            if i > 0:
                d = F.relu(self.down[i - 1](h))
                z = F.relu(self.fuse_in[i - 1](torch.cat([d, z], dim=1)))
            h = self.enc[i](z)
            feats.append(h)
        outs = [None] * self.levels
        h = feats[-1]
        for i in reversed(range(self.levels)):
            if i < self.levels - 1:
                u = F.interpolate(h, size=feats[i].shape[-2:], mode="bilinear", align_corners=False)
                u = F.relu(self.up[i](u))
                h = F.relu(self.fuse_out[i](torch.cat([u, feats[i]], dim=1)))
            h = self.dec[i](h)
            out = pyramid[i] + torch.tanh(self.heads[i](h))
            if i == 0 and noise is not None and self.noise_scale is not None:
                out = out + self.noise_scale.view(1, -1, 1, 1) * noise
            outs[i] = torch.clamp(out, 0.0, 1.0)
        return outs

    def translate(self, x: torch.Tensor, noise: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self(tensor_pyramid(x, self.levels), noise)[0]


class PatchDiscriminator(nn.Module):
    """Strided convolutions producing a grid of per-patch scores.

    ``stem`` adds that many full-resolution channels ahead of the first
    strided layer, so fine-scale blur cues survive downsampling.
    ``highpass`` > 0 feeds the network ``x - gaussian(x, highpass)`` instead
    of ``x``, which hides tone and colour and leaves only local structure.
    ``lowpass`` > 0 additionally smooths the input first, turning the view
    into a band-pass that ignores pixel-level noise.
    """

    def __init__(self, widths: Sequence[int] = (32, 64, 64), seed: int = 0, zero_final: bool = False,
                 stem: int = 0, highpass: float = 0.0, lowpass: float = 0.0):
        super().__init__()
        if not (highpass >= 0 and lowpass >= 0):
            raise InvalidRangeError(f"filter sigmas must be >= 0, got highpass={highpass} lowpass={lowpass}")
        self.widths = tuple(int(w) for w in widths)
        self.stem_width = int(stem)
        self.highpass = float(highpass)
        self.lowpass = float(lowpass)
        layers = []
        cin = 3
        if self.stem_width:
            layers.append(nn.Conv2d(cin, self.stem_width, 3, padding=1))
            cin = self.stem_width
        for w in self.widths:
            layers.append(nn.Conv2d(cin, w, 3, stride=2, padding=1))
            cin = w
        self.body = nn.ModuleList(layers)
        self.final = nn.Conv2d(cin, 1, 3, padding=1)
        self.min_side = max(2 ** len(self.widths), int(3 * max(self.highpass, self.lowpass) + 0.5) + 1)
        _seeded_init(self, seed)
        if zero_final:
            nn.init.zeros_(self.final.weight)
            nn.init.zeros_(self.final.bias)

    def manifest(self) -> dict:
        return {"kind": "PatchDiscriminator", "widths": list(self.widths), "stem": self.stem_width,
                "highpass": self.highpass, "lowpass": self.lowpass}

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < self.min_side:
            raise ImageTooSmallError(f"discriminator needs sides >= {self.min_side}, got {tuple(x.shape[-2:])}")
        if self.lowpass:
            x = gaussian_blur(x, self.lowpass)
        if self.highpass:
            h = HIGHPASS_SCALE * gaussian_highpass(x, self.highpass)
        else:
            h = 2.0 * x - 1.0
        for conv in self.body:
            h = F.leaky_relu(conv(h), 0.2)
        return torch.clamp(self.final(h), -LOGIT_CLAMP, LOGIT_CLAMP)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Per-patch scores in (0, 1), shape ``(N, 1, h, w)``."""
        return torch.sigmoid(self.logits(x))

    def score(self, x: torch.Tensor) -> torch.Tensor:
        """Mean patch score per image, shape ``(N,)``."""
        return self(x).mean(dim=(1, 2, 3))


class FeatureExtractor(nn.Module):
    """Frozen convolutional feature pyramid used by the perceptual loss.

    The default backend is a seeded random stack, which needs no download.
    ``from_archive`` loads externally supplied weights instead.
    """

    def __init__(self, channels: Sequence[int] = (16, 32, 32), seed: int = 1234, gain: float = 1.0):
        super().__init__()
        self.channels = tuple(int(c) for c in channels)
        self.gain = float(gain)
        self.stem = nn.Conv2d(3, self.channels[0], 3, padding=1)
        convs = []
        cin = self.channels[0]
        for c in self.channels:
            convs.append(nn.Conv2d(cin, c, 3, padding=1))
            cin = c
        self.convs = nn.ModuleList(convs)
        self.seed = seed
        _seeded_init(self, seed)
        self.requires_grad_(False)
        self.eval()

    def manifest(self) -> dict:
        return {
            "kind": "FeatureExtractor",
            "maps": [{"channels": c, "stride": 2**i} for i, c in enumerate(self.channels)],
        }

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = F.relu(self.stem(2.0 * x - 1.0))
        out = []
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = F.avg_pool2d(h, 2, ceil_mode=True)
            h = F.relu(conv(h))
            out.append(self.gain * h)
        return out

    @classmethod
    def from_archive(cls, path) -> "FeatureExtractor":
        """Load weights from an ``.npz`` archive.

        The archive holds a JSON ``manifest`` entry (``{"channels": [...]}``)
        plus ``stem.weight``, ``stem.bias`` and ``convs.{i}.weight`` /
        ``convs.{i}.bias`` arrays with the usual conv shapes.
        """
        try:
            with np.load(path, allow_pickle=False) as z:
                meta = json.loads(str(z["manifest"]))
                model = cls(channels=meta["channels"], seed=0)
                state = {k: torch.from_numpy(np.asarray(z[k], dtype=np.float32)) for k in model.state_dict()}
            model.load_state_dict(state, strict=True)
        except (OSError, KeyError, ValueError, RuntimeError, TypeError) as exc:
            raise BackendLoadError(f"cannot load feature extractor from {path}: {exc}") from exc
        model.requires_grad_(False)
        return model.eval()

    def to_archive(self, path) -> None:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        np.savez(path, manifest=json.dumps({"channels": list(self.channels)}), **arrays)


# --------------------------------------------------------------------------
# parameter archives


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def save_params(path, module: nn.Module, config: Optional[dict] = None) -> None:
    payload = {
        "format_version": ARCHIVE_VERSION,
        "manifest": module.manifest(),
        "config_hash": config_hash(config or {}),
        "state_dict": module.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_params(path, module: nn.Module) -> dict:
    """Load an archive into ``module``; the stored manifest must match exactly."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != ARCHIVE_VERSION:
        raise ManifestMismatchError(f"unsupported archive version {payload.get('format_version')}")
    if payload["manifest"] != module.manifest():
        raise ManifestMismatchError(f"archive manifest {payload['manifest']} != model {module.manifest()}")
    module.load_state_dict(payload["state_dict"])
    return payload


def build_generator(manifest: dict, seed: int = 0) -> TranslationGenerator:
    if manifest.get("kind") != "TranslationGenerator":
        raise ManifestMismatchError(f"not a generator manifest: {manifest}")
    return TranslationGenerator(widths=manifest["widths"], seed=seed, output_noise=manifest.get("output_noise", False))


# --------------------------------------------------------------------------
# known-domain deblurrers


def _embed_kernel(kernel: np.ndarray, shape) -> np.ndarray:
    """Place a centred kernel at the origin of a periodic grid."""
    out = np.zeros(shape)
    s = kernel.shape[0]
    out[:s, :s] = kernel
    return np.roll(out, (-(s // 2), -(s // 2)), axis=(0, 1))


def wiener_deconvolve(img: np.ndarray, kernel: BlurKernel, nsr: float) -> np.ndarray:
    """Wiener filter on the half-sample symmetric extension; returns unclamped values.

    For kernels that are mirror symmetric along both axes this exactly inverts
    reflect-padded convolution as ``nsr -> 0``.
    """
    h, w = img.shape[:2]
    ext = np.concatenate([img, img[:, ::-1]], axis=1)
    ext = np.concatenate([ext, ext[::-1]], axis=0)
    K = np.fft.fft2(_embed_kernel(kernel.weights, ext.shape[:2]))
    filt = np.conj(K) / (np.abs(K) ** 2 + nsr)
    Y = np.fft.fft2(ext, axes=(0, 1))
    out = np.real(np.fft.ifft2(Y * filt[..., None], axes=(0, 1)))
    return out[:h, :w]


NSR_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


class WienerDeblurrer(TransformerMixin, BaseEstimator):
    """Closed-form deblurrer for a known blur domain.

    ``fit`` resolves the filter kernel: an explicit ``kernel`` wins, otherwise
    the Monte-Carlo mean kernel of ``domain`` is used. With ``nsr="auto"`` the
    noise-to-signal ratio is picked from ``nsr_grid`` by mean PSNR on the
    blurry/sharp pairs passed as ``X``/``y``.
    """

    def __init__(self, domain: Optional[BlurDomainSpec] = None, kernel: Optional[BlurKernel] = None,
                 nsr=1e-3, n_kernel_samples: int = 256, seed: int = 0, nsr_grid: Sequence[float] = NSR_GRID):
        self.domain = domain
        self.kernel = kernel
        self.nsr = nsr
        self.n_kernel_samples = n_kernel_samples
        self.seed = seed
        self.nsr_grid = nsr_grid

    def fit(self, X=None, y=None):
        if self.kernel is not None:
            self.kernel_ = self.kernel
        else:
            domain = self.domain if self.domain is not None else DEFAULT_KNOWN_DOMAIN
            self.kernel_ = mean_kernel(domain, self.n_kernel_samples, self.seed)
        if self.nsr == "auto":
            if X is None or y is None or len(X) == 0 or len(X) != len(y):
                raise EmptyInputError("nsr='auto' needs matching blurry (X) and sharp (y) images")
            blurry = [check_image(im) for im in X]
            sharp = [check_image(im) for im in y]
            scores = [np.mean([psnr(np.clip(wiener_deconvolve(b, self.kernel_, v), 0.0, 1.0), s)
                               for b, s in zip(blurry, sharp)]) for v in self.nsr_grid]
            self.nsr_ = float(self.nsr_grid[int(np.argmax(scores))])
            self.calibration_ = dict(zip(map(float, self.nsr_grid), map(float, scores)))
        else:
            if not (isinstance(self.nsr, (int, float)) and self.nsr >= 0):
                raise InvalidRangeError(f"nsr must be >= 0 or 'auto', got {self.nsr!r}")
            self.nsr_ = float(self.nsr)
        return self

    def _check_fitted(self):
        if not hasattr(self, "kernel_"):
            raise NotConfiguredError("WienerDeblurrer is not configured; call fit() first")

    def predict(self, img, clip: bool = True) -> np.ndarray:
        self._check_fitted()
        out = wiener_deconvolve(check_image(img), self.kernel_, self.nsr_)
        return np.clip(out, 0.0, 1.0) if clip else out

    def transform(self, X):
        return [self.predict(im) for im in X]


class ResidualDeblurNet(nn.Module):
    def __init__(self, width: int = 32, blocks: int = 4, seed: int = 0):
        super().__init__()
        self.width, self.blocks = width, blocks
        self.head = nn.Conv2d(3, width, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(width) for _ in range(blocks)])
        self.tail = nn.Conv2d(width, 3, 3, padding=1)
        _seeded_init(self, seed)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def manifest(self) -> dict:
        return {"kind": "ResidualDeblurNet", "width": self.width, "blocks": self.blocks}

    def forward(self, x):
        return torch.clamp(x + self.tail(self.body(F.relu(self.head(x)))), 0.0, 1.0)


class ResidualDeblurrer(TransformerMixin, BaseEstimator):
    """Small residual CNN trained supervised on paired known-domain data."""

    def __init__(self, width: int = 32, blocks: int = 4, iters: int = 2000, batch_size: int = 8,
                 crop: int = 48, lr: float = 1e-3, seed: int = 0):
        self.width = width
        self.blocks = blocks
        self.iters = iters
        self.batch_size = batch_size
        self.crop = crop
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        """``X`` are blurry images, ``y`` the matching sharp images."""
        blurry = to_tensor(X)
        sharp = to_tensor(y)
        net = ResidualDeblurNet(self.width, self.blocks, self.seed)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        rng = np.random.default_rng(self.seed)
        n, _, h, w = blurry.shape
        c = min(self.crop, h, w)
        for t in range(self.iters):
            idx = rng.integers(0, n, self.batch_size)
            oy = rng.integers(0, h - c + 1, self.batch_size)
            ox = rng.integers(0, w - c + 1, self.batch_size)
            xb = torch.stack([blurry[i, :, a:a + c, b:b + c] for i, a, b in zip(idx, oy, ox)])
            yb = torch.stack([sharp[i, :, a:a + c, b:b + c] for i, a, b in zip(idx, oy, ox)])
            lr = self.lr * (1.0 - t / self.iters)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = F.l1_loss(net(xb), yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
        self.net_ = net.eval()
        return self

    def predict(self, img) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise NotConfiguredError("ResidualDeblurrer is not trained; call fit() first")
        with torch.no_grad():
            return to_images(self.net_(to_tensor(img)))[0]

    def transform(self, X):
        return [self.predict(im) for im in X]
