"""Blur kernels, parametric blur domains and the blur forward model.

A blurry observation is ``y = clamp(x * k + noise)`` with reflect-padded
convolution. Kernels can be sampled from a :class:`BlurDomainSpec`, estimated
from a sharp/blurry pair, and transferred onto new sharp images.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .exceptions import (
    DegenerateImageError,
    EmptyInputError,
    InvalidRangeError,
    KernelTooLargeError,
)
from .imaging import IDENTITY_CRF, CameraResponse, check_image, check_same_shape

FAMILIES = ("linear-motion", "gaussian", "frame-average-trajectory")
_RASTER_OVERSAMPLE = 16


@dataclass(frozen=True, eq=False)
class BlurKernel:
    """Odd-sized, nonnegative 2-D kernel whose weights sum to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise InvalidRangeError(f"kernel must be square with odd side, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidRangeError("kernel weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-8:
            raise InvalidRangeError(f"kernel weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def delta(cls, size: int = 1) -> "BlurKernel":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(w)

    @classmethod
    def from_unnormalized(cls, w) -> "BlurKernel":
        w = np.clip(np.asarray(w, dtype=np.float64), 0.0, None)
        s = w.sum()
        if not s > 0:
            raise DegenerateImageError("kernel has no positive mass")
        return cls(w / s)

    def padded(self, size: int) -> np.ndarray:
        """Weights centred in a ``size x size`` array."""
        if size < self.size or (size - self.size) % 2:
            raise InvalidRangeError(f"cannot centre a {self.size} kernel in {size}")
        p = (size - self.size) // 2
        return np.pad(self.weights, p)

    def __eq__(self, other):
        return isinstance(other, BlurKernel) and np.array_equal(self.weights, other.weights)

    __hash__ = None


def _check_range(name, lo_hi, lower=0.0):
    lo, hi = lo_hi
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi or lo < lower:
        raise InvalidRangeError(f"{name} range {lo_hi} is empty or invalid")


@dataclass(frozen=True)
class BlurDomainSpec:
    """A parametric family of blur operators plus noise and camera response.

    Angles are in degrees. ``length_range`` is in pixels and drives the two
    motion families; ``sigma_range`` drives the gaussian family.
    """

    family: str = "linear-motion"
    length_range: tuple = (7.0, 15.0)
    angle_range: tuple = (0.0, 180.0)
    sigma_range: tuple = (1.0, 2.0)
    noise_sigma: float = 0.01
    crf_gamma: Optional[float] = None
    kernel_size: Optional[int] = None
    trajectory_turn: float = 0.35

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidRangeError(f"unknown blur family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "length_range", tuple(float(v) for v in self.length_range))
        object.__setattr__(self, "angle_range", tuple(float(v) for v in self.angle_range))
        object.__setattr__(self, "sigma_range", tuple(float(v) for v in self.sigma_range))
        if self.noise_sigma < 0:
            raise InvalidRangeError("noise_sigma must be >= 0")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise InvalidRangeError("kernel_size must be a positive odd integer")

    @property
    def crf(self) -> CameraResponse:
        return IDENTITY_CRF if self.crf_gamma is None else CameraResponse(self.crf_gamma)

    def validate_ranges(self) -> None:
        if self.family == "gaussian":
            _check_range("sigma", self.sigma_range)
        else:
            _check_range("length", self.length_range)
            lo, hi = self.angle_range
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidRangeError(f"angle range {self.angle_range} is empty or invalid")

    def default_kernel_size(self) -> int:
        if self.kernel_size is not None:
            return self.kernel_size
        if self.family == "gaussian":
            return 2 * math.ceil(3.0 * self.sigma_range[1]) + 1
        return 2 * math.ceil(self.length_range[1] / 2.0) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("length_range", "angle_range", "sigma_range"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlurDomainSpec":
        return cls(**d)

    def synthesize(self, sharp, seed) -> "BlurPair":
        """Draw a kernel and blur ``sharp`` with it, honouring the camera response."""
        rng = np.random.default_rng(seed)
        kseed, nseed = rng.integers(0, 2**63, size=2)
        kernel = sample_kernel(self, int(kseed))
        sharp = check_image(sharp)
        if self.crf_gamma is None:
            blurry = apply_blur(sharp, kernel, self.noise_sigma, int(nseed))
        else:
            crf = self.crf
            linear = apply_blur(crf.inverse(sharp), kernel, 0.0)
            blurry = _add_noise(crf.apply(linear), self.noise_sigma, int(nseed))
        return BlurPair(blurry=blurry, sharp=sharp, kernel=kernel)


DEFAULT_UNKNOWN_DOMAIN = BlurDomainSpec("linear-motion", length_range=(7.0, 15.0), angle_range=(0.0, 180.0))
DEFAULT_KNOWN_DOMAIN = BlurDomainSpec("gaussian", sigma_range=(1.0, 2.0))


@dataclass(frozen=True, eq=False)
class BlurPair:
    blurry: np.ndarray
    sharp: np.ndarray
    kernel: Optional[BlurKernel] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = check_image(self.blurry, name="blurry")
        s = check_image(self.sharp, name="sharp")
        check_same_shape(b, s)
        object.__setattr__(self, "blurry", b)
        object.__setattr__(self, "sharp", s)


# --------------------------------------------------------------------------
# kernel construction


def gaussian_kernel(sigma: float, size: Optional[int] = None) -> BlurKernel:
    if sigma < 0:
        raise InvalidRangeError("sigma must be >= 0")
    if size is None:
        size = 2 * math.ceil(3.0 * sigma) + 1
    if sigma == 0:
        return BlurKernel.delta(size)
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    return BlurKernel.from_unnormalized(np.outer(g, g))


def _rasterize(points: np.ndarray, size: int) -> np.ndarray:
    """Nearest-pixel splat of equally weighted (x, y) points, origin at the centre."""
    r = size // 2
    ix = np.rint(points[:, 0]).astype(int) + r
    iy = np.rint(points[:, 1]).astype(int) + r
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= size or iy.max() >= size:
        raise KernelTooLargeError(f"blur path does not fit in a {size}x{size} kernel")
    w = np.zeros((size, size))
    np.add.at(w, (iy, ix), 1.0)
    return w


def motion_kernel(length: float, angle_deg: float, size: Optional[int] = None) -> BlurKernel:
    """Uniform line segment of ``length`` pixels centred on the origin.

    The segment is sampled at cell midpoints and splatted to the nearest
    pixel, so axis-aligned segments of odd integer length give exact boxes.
    """
    if length <= 0:
        raise InvalidRangeError("motion length must be positive")
    if size is None:
        size = 2 * math.ceil(length / 2.0) + 1
    n = _RASTER_OVERSAMPLE * max(1, math.ceil(length))
    t = -length / 2.0 + (np.arange(n) + 0.5) * (length / n)
    theta = math.radians(angle_deg)
    # image rows grow downwards, so a positive angle points up-right
    pts = np.stack([t * math.cos(theta), -t * math.sin(theta)], axis=1)
    return BlurKernel.from_unnormalized(_rasterize(pts, size))


def trajectory_kernel(length: float, angle_deg: float, turn: float, rng, size: Optional[int] = None) -> BlurKernel:
    """Camera-shake style kernel: a random curved path of total ``length`` pixels."""
    if length <= 0:
        raise InvalidRangeError("trajectory length must be positive")
    if size is None:
        size = 2 * math.ceil(length / 2.0) + 1
    n = _RASTER_OVERSAMPLE * max(1, math.ceil(length))
    step = length / n
    heading = math.radians(angle_deg) + np.cumsum(rng.normal(0.0, turn / math.sqrt(n), n))
    path = np.cumsum(np.stack([np.cos(heading), -np.sin(heading)], axis=1) * step, axis=0)
    path -= step * np.stack([np.cos(heading), -np.sin(heading)], axis=1) / 2.0
    centre = (path.max(axis=0) + path.min(axis=0)) / 2.0
    return BlurKernel.from_unnormalized(_rasterize(path - centre, size))


def sample_kernel(spec: BlurDomainSpec, seed) -> BlurKernel:
    spec.validate_ranges()
    rng = np.random.default_rng(seed)
    size = spec.default_kernel_size()
    if spec.family == "gaussian":
        return gaussian_kernel(rng.uniform(*spec.sigma_range), size)
    length = rng.uniform(*spec.length_range)
    angle = rng.uniform(*spec.angle_range)
    if spec.family == "linear-motion":
        return motion_kernel(length, angle, size)
    return trajectory_kernel(length, angle, spec.trajectory_turn, rng, size)


def mean_kernel(spec: BlurDomainSpec, n: int = 256, seed: int = 0) -> BlurKernel:
    """Monte-Carlo expected kernel of a domain."""
    seeds = np.random.default_rng(seed).integers(0, 2**63, size=n)
    acc = sum(sample_kernel(spec, int(s)).weights for s in seeds)
    return BlurKernel.from_unnormalized(acc)


def kernel_distance(spec_a: BlurDomainSpec, spec_b: BlurDomainSpec, n: int = 64, seed: int = 0) -> float:
    """Mean L2 distance between kernels drawn independently from two domains.

    Kernels are zero-padded to a common size before comparison. This is a
    diagnostic only; it does not define either domain.
    """
    rng = np.random.default_rng(seed)
    ka = [sample_kernel(spec_a, int(s)) for s in rng.integers(0, 2**63, size=n)]
    kb = [sample_kernel(spec_b, int(s)) for s in rng.integers(0, 2**63, size=n)]
    size = max(k.size for k in ka + kb)
    A = np.stack([k.padded(size).ravel() for k in ka])
    B = np.stack([k.padded(size).ravel() for k in kb])
    d = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1))
    return float(d.mean())


# --------------------------------------------------------------------------
# forward model


def _add_noise(img, noise_sigma, seed):
    if noise_sigma > 0:
        img = img + np.random.default_rng(seed).normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def convolve(img: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Per-channel reflect-padded convolution without clamping or noise."""
    if kernel.size > min(img.shape[:2]):
        raise KernelTooLargeError(f"{kernel.size}x{kernel.size} kernel exceeds image {img.shape[:2]}")
    w = kernel.weights
    return np.stack([ndimage.convolve(img[..., c], w, mode="reflect") for c in range(img.shape[2])], axis=-1)


def apply_blur(x, k: BlurKernel, noise_sigma: float = 0.0, seed=None) -> np.ndarray:
    x = check_image(x)
    return _add_noise(convolve(x, k), noise_sigma, seed)


def frame_average_blur(frames: Sequence, crf: CameraResponse = IDENTITY_CRF) -> np.ndarray:
    """Average frames in linear radiance and map the result back through ``crf``."""
    if len(frames) == 0:
        raise EmptyInputError("frame_average_blur needs at least one frame")
    arrs = [check_image(f, name=f"frame {i}") for i, f in enumerate(frames)]
    for a in arrs[1:]:
        check_same_shape(arrs[0], a)
    linear = np.mean([crf.inverse(a) for a in arrs], axis=0)
    return crf.apply(linear)


def shifted_frames(sharp, kernel_path: np.ndarray) -> list[np.ndarray]:
    """Integer-shifted copies of ``sharp`` along a path of (dx, dy) offsets."""
    sharp = check_image(sharp)
    pad = int(np.abs(kernel_path).max()) + 1
    padded = np.pad(sharp, ((pad, pad), (pad, pad), (0, 0)), mode="symmetric")
    h, w = sharp.shape[:2]
    out = []
    for dx, dy in np.rint(kernel_path).astype(int):
        out.append(padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w])
    return out


# --------------------------------------------------------------------------
# kernel estimation and transfer


def _sym_extend(img: np.ndarray) -> np.ndarray:
    top = np.concatenate([img, img[:, ::-1]], axis=1)
    return np.concatenate([top, top[::-1]], axis=0)


def _estimate_spatial(x, y, support, ridge):
    r = support // 2
    xp = np.pad(x, ((r, r), (r, r), (0, 0)), mode="symmetric")
    rows = []
    for c in range(x.shape[2]):
        win = sliding_window_view(xp[..., c], (support, support))
        rows.append(win.reshape(-1, support * support))
    A = np.concatenate(rows, axis=0)
    b = y.transpose(2, 0, 1).reshape(-1)
    gram = A.T @ A + ridge * np.eye(A.shape[1])
    flipped = np.linalg.solve(gram, A.T @ b)
    return flipped.reshape(support, support)[::-1, ::-1]


def _estimate_fourier(x, y, support, ridge):
    xe = _sym_extend(x)
    ye = _sym_extend(y)
    X = np.fft.fft2(xe, axes=(0, 1))
    Y = np.fft.fft2(ye, axes=(0, 1))
    num = (np.conj(X) * Y).sum(-1)
    den = (np.abs(X) ** 2).sum(-1) + ridge
    k = np.fft.fftshift(np.real(np.fft.ifft2(num / den)))
    cy, cx = k.shape[0] // 2, k.shape[1] // 2
    r = support // 2
    return k[cy - r : cy + r + 1, cx - r : cx + r + 1]


def estimate_kernel(pair: BlurPair, support: int = 15, ridge: float = 1e-6, method: str = "spatial") -> BlurKernel:
    """Ridge-regularised least-squares blur kernel from a sharp/blurry pair.

    Minimises ``||x * k - y||^2 + ridge * ||k||^2`` over kernels of side
    ``support``, then projects onto the nonnegative simplex.

    ``method="spatial"`` solves the normal equations for the reflect-padded
    forward model exactly. ``method="fourier"`` uses the closed form on the
    symmetric periodic extension, which is only exact for kernels that are
    mirror symmetric along both axes (e.g. gaussians).
    """
    x, y = pair.sharp, pair.blurry
    if support < 1 or support % 2 == 0:
        raise InvalidRangeError("support must be a positive odd integer")
    if support > min(x.shape[:2]) // 2:
        raise KernelTooLargeError(f"support {support} exceeds half the image side {min(x.shape[:2])}")
    # Parseval: energy beyond DC equals N * variance per channel
    if np.max(x.reshape(-1, x.shape[2]).var(axis=0)) < 1e-12:
        raise DegenerateImageError("sharp image has no spectral content beyond DC")
    if method == "spatial":
        k = _estimate_spatial(x, y, support, ridge)
    elif method == "fourier":
        k = _estimate_fourier(x, y, support, ridge)
    else:
        raise ValueError(f"unknown estimation method {method!r}")
    return BlurKernel.from_unnormalized(k)


def transfer_kernel(
    sharp,
    source_pair: BlurPair,
    mode: str = "exact",
    noise_sigma: float = 0.0,
    seed=None,
    *,
    support: Optional[int] = None,
    ridge: float = 1e-6,
) -> np.ndarray:
    """Re-blur ``sharp`` with the blur carried by ``source_pair``."""
    if mode == "exact":
        if source_pair.kernel is None:
            raise InvalidRangeError("exact transfer needs a pair with a ground-truth kernel")
        kernel = source_pair.kernel
    elif mode == "estimated":
        if support is None:
            support = source_pair.kernel.size if source_pair.kernel is not None else 15
        kernel = estimate_kernel(source_pair, support=support, ridge=ridge)
    else:
        raise ValueError(f"unknown transfer mode {mode!r}")
    return apply_blur(sharp, kernel, noise_sigma, seed)
