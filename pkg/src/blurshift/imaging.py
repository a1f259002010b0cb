"""Image containers, pyramids, camera response and quality metrics.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)`` holding float
intensities in ``[0, 1]``. :func:`check_image` enforces that contract and is
used at every public entry point of the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, signal

from .exceptions import ImageTooSmallError, InvalidRangeError, ShapeMismatchError

MIN_SIDE = 8
PSNR_CAP = 100.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
LAPLACIAN_STENCIL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def check_image(img, *, min_side: int = MIN_SIDE, name: str = "image") -> np.ndarray:
    """Validate an image buffer and return it as a float64 array.

    Values must be finite and lie in ``[0, 1]``; nothing is clamped here.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if min(arr.shape[:2]) < min_side:
        raise ImageTooSmallError(f"{name} is {arr.shape[0]}x{arr.shape[1]}, minimum side is {min_side}")
    if not np.all(np.isfinite(arr)):
        raise InvalidRangeError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidRangeError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def luminance(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA_WEIGHTS


# --------------------------------------------------------------------------
# pyramids


def downsample(img: np.ndarray) -> np.ndarray:
    """2x2 area average. Odd trailing rows/columns average the pixels present."""
    h, w = img.shape[:2]
    ho, wo = math.ceil(h / 2), math.ceil(w / 2)
    total = np.zeros((ho, wo) + img.shape[2:])
    count = np.zeros((ho, wo) + (1,) * (img.ndim - 2))
    for dy in (0, 1):
        for dx in (0, 1):
            part = img[dy::2, dx::2]
            total[: part.shape[0], : part.shape[1]] += part
            count[: part.shape[0], : part.shape[1]] += 1
    return total / count


def build_pyramid(img, m: int = 3) -> list[np.ndarray]:
    """Return ``m`` levels, finest first; level 1 is the input itself."""
    if m < 1:
        raise ValueError("level count must be >= 1")
    img = check_image(img)
    h, w = img.shape[:2]
    smallest = min(math.ceil(h / 2 ** (m - 1)), math.ceil(w / 2 ** (m - 1)))
    if smallest < MIN_SIDE:
        raise ImageTooSmallError(
            f"{h}x{w} image cannot hold {m} levels (coarsest side {smallest} < {MIN_SIDE})"
        )
    levels = [img]
    for _ in range(m - 1):
        levels.append(downsample(levels[-1]))
    return levels


# --------------------------------------------------------------------------
# camera response


@dataclass(frozen=True)
class CameraResponse:
    """Gamma-curve camera response: ``apply`` maps linear radiance to pixel values."""

    gamma: float = 2.2

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidRangeError(f"gamma must be a positive finite number, got {self.gamma}")

    def apply(self, v):
        return np.power(np.clip(v, 0.0, 1.0), 1.0 / self.gamma)

    def inverse(self, v):
        return np.power(np.clip(v, 0.0, 1.0), self.gamma)


IDENTITY_CRF = CameraResponse(1.0)


def crf_apply(img, crf: CameraResponse) -> np.ndarray:
    return crf.apply(check_image(img))


def crf_invert(img, crf: CameraResponse) -> np.ndarray:
    return crf.inverse(check_image(img))


# --------------------------------------------------------------------------
# metrics


def psnr(a, b) -> float:
    a = check_image(a, name="a")
    b = check_image(b, name="b")
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, *, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM on the BT.601 luminance over all fully-contained Gaussian windows."""
    a = check_image(a, name="a")
    b = check_image(b, name="b")
    check_same_shape(a, b)
    if min(a.shape[:2]) < window:
        raise ImageTooSmallError(f"SSIM needs sides >= {window}, got {a.shape[:2]}")
    ya, yb = luminance(a), luminance(b)
    win = gaussian_window(window, sigma)
    c1, c2 = k1**2, k2**2

    def filt(z):
        return signal.correlate2d(z, win, mode="valid")

    mu_a, mu_b = filt(ya), filt(yb)
    var_a = filt(ya * ya) - mu_a**2
    var_b = filt(yb * yb) - mu_b**2
    cov = filt(ya * yb) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(smap.mean())


def laplacian_variance(img) -> float:
    """Sharpness score: variance of the 4-neighbour Laplacian of the luminance."""
    img = check_image(img, min_side=3)
    response = ndimage.correlate(luminance(img), LAPLACIAN_STENCIL, mode="reflect")
    return float(response.var())


# --------------------------------------------------------------------------
# PNG I/O


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def encode_u8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] to 8 bits, rounding half up."""
    img = check_image(img, min_side=1)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(encode_u8(img), mode="RGB").save(path)
