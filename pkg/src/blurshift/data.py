"""Datasets for unpaired blur translation.

Four image sets are involved: blurry images ``B`` from the unknown domain,
sharp images ``S`` from disjoint scenes, the known-blur set ``K`` built by
re-blurring ``S`` with kernels from a known-domain pair collection, and
held-out test pairs. This module builds them, samples curriculum batches,
augments crops, and reads/writes the on-disk dataset tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .blur import (
    DEFAULT_KNOWN_DOMAIN,
    DEFAULT_UNKNOWN_DOMAIN,
    BlurDomainSpec,
    BlurKernel,
    BlurPair,
    estimate_kernel,
    transfer_kernel,
)
from .exceptions import (
    CropTooLargeError,
    EmptyInputError,
    InvalidRangeError,
    PoolTooSmallError,
    TooFewScenesError,
)
from .imaging import check_image, laplacian_variance, read_png, write_png

# --------------------------------------------------------------------------
# procedural scenes


def _smooth_field(rng, shape, scale):
    f = ndimage.gaussian_filter(rng.normal(size=shape), scale, mode="wrap")
    f -= f.min()
    return f / (f.max() + 1e-12)


def render_scene(seed, size: int = 160) -> np.ndarray:
    """A random piecewise-smooth RGB scene: shaded background, shapes, strokes and texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = rng.uniform(0.15, 0.85, 3)
    tint = rng.uniform(-0.3, 0.3, 3)
    img = base + tint * _smooth_field(rng, (size, size), size / 6)[..., None]
    for _ in range(rng.integers(12, 28)):
        kind = rng.integers(0, 4)
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(size / 40, size / 6)
        if kind == 0:
            a, b = r, r * rng.uniform(0.3, 1.0)
            th = rng.uniform(0, np.pi)
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        elif kind == 1:
            w, h = r, r * rng.uniform(0.3, 1.5)
            mask = (np.abs(xx - cx) <= w) & (np.abs(yy - cy) <= h)
        elif kind == 2:
            angles = np.sort(rng.uniform(0, 2 * np.pi, 3))
            px, py = cx + r * np.cos(angles), cy + r * np.sin(angles)
            mask = np.ones((size, size), bool)
            for i in range(3):
                x0, y0, x1, y1 = px[i], py[i], px[(i + 1) % 3], py[(i + 1) % 3]
                mask &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
        else:
            th = rng.uniform(0, np.pi)
            dist = np.abs((xx - cx) * np.sin(th) - (yy - cy) * np.cos(th))
            along = np.abs((xx - cx) * np.cos(th) + (yy - cy) * np.sin(th))
            mask = (dist <= rng.uniform(0.6, 2.5)) & (along <= r * 2)
        colour = rng.uniform(0.0, 1.0, 3)
        shade = 1.0 + rng.uniform(-0.25, 0.25) * _smooth_field(rng, (size, size), size / 10)[..., None]
        img = np.where(mask[..., None], colour * shade, img)
    texture = _smooth_field(rng, (size, size), 0.8) - 0.5
    img = img + rng.uniform(0.02, 0.08) * texture[..., None]
    return np.clip(img, 0.0, 1.0)


def scene_frames(seed, n_frames: int, frame_size: int, max_shift: int = 6) -> list[np.ndarray]:
    """Consecutive frames of one scene: crops of a canvas drifting by a few pixels."""
    rng = np.random.default_rng([int(seed), 1])
    margin = max_shift * n_frames + 2
    canvas = render_scene(seed, frame_size + 2 * margin)
    pos = np.array([margin, margin], dtype=float)
    step = rng.uniform(-max_shift, max_shift, 2)
    frames = []
    for _ in range(n_frames):
        y, x = np.clip(np.rint(pos).astype(int), 0, 2 * margin)
        frames.append(canvas[y : y + frame_size, x : x + frame_size].copy())
        pos += step + rng.normal(0, 1.0, 2)
    return frames


def image_name(scene_id: str, frame: int) -> str:
    return f"{scene_id}_{frame:03d}"


def scene_of(name: str) -> str:
    return name.rsplit("_", 1)[0]


# --------------------------------------------------------------------------
# splits and the known-blur set


def split_scenes(scene_groups: Sequence, ratio: float = 0.6, seed=0) -> tuple[list, list]:
    """Shuffle scene ids and split them into disjoint (B, S) groups at ``ratio``."""
    groups = list(dict.fromkeys(scene_groups))
    if len(groups) < 2:
        raise TooFewScenesError(f"need at least 2 scene groups, got {len(groups)}")
    if not 0.0 < ratio < 1.0:
        raise InvalidRangeError(f"ratio must lie in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(len(groups))
    n_b = min(max(int(math.floor(ratio * len(groups) + 0.5)), 1), len(groups) - 1)
    shuffled = [groups[i] for i in order]
    return shuffled[:n_b], shuffled[n_b:]


@dataclass(frozen=True)
class KnownProvenance:
    sharp_index: int
    source_pair: int
    noise_seed: int
    mode: str


def build_known_set(S: Sequence, known_pairs: Sequence[BlurPair], mode: str = "exact", seed=0,
                    noise_sigma: float = 0.0, support: Optional[int] = None):
    """Re-blur every sharp image with a kernel borrowed from a random known-domain pair.

    Returns ``(K, provenance)`` with one entry per sharp image.
    """
    if len(S) == 0 or len(known_pairs) == 0:
        raise EmptyInputError("build_known_set needs sharp images and known-domain pairs")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(known_pairs), len(S))
    noise_seeds = rng.integers(0, 2**63, len(S))
    K, prov = [], []
    estimated = {}
    for i, (s, j, ns) in enumerate(zip(S, picks, noise_seeds)):
        pair = known_pairs[int(j)]
        if mode == "estimated":
            # estimate once per source pair and reuse
            if int(j) not in estimated:
                sup = support or (pair.kernel.size if pair.kernel is not None else 15)
                estimated[int(j)] = estimate_kernel(pair, support=sup)
            pair_used = BlurPair(pair.blurry, pair.sharp, estimated[int(j)])
            k_img = transfer_kernel(s, pair_used, "exact", noise_sigma, int(ns))
        else:
            k_img = transfer_kernel(s, pair, mode, noise_sigma, int(ns), support=support)
        K.append(k_img)
        prov.append(KnownProvenance(i, int(j), int(ns), mode))
    return K, prov


# --------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class CurriculumSchedule:
    """Fraction of ``B`` (sharpest first) eligible for sampling at iteration ``t``.

    Constant at ``start_fraction`` until ``ramp_start``, then linear up to 1 at
    ``ramp_end``.
    """

    start_fraction: float = 0.5
    ramp_start: int = 4000
    ramp_end: int = 10000

    def __post_init__(self):
        if not 0.0 < self.start_fraction <= 1.0:
            raise InvalidRangeError("start_fraction must lie in (0, 1]")
        if self.ramp_start < 0 or self.ramp_end < self.ramp_start:
            raise InvalidRangeError("need 0 <= ramp_start <= ramp_end")

    @classmethod
    def scaled(cls, total_iters: int, start_fraction: float = 0.5,
               start_at: float = 0.2, end_at: float = 0.5) -> "CurriculumSchedule":
        """Schedule whose ramp starts at ``start_at * total`` (200K of a 1M-iteration run)."""
        return cls(start_fraction, int(round(start_at * total_iters)), int(round(end_at * total_iters)))

    def fraction(self, t: int) -> float:
        if t <= self.ramp_start:
            return self.start_fraction
        if t >= self.ramp_end:
            return 1.0
        a = (t - self.ramp_start) / (self.ramp_end - self.ramp_start)
        return self.start_fraction + a * (1.0 - self.start_fraction)


def curriculum_order(variances: Sequence[float]) -> np.ndarray:
    """Indices sorted by descending Laplacian variance; ties keep index order."""
    v = np.asarray(variances, dtype=np.float64)
    return np.argsort(-v, kind="stable")


def curriculum_pool(variances: Sequence[float], fraction: float) -> np.ndarray:
    n = len(variances)
    size = max(1, math.ceil(fraction * n - 1e-9))
    return curriculum_order(variances)[:size]


def curriculum_sample(variances: Sequence[float], schedule: CurriculumSchedule, t: int, batch: int, seed) -> np.ndarray:
    pool = curriculum_pool(variances, schedule.fraction(t))
    if batch > len(pool):
        raise PoolTooSmallError(f"batch {batch} exceeds curriculum pool of {len(pool)} images")
    return np.random.default_rng(seed).choice(pool, size=batch, replace=False)


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentationPolicy:
    crop: Optional[int] = 64
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotate: bool = True
    jitter_scale: float = 0.05
    jitter_offset: float = 0.02

    @classmethod
    def disabled(cls, crop: Optional[int] = None) -> "AugmentationPolicy":
        return cls(crop=crop, hflip_prob=0.0, vflip_prob=0.0, rotate=False, jitter_scale=0.0, jitter_offset=0.0)


def color_jitter(img: np.ndarray, scale, offset) -> np.ndarray:
    return np.clip(img * np.asarray(scale) + np.asarray(offset), 0.0, 1.0)


def augment(img, policy: AugmentationPolicy, seed) -> np.ndarray:
    """Random crop, horizontal/vertical flips, 90-degree rotation and colour jitter, in that order."""
    img = check_image(img)
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    c = policy.crop
    if c is not None:
        if c > min(h, w):
            raise CropTooLargeError(f"crop {c} exceeds image {h}x{w}")
        y0 = rng.integers(0, h - c + 1)
        x0 = rng.integers(0, w - c + 1)
        img = img[y0 : y0 + c, x0 : x0 + c]
    if rng.random() < policy.hflip_prob:
        img = img[:, ::-1]
    if rng.random() < policy.vflip_prob:
        img = img[::-1]
    if policy.rotate:
        img = np.rot90(img, int(rng.integers(0, 4)))
    if policy.jitter_scale > 0 or policy.jitter_offset > 0:
        scale = 1.0 + rng.uniform(-policy.jitter_scale, policy.jitter_scale, 3)
        offset = rng.uniform(-policy.jitter_offset, policy.jitter_offset, 3)
        img = color_jitter(img, scale, offset)
    return np.ascontiguousarray(img)


# --------------------------------------------------------------------------
# bundles


@dataclass
class UnpairedDataBundle:
    B: list
    S: list
    K: list
    test: list
    B_ids: list = field(default_factory=list)
    S_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    K_provenance: list = field(default_factory=list)
    known_pairs: list = field(default_factory=list)
    known_ids: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def check_disjoint(self) -> None:
        b = {scene_of(n) for n in self.B_ids}
        s = {scene_of(n) for n in self.S_ids}
        t = {scene_of(n) for n in self.test_ids}
        if b & s or b & t or s & t:
            raise InvalidRangeError(f"scene overlap between splits: B&S={b & s} B&T={b & t} S&T={s & t}")
        if len(self.K) != len(self.S):
            raise InvalidRangeError(f"|K|={len(self.K)} differs from |S|={len(self.S)}")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of a synthetic benchmark dataset."""

    n_scenes: int = 100
    test_scenes: int = 30
    known_source_scenes: int = 24
    frames_per_scene: int = 4
    frame_size: int = 96
    ratio: float = 0.6
    unknown: BlurDomainSpec = DEFAULT_UNKNOWN_DOMAIN
    known: BlurDomainSpec = DEFAULT_KNOWN_DOMAIN
    known_mode: str = "exact"
    seed: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unknown"] = self.unknown.to_dict()
        d["known"] = self.known.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "unknown" in d:
            d["unknown"] = BlurDomainSpec.from_dict(d["unknown"])
        if "known" in d:
            d["known"] = BlurDomainSpec.from_dict(d["known"])
        return cls(**d)


def synthesize_bundle(cfg: SynthConfig) -> UnpairedDataBundle:
    """Generate B, S, K, test and the known-domain source pairs, all from ``cfg.seed``."""
    ss = np.random.SeedSequence(cfg.seed)
    scene_seed, split_seed, blur_seed, known_seed, build_seed, test_seed = (
        int(s.generate_state(1)[0]) for s in ss.spawn(6))
    n_total = cfg.n_scenes + cfg.test_scenes + cfg.known_source_scenes
    scene_seeds = np.random.default_rng(scene_seed).integers(0, 2**63, n_total)
    ids = [f"s{i:04d}" for i in range(n_total)]
    train_ids = ids[: cfg.n_scenes]
    test_scene_ids = ids[cfg.n_scenes : cfg.n_scenes + cfg.test_scenes]
    known_scene_ids = ids[cfg.n_scenes + cfg.test_scenes :]
    b_scenes, s_scenes = split_scenes(train_ids, cfg.ratio, split_seed)
    frames = {}

    def get_frames(sid):
        if sid not in frames:
            frames[sid] = scene_frames(scene_seeds[ids.index(sid)], cfg.frames_per_scene, cfg.frame_size)
        return frames[sid]

    blur_rng = np.random.default_rng(blur_seed)
    B, B_ids = [], []
    for sid in sorted(b_scenes):
        for f, img in enumerate(get_frames(sid)):
            B.append(cfg.unknown.synthesize(img, int(blur_rng.integers(0, 2**63))).blurry)
            B_ids.append(image_name(sid, f))
    S, S_ids = [], []
    for sid in sorted(s_scenes):
        for f, img in enumerate(get_frames(sid)):
            S.append(img)
            S_ids.append(image_name(sid, f))
    # separate stream so the test set does not depend on the B/S split
    test_rng = np.random.default_rng(test_seed)
    test, test_ids = [], []
    for sid in test_scene_ids:
        for f, img in enumerate(get_frames(sid)):
            test.append(cfg.unknown.synthesize(img, int(test_rng.integers(0, 2**63))))
            test_ids.append(image_name(sid, f))
    known_rng = np.random.default_rng(known_seed)
    known_pairs, known_ids = [], []
    for sid in known_scene_ids:
        for f, img in enumerate(get_frames(sid)):
            known_pairs.append(cfg.known.synthesize(img, int(known_rng.integers(0, 2**63))))
            known_ids.append(image_name(sid, f))
    K, prov = build_known_set(S, known_pairs, cfg.known_mode, build_seed, noise_sigma=cfg.unknown.noise_sigma)
    manifest = {
        "synth_config": cfg.to_dict(),
        "scenes": {
            "B": sorted(b_scenes),
            "S": sorted(s_scenes),
            "test": test_scene_ids,
            "known_source": known_scene_ids,
        },
        "seeds": {"root": cfg.seed, "scene": scene_seed, "split": split_seed, "blur": blur_seed,
                  "known_source": known_seed, "build_known": build_seed, "test": test_seed},
        "known_set": {"mode": cfg.known_mode, "noise_sigma": cfg.unknown.noise_sigma, "seed": build_seed,
                      "provenance": [_prov_entry(p, S_ids, known_ids) for p in prov]},
    }
    bundle = UnpairedDataBundle(B=B, S=S, K=K, test=test, B_ids=B_ids, S_ids=S_ids, test_ids=test_ids,
                                K_provenance=prov, known_pairs=known_pairs, known_ids=known_ids, manifest=manifest)
    bundle.check_disjoint()
    return bundle


def _prov_entry(p: KnownProvenance, S_ids, known_ids) -> dict:
    return {"image": S_ids[p.sharp_index], "source_pair": known_ids[p.source_pair],
            "noise_seed": str(p.noise_seed), "mode": p.mode}


# --------------------------------------------------------------------------
# dataset tree on disk

SUBDIRS = ("blur", "sharp", "known", "test/blur", "test/sharp", "test/kernels",
           "known_source/blur", "known_source/sharp", "known_source/kernels")


def _write_kernel(path: Path, k: BlurKernel) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, k.weights, fmt="%.17g")


def _read_kernel(path: Path) -> BlurKernel:
    return BlurKernel.from_unnormalized(np.atleast_2d(np.loadtxt(path)))


def write_bundle(root, bundle: UnpairedDataBundle) -> None:
    root = Path(root)
    for name, img in zip(bundle.B_ids, bundle.B):
        write_png(root / "blur" / f"{name}.png", img)
    for name, img in zip(bundle.S_ids, bundle.S):
        write_png(root / "sharp" / f"{name}.png", img)
    for name, img in zip(bundle.S_ids, bundle.K):
        write_png(root / "known" / f"{name}.png", img)
    for name, pair in zip(bundle.test_ids, bundle.test):
        write_png(root / "test" / "blur" / f"{name}.png", pair.blurry)
        write_png(root / "test" / "sharp" / f"{name}.png", pair.sharp)
        if pair.kernel is not None:
            _write_kernel(root / "test" / "kernels" / f"{name}.txt", pair.kernel)
    for name, pair in zip(bundle.known_ids, bundle.known_pairs):
        write_png(root / "known_source" / "blur" / f"{name}.png", pair.blurry)
        write_png(root / "known_source" / "sharp" / f"{name}.png", pair.sharp)
        if pair.kernel is not None:
            _write_kernel(root / "known_source" / "kernels" / f"{name}.txt", pair.kernel)
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_manifest(root, bundle.manifest)


def write_manifest(root, manifest: dict) -> None:
    (Path(root) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(root) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text())


class DatasetTree:
    """Read access to a dataset directory that records every subdirectory it touches."""

    def __init__(self, root):
        self.root = Path(root)
        self.access_log: list[str] = []

    def names(self, sub: str) -> list[str]:
        d = self.root / sub
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.glob("*.png"))

    def read(self, sub: str, names: Optional[Sequence[str]] = None) -> list[np.ndarray]:
        self.access_log.append(sub)
        names = self.names(sub) if names is None else names
        return [read_png(self.root / sub / f"{n}.png") for n in names]

    def read_pairs(self, prefix: str) -> tuple[list[str], list[BlurPair]]:
        """Blurry/sharp pairs stored under ``prefix/blur`` and ``prefix/sharp``."""
        self.access_log.append(prefix)
        names = self.names(f"{prefix}/blur")
        pairs = []
        for n in names:
            blurry = read_png(self.root / prefix / "blur" / f"{n}.png")
            sharp = read_png(self.root / prefix / "sharp" / f"{n}.png")
            kpath = self.root / prefix / "kernels" / f"{n}.txt"
            kernel = _read_kernel(kpath) if kpath.exists() else None
            pairs.append(BlurPair(blurry, sharp, kernel))
        return names, pairs

    def training_bundle(self) -> UnpairedDataBundle:
        """B, S and K only; the test split is never opened."""
        B_ids, S_ids = self.names("blur"), self.names("sharp")
        B, S = self.read("blur", B_ids), self.read("sharp", S_ids)
        K = self.read("known", S_ids) if self.names("known") else []
        return UnpairedDataBundle(B=B, S=S, K=K, test=[], B_ids=B_ids, S_ids=S_ids,
                                  manifest=read_manifest(self.root) if (self.root / "manifest.json").exists() else {})
