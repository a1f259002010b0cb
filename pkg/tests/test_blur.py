import math

import numpy as np
import pytest

from blurshift.blur import (
    DEFAULT_KNOWN_DOMAIN,
    DEFAULT_UNKNOWN_DOMAIN,
    FAMILIES,
    BlurDomainSpec,
    BlurKernel,
    BlurPair,
    apply_blur,
    convolve,
    estimate_kernel,
    frame_average_blur,
    gaussian_kernel,
    kernel_distance,
    mean_kernel,
    motion_kernel,
    sample_kernel,
    shifted_frames,
    transfer_kernel,
)
from blurshift.exceptions import (
    DegenerateImageError,
    EmptyInputError,
    InvalidRangeError,
    KernelTooLargeError,
    ShapeMismatchError,
)
from blurshift.imaging import CameraResponse, psnr
from oracles import convolve_loop


def l2(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


class TestBlurKernel:
    def test_rejects_unnormalized(self):
        with pytest.raises(InvalidRangeError):
            BlurKernel(np.ones((3, 3)))

    def test_rejects_negative(self):
        w = np.zeros((3, 3))
        w[1, 1] = 1.5
        w[0, 0] = -0.5
        with pytest.raises(InvalidRangeError):
            BlurKernel(w)

    def test_rejects_even(self):
        with pytest.raises(InvalidRangeError):
            BlurKernel(np.full((2, 2), 0.25))

    def test_padded(self):
        k = BlurKernel.delta(3).padded(7)
        assert k.shape == (7, 7) and k[3, 3] == 1.0


class TestSampleKernel:
    def test_gaussian_zero_sigma_is_delta(self):
        k = sample_kernel(BlurDomainSpec("gaussian", sigma_range=(0.0, 0.0)), 3)
        assert k == BlurKernel.delta(1)

    def test_motion_length_one_is_delta(self):
        k = sample_kernel(BlurDomainSpec("linear-motion", length_range=(1.0, 1.0), angle_range=(0, 180)), 11)
        c = k.size // 2
        expected = np.zeros((k.size, k.size))
        expected[c, c] = 1.0
        assert np.array_equal(k.weights, expected)

    def test_motion_length_five_horizontal(self):
        k = motion_kernel(5, 0.0, size=7)
        # five unit cells along the centre row, each holding a fifth of the mass
        expected = np.zeros((7, 7))
        expected[3, 1:6] = 0.2
        assert np.allclose(k.weights, expected, atol=1e-15)

    def test_motion_vertical_is_transpose(self):
        assert np.allclose(motion_kernel(7, 90.0).weights, motion_kernel(7, 0.0).weights.T)

    def test_deterministic(self):
        for fam in FAMILIES:
            spec = BlurDomainSpec(fam)
            assert sample_kernel(spec, 42) == sample_kernel(spec, 42)

    def test_empty_range(self):
        with pytest.raises(InvalidRangeError):
            sample_kernel(BlurDomainSpec("gaussian", sigma_range=(2.0, 1.0)), 0)
        with pytest.raises(InvalidRangeError):
            sample_kernel(BlurDomainSpec("linear-motion", length_range=(9.0, 3.0)), 0)

    def test_unknown_family(self):
        with pytest.raises(InvalidRangeError):
            BlurDomainSpec("defocus")

    @pytest.mark.parametrize("family", FAMILIES)
    def test_thousand_seeds_valid(self, family):
        spec = BlurDomainSpec(family)
        for seed in range(1000):
            w = sample_kernel(spec, seed).weights
            assert w.min() >= 0.0
            assert abs(w.sum() - 1.0) <= 1e-8

    def test_spec_roundtrip(self):
        spec = BlurDomainSpec("frame-average-trajectory", length_range=(3, 9), crf_gamma=2.2)
        assert BlurDomainSpec.from_dict(spec.to_dict()) == spec


class TestApplyBlur:
    def test_delta_identity(self, rng):
        x = rng.random((16, 16, 3))
        assert np.array_equal(apply_blur(x, BlurKernel.delta(5)), x)

    def test_constant_preserved(self):
        x = np.full((32, 32, 3), 0.37)
        k = sample_kernel(DEFAULT_UNKNOWN_DOMAIN, 5)
        assert np.allclose(apply_blur(x, k), 0.37, atol=1e-12)

    def test_ramp_box_matches_loop(self):
        ramp = np.add.outer(np.arange(8), np.arange(8)) / 14.0
        x = np.stack([ramp, ramp[::-1], ramp.T], axis=-1)
        k = BlurKernel(np.full((3, 3), 1 / 9))
        assert np.max(np.abs(apply_blur(x, k) - convolve_loop(x, k.weights))) < 1e-12

    def test_asymmetric_kernel_matches_loop(self, rng):
        x = rng.random((9, 11, 3))
        k = motion_kernel(4.3, 33.0, size=5)
        assert np.max(np.abs(convolve(x, k) - convolve_loop(x, k.weights))) < 1e-12

    def test_noise_deterministic(self, rng):
        x = rng.random((16, 16, 3)) * 0.5 + 0.25
        k = gaussian_kernel(1.0)
        a = apply_blur(x, k, 0.05, seed=3)
        assert np.array_equal(a, apply_blur(x, k, 0.05, seed=3))
        assert not np.array_equal(a, apply_blur(x, k, 0.05, seed=4))
        assert 0.03 < np.std(a - apply_blur(x, k)) < 0.07

    def test_kernel_too_large(self, rng):
        with pytest.raises(KernelTooLargeError):
            apply_blur(rng.random((8, 8, 3)), BlurKernel.delta(9))

    def test_linearity(self, rng):
        x1, x2 = rng.random((24, 24, 3)), rng.random((24, 24, 3))
        k = sample_kernel(DEFAULT_UNKNOWN_DOMAIN, 9)
        for a in (0.0, 0.3, 0.75, 1.0):
            lhs = apply_blur(a * x1 + (1 - a) * x2, k)
            rhs = a * apply_blur(x1, k) + (1 - a) * apply_blur(x2, k)
            assert np.max(np.abs(lhs - rhs)) < 1e-6


class TestFrameAverage:
    def test_identical_frames(self, rng):
        f = rng.random((16, 16, 3))
        out = frame_average_blur([f, f, f], CameraResponse(2.2))
        assert np.max(np.abs(out - f)) < 1e-6

    def test_single_frame(self, rng):
        f = rng.random((16, 16, 3))
        assert np.max(np.abs(frame_average_blur([f], CameraResponse(2.4)) - f)) < 1e-6

    def test_zero_one_linear(self):
        out = frame_average_blur([np.zeros((8, 8, 3)), np.ones((8, 8, 3))], CameraResponse(1.0))
        assert np.all(out == 0.5)

    def test_crf_weighted_mean(self):
        out = frame_average_blur([np.full((8, 8, 3), 0.2), np.full((8, 8, 3), 0.8)], CameraResponse(2.2))
        expected = ((0.2**2.2 + 0.8**2.2) / 2) ** (1 / 2.2)
        assert np.allclose(out, expected, atol=1e-12)
        # averaging in linear radiance pulls the result above the plain mean
        assert expected > 0.5

    def test_gamma_one_is_arithmetic_mean(self, rng):
        frames = [rng.random((12, 12, 3)) for _ in range(5)]
        assert np.array_equal(frame_average_blur(frames), np.mean(frames, axis=0))

    def test_errors(self, rng):
        with pytest.raises(EmptyInputError):
            frame_average_blur([])
        with pytest.raises(ShapeMismatchError):
            frame_average_blur([rng.random((8, 8, 3)), rng.random((8, 9, 3))])

    def test_shifted_frames_equal_kernel_blur(self, rng):
        x = rng.random((20, 20, 3))
        path = np.array([[0, 0], [1, 0], [2, 1], [2, 1], [-1, -2]])
        w = np.zeros((5, 5))
        for dx, dy in path:
            w[dy + 2, dx + 2] += 1
        k = BlurKernel(w / w.sum())
        out = frame_average_blur(shifted_frames(x, path))
        assert np.max(np.abs(out - convolve(x, k))) < 1e-12


class TestEstimateKernel:
    def test_delta_recovery(self, texture):
        pair = BlurPair(apply_blur(texture, BlurKernel.delta(1)), texture)
        est = estimate_kernel(pair, support=5)
        assert l2(est.weights, BlurKernel.delta(5).weights) < 1e-3

    def test_gaussian_5x5(self, texture):
        k = gaussian_kernel(1.0, size=5)
        pair = BlurPair(apply_blur(texture, k), texture)
        assert l2(estimate_kernel(pair, support=5, ridge=1e-6).weights, k.weights) < 1e-3

    def test_fourier_method_on_symmetric_kernel(self, texture):
        k = gaussian_kernel(1.0, size=5)
        pair = BlurPair(apply_blur(texture, k), texture)
        assert l2(estimate_kernel(pair, support=5, ridge=1e-6, method="fourier").weights, k.weights) < 1e-3

    def test_constant_sharp_is_degenerate(self):
        x = np.full((32, 32, 3), 0.4)
        with pytest.raises(DegenerateImageError):
            estimate_kernel(BlurPair(x, x), support=5)

    def test_support_too_large(self, texture):
        with pytest.raises(KernelTooLargeError):
            estimate_kernel(BlurPair(texture, texture), support=33)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_roundtrip_all_families(self, family, seed):
        x = np.random.default_rng(100 + seed).random((64, 64, 3))
        k = sample_kernel(BlurDomainSpec(family), seed)
        pair = BlurPair(apply_blur(x, k), x, k)
        assert l2(estimate_kernel(pair, support=k.size).weights, k.weights) < 1e-3


class TestTransfer:
    def test_exact_delta(self, rng):
        s = rng.random((32, 32, 3))
        pair = BlurPair(s, s, BlurKernel.delta(3))
        assert np.array_equal(transfer_kernel(s, pair, "exact"), s)

    def test_exact_gaussian(self, rng, texture):
        s = rng.random((32, 32, 3))
        k = gaussian_kernel(1.5)
        pair = BlurPair(apply_blur(texture, k), texture, k)
        assert psnr(transfer_kernel(s, pair, "exact"), apply_blur(s, k)) == 100.0

    def test_estimated_close_to_exact(self, rng, texture):
        s = rng.random((48, 48, 3))
        k = sample_kernel(DEFAULT_KNOWN_DOMAIN, 4)
        pair = BlurPair(apply_blur(texture, k), texture, k)
        exact = transfer_kernel(s, pair, "exact", noise_sigma=0.01, seed=9)
        est = transfer_kernel(s, pair, "estimated", noise_sigma=0.01, seed=9)
        assert psnr(est, exact) >= 40.0

    def test_estimated_propagates_errors(self):
        flat = np.full((32, 32, 3), 0.5)
        with pytest.raises(DegenerateImageError):
            transfer_kernel(flat, BlurPair(flat, flat), "estimated", support=5)

    def test_exact_requires_kernel(self, rng):
        s = rng.random((16, 16, 3))
        with pytest.raises(InvalidRangeError):
            transfer_kernel(s, BlurPair(s, s), "exact")


class TestDomains:
    def test_synthesize_with_crf(self, rng):
        spec = BlurDomainSpec("gaussian", sigma_range=(1.0, 1.0), noise_sigma=0.0, crf_gamma=2.2)
        x = rng.random((32, 32, 3))
        pair = spec.synthesize(x, 0)
        crf = CameraResponse(2.2)
        expected = crf.apply(apply_blur(crf.inverse(x), pair.kernel))
        assert np.allclose(pair.blurry, expected, atol=1e-12)

    def test_distance_diagnostic(self):
        d_self = kernel_distance(DEFAULT_KNOWN_DOMAIN, DEFAULT_KNOWN_DOMAIN, n=32)
        d_cross = kernel_distance(DEFAULT_UNKNOWN_DOMAIN, DEFAULT_KNOWN_DOMAIN, n=32)
        assert 0.0 <= d_self < d_cross

    def test_mean_kernel_is_valid(self):
        k = mean_kernel(DEFAULT_KNOWN_DOMAIN, n=64)
        assert math.isclose(k.weights.sum(), 1.0)
        assert np.allclose(k.weights, k.weights.T)
