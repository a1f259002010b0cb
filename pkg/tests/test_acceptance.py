"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line.

The desk benchmark (20K iterations on the default config) is expensive, so
its results come from ``tests/benchmark.py``, which caches them next to the
config hash. If no matching cache exists the test runs the benchmark itself.
"""

import math

import numpy as np
import pytest
import torch

from blurshift.blur import BlurDomainSpec, BlurPair, apply_blur, estimate_kernel, gaussian_kernel, sample_kernel
from blurshift.data import CurriculumSchedule, SynthConfig, curriculum_pool
from blurshift.evaluation import ratio_ablation
from blurshift.imaging import laplacian_variance, psnr, ssim
from blurshift.losses import adversarial_loss, gradient_penalty, interpolate, reconstruction_loss, total_losses
from blurshift.networks import FeatureExtractor, PatchDiscriminator, TranslationGenerator, WienerDeblurrer, tensor_pyramid
from blurshift.training import Models, TrainConfig, TrainingData, run_training

from benchmark import run_benchmark
from gradcheck import probe_gradients
from oracles import laplacian_variance_loop, psnr_loop, ssim_loop


@pytest.fixture(scope="module")
def bench():
    return run_benchmark()


def test_end_to_end_benchmark(bench, criterion):
    gain, n, hours = bench["gain_db"], bench["n_images"], bench["runtime_s"] / 3600
    m = bench["means"]
    criterion(
        "end-to-end desk benchmark",
        gain >= 1.0 and n >= 100 and hours <= 12.0,
        f"pipeline {m['psnr_pipeline']:.2f} dB vs direct {m['psnr_direct']:.2f} dB, gain {gain:+.2f} dB "
        f"(need >= +1.00) over {n} images, {hours:.2f} h CPU",
    )


def test_converter_validation(bench, criterion):
    r = bench["converter"]
    criterion(
        "converter validation",
        r["acc2"] >= 0.8 and r["acc2_raw"] <= 0.3,
        f"classifier labels {r['acc2']:.1%} of converted as known (need >= 80%), "
        f"{r['acc2_raw']:.1%} of raw inputs (need <= 30%)",
    )


def _kernel_oracle():
    worst = 0.0
    for family in ("linear-motion", "gaussian"):
        for seed in range(3):
            x = np.random.default_rng(500 + seed).random((64, 64, 3))
            k = sample_kernel(BlurDomainSpec(family), seed)
            est = estimate_kernel(BlurPair(apply_blur(x, k), x, k), support=k.size)
            worst = max(worst, float(np.linalg.norm(est.weights - k.weights)))
    return worst


def _wiener_oracle(x):
    worst = math.inf
    for sigma in (1.0, 1.5, 2.0):
        k = gaussian_kernel(sigma)
        w = WienerDeblurrer(kernel=k, nsr=1e-12).fit()
        worst = min(worst, psnr(w.predict(apply_blur(x, k)), x))
    return worst


def _metric_oracle():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(3):
        a = rng.random((16, 16, 3))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        worst = max(worst, abs(psnr(a, b) - psnr_loop(a, b)), abs(ssim(a, b) - ssim_loop(a, b)),
                    abs(laplacian_variance(a) - laplacian_variance_loop(a)))
    return worst


def test_oracle_suites(texture, criterion):
    k_err, w_db, m_err = _kernel_oracle(), _wiener_oracle(texture), _metric_oracle()
    criterion(
        "oracle suites",
        k_err <= 1e-3 and w_db >= 40.0 and m_err <= 1e-9,
        f"kernel L2 {k_err:.2e} (<= 1e-3), Wiener {w_db:.1f} dB (>= 40), metrics vs loops {m_err:.1e} (<= 1e-9)",
    )


def _gradient_fractions():
    rng = np.random.default_rng(8)
    y = torch.from_numpy(rng.uniform(0.1, 0.9, (2, 3, 32, 32)))
    k = torch.from_numpy(rng.uniform(0.1, 0.9, (2, 3, 32, 32)))
    g = TranslationGenerator((4, 6, 8), seed=1, zero_heads=False).double()
    d = PatchDiscriminator((4, 8, 8), seed=2, highpass=2.0).double()
    phi = FeatureExtractor((4, 8, 8), seed=3, gain=10.0).double()
    pyr = tensor_pyramid(y, 3)
    eps = torch.tensor([0.3, 0.7], dtype=torch.float64)

    def adv():
        return adversarial_loss(d(k), d(g(pyr)[0]))

    def rec():
        return reconstruction_loss(phi, pyr, g(pyr))

    fake = g(pyr)[0].detach()

    def grad_pen():
        return gradient_penalty(d.score, y, fake, eps)

    fractions = {}
    for name, module, fn in (("adv/G", g, adv), ("adv/D", d, adv), ("rec/G", g, rec), ("grad/D", d, grad_pen)):
        ok, n = probe_gradients(module, fn, n_probe=100, seed=4)
        fractions[name] = ok / n
    return fractions


def _penalty_vs_finite_difference():
    rng = np.random.default_rng(9)
    d = PatchDiscriminator((4, 8, 8), seed=5).double()
    real = torch.from_numpy(rng.random((1, 3, 12, 12)))
    fake = torch.from_numpy(rng.random((1, 3, 12, 12)))
    y_hat = interpolate(real, fake, 0.4).flatten()
    h = 1e-6
    grad = np.empty(y_hat.numel())
    with torch.no_grad():
        for i in range(y_hat.numel()):
            up, down = y_hat.clone(), y_hat.clone()
            up[i] += h
            down[i] -= h
            grad[i] = (float(d.score(up.view(1, 3, 12, 12))) - float(d.score(down.view(1, 3, 12, 12)))) / (2 * h)
    expect = (np.linalg.norm(grad) - 1.0) ** 2
    got = float(gradient_penalty(d.score, real, fake, 0.4).detach())
    return abs(got - expect) / abs(expect)


def test_gradient_suite(criterion):
    fractions = _gradient_fractions()
    gp_rel = _penalty_vs_finite_difference()
    ok = all(f >= 0.95 for f in fractions.values()) and gp_rel <= 1e-3
    detail = ", ".join(f"{k} {v:.0%}" for k, v in fractions.items())
    criterion("gradient suite", ok, f"{detail} of 100 probes agree (>= 95%); penalty rel err {gp_rel:.1e} (<= 1e-3)")


def test_exact_values(criterion):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(200):
        adv, rec, gp, adv_d = rng.normal(size=4) * np.array([1.0, 0.1, 1.0, 1.0])
        r = total_losses(adv, rec, gp, adv_d=adv_d)
        mismatches += (r.total_g != r.adv + 0.8 * r.rec) + (r.total_d != -r.adv_d + 0.005 * r.grad_pen)
    half = torch.full((4, 1, 2, 2), 0.5, dtype=torch.float64)
    uninformed = float(adversarial_loss(half, half))
    err = abs(uninformed + 2 * math.log(2))
    criterion("exact-value checks", mismatches == 0 and err <= 1e-6,
              f"{mismatches} total mismatches in 200 reports; uninformed adv {uninformed:.12f} (|err| {err:.1e})")


TINY = dict(batch_size=2, crop=16, generator_widths=(4, 6, 8), discriminator_widths=(4, 8, 8),
            feature_channels=(4, 8, 8), checkpoint_every=10)


def test_determinism_and_resume(tmp_path, criterion):
    rng = np.random.default_rng(0)
    data = TrainingData.from_images([rng.uniform(0.1, 0.9, (24, 24, 3)) for _ in range(6)],
                                    [rng.uniform(0.1, 0.9, (24, 24, 3)) for _ in range(5)])
    cfg = TrainConfig(total_iters=100, **TINY)
    full = run_training(data, Models.from_config(cfg), cfg, tmp_path / "a")
    run_training(data, Models.from_config(cfg), cfg, tmp_path / "b", stop_at=37)
    resumed = run_training(data, Models.from_config(cfg), cfg, tmp_path / "b")
    log_a = (tmp_path / "a" / "train_log.csv").read_bytes()
    log_b = (tmp_path / "b" / "train_log.csv").read_bytes()
    ok = resumed.history == full.history and log_a == log_b and len(full.history) == 100
    criterion("determinism and resume", ok, f"resumed at 37, {len(resumed.history)} iterations, "
              f"loss log {'identical' if log_a == log_b else 'differs'}")


def test_curriculum_contract(criterion):
    s = CurriculumSchedule.scaled(1_000_000)
    checks = {
        "ramp points": (s.ramp_start, s.ramp_end) == (200_000, 500_000),
        "start 0.5": s.fraction(0) == 0.5 and s.fraction(200_000) == 0.5,
        "midpoint": s.fraction(350_000) == 0.75,
        "end 1.0": s.fraction(500_000) == 1.0 and s.fraction(1_000_000) == 1.0,
        "monotone": all(s.fraction(t) <= s.fraction(t + 997) for t in range(0, 1_000_000, 997)),
    }
    v = np.random.default_rng(2).random(40)
    fracs = np.linspace(0.05, 1.0, 20)
    pools = [set(curriculum_pool(v, f)) for f in fracs]
    checks["pools nested"] = all(a <= b for a, b in zip(pools, pools[1:]))
    checks["pool is sharpest"] = all(min(v[list(p)]) >= np.max(np.delete(v, list(p)), initial=-1) for p in pools)
    failed = [k for k, ok in checks.items() if not ok]
    criterion("curriculum contract", not failed, "all exact checks hold" if not failed else f"failed: {failed}")


def test_ratio_harness(tmp_path, criterion):
    synth = SynthConfig(n_scenes=10, test_scenes=2, known_source_scenes=2, frames_per_scene=2, frame_size=32)
    cfg = TrainConfig(total_iters=4, **TINY)
    w = WienerDeblurrer(nsr=1e-2, n_kernel_samples=32).fit()
    rows = ratio_ablation(synth, ["5:5", "6:4", "9:1"], cfg, w, out_dir=tmp_path)
    again = ratio_ablation(synth, ["6:4"], cfg, w)
    same_test = len({r.psnr_direct for r in rows}) == 1
    repeatable = again[0] == rows[1]
    ok = [r.ratio for r in rows] == ["5:5", "6:4", "9:1"] and same_test and repeatable
    table = "; ".join(f"{r.ratio} gain {r.gain:+.3f}" for r in rows)
    criterion("ratio harness", ok, f"{table}; shared test set {same_test}, rerun identical {repeatable}")
