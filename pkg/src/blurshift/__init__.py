"""Deblurring by translating an unknown blur domain into a known one."""

from .blur import (
    DEFAULT_KNOWN_DOMAIN,
    DEFAULT_UNKNOWN_DOMAIN,
    BlurDomainSpec,
    BlurKernel,
    BlurPair,
    apply_blur,
    estimate_kernel,
    sample_kernel,
    transfer_kernel,
)
from .data import SynthConfig, UnpairedDataBundle, synthesize_bundle
from .estimator import BlurTranslator, make_deblur_pipeline
from .evaluation import KernelClassifier, MetricsTable, deblur_pipeline, evaluate_set, validate_converter
from .imaging import laplacian_variance, psnr, ssim
from .losses import LossReport, LossWeights
from .networks import FeatureExtractor, PatchDiscriminator, TranslationGenerator, WienerDeblurrer
from .training import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "BlurDomainSpec",
    "BlurKernel",
    "BlurPair",
    "BlurTranslator",
    "DEFAULT_KNOWN_DOMAIN",
    "DEFAULT_UNKNOWN_DOMAIN",
    "FeatureExtractor",
    "KernelClassifier",
    "LossReport",
    "LossWeights",
    "MetricsTable",
    "PatchDiscriminator",
    "SynthConfig",
    "TrainConfig",
    "TranslationGenerator",
    "UnpairedDataBundle",
    "WienerDeblurrer",
    "apply_blur",
    "deblur_pipeline",
    "estimate_kernel",
    "evaluate_set",
    "laplacian_variance",
    "make_deblur_pipeline",
    "psnr",
    "run_training",
    "sample_kernel",
    "ssim",
    "synthesize_bundle",
    "transfer_kernel",
    "validate_converter",
]
