"""Command line entry point: ``blurshift <subcommand> [flags]``.

Every path is resolved against ``--root``. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import __version__
from .config import ProjectConfig, dump_config, load_config
from .data import DatasetTree, build_known_set, read_manifest, synthesize_bundle, write_bundle, write_manifest
from .evaluation import (
    KernelClassifier,
    classifier_training_set,
    evaluate_set,
    ratio_ablation,
    translate_images,
    validate_converter,
    write_ablation,
)
from .exceptions import BlurshiftError, ConfigError, NonFiniteError, TargetNotEmptyError
from .imaging import read_png, write_png
from .networks import PatchDiscriminator, WienerDeblurrer, build_generator, load_params
from .training import Models, TrainingData, run_training

log = logging.getLogger("blurshift")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# helpers


class Context:
    def __init__(self, args):
        self.args = args
        self.root = Path(args.root)
        self.config = load_config(self.path(args.config) if args.config else None)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p


def _png_names(d: Path) -> list[str]:
    if not d.is_dir():
        raise FileNotFoundError(f"input directory not found: {d}")
    return sorted(p.stem for p in d.glob("*.png"))


def _load_generator(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"generator parameters not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    g = build_generator(payload["manifest"])
    load_params(path, g)
    return g


def _load_discriminator(path: Path) -> PatchDiscriminator:
    if not path.is_file():
        raise FileNotFoundError(f"discriminator parameters not found: {path}")
    man = torch.load(path, map_location="cpu", weights_only=False)["manifest"]
    d = PatchDiscriminator(man["widths"], stem=man.get("stem", 0), highpass=man.get("highpass", 0.0),
                           lowpass=man.get("lowpass", 0.0))
    load_params(path, d)
    return d


def _deblurrer(ctx: Context, data_root: Optional[Path]) -> WienerDeblurrer:
    cfg = ctx.config.deblurrer
    w = WienerDeblurrer(domain=ctx.config.synth.known, nsr=cfg.nsr, n_kernel_samples=cfg.n_kernel_samples,
                        seed=cfg.seed)
    if cfg.nsr == "auto":
        if data_root is None:
            raise ConfigError("deblurrer.nsr is 'auto' but no --data tree with known_source pairs was given")
        _, pairs = DatasetTree(data_root).read_pairs("known_source")
        if not pairs:
            raise FileNotFoundError(f"no known_source pairs under {data_root} to calibrate nsr")
        w.fit([p.blurry for p in pairs], [p.sharp for p in pairs])
        log.info("calibrated nsr=%g on %d known-domain pairs", w.nsr_, len(pairs))
    else:
        w.fit()
    return w


def _ensure_empty(path: Path, overwrite: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise TargetNotEmptyError(f"{path} is not empty; pass --overwrite to replace it")
        shutil.rmtree(path)


def _train_cfg(ctx: Context, iters: Optional[int] = None):
    cfg = ctx.config.train
    if iters is not None:
        cfg = dataclasses.replace(cfg, total_iters=iters)
    return cfg


# --------------------------------------------------------------------------
# commands


def cmd_synth(ctx: Context) -> int:
    out = ctx.path(ctx.args.out)
    _ensure_empty(out, ctx.args.overwrite)
    synth = ctx.config.synth
    if ctx.args.seed is not None:
        synth = dataclasses.replace(synth, seed=ctx.args.seed)
    bundle = synthesize_bundle(synth)
    write_bundle(out, bundle)
    m = bundle.manifest
    print(f"wrote {len(bundle.B)} B, {len(bundle.S)} S, {len(bundle.K)} K, {len(bundle.test)} test images to {out} "
          f"({len(m['scenes']['B'])} B scenes, {len(m['scenes']['S'])} S scenes)")
    return EXIT_OK


def cmd_build_known(ctx: Context) -> int:
    root = ctx.path(ctx.args.data)
    tree = DatasetTree(root)
    mode = ctx.args.mode or ctx.config.synth.known_mode
    S_ids = tree.names("sharp")
    S = tree.read("sharp", S_ids)
    known_ids, pairs = tree.read_pairs("known_source")
    manifest = read_manifest(root)
    seed = int(manifest["seeds"]["build_known"]) if ctx.args.seed is None else ctx.args.seed
    noise = ctx.config.synth.unknown.noise_sigma
    K, prov = build_known_set(S, pairs, mode, seed, noise_sigma=noise)
    known_dir = root / "known"
    if known_dir.exists():
        shutil.rmtree(known_dir)
    for name, img in zip(S_ids, K):
        write_png(known_dir / f"{name}.png", img)
    manifest["known_set"] = {
        "mode": mode, "noise_sigma": noise, "seed": seed,
        "provenance": [{"image": S_ids[p.sharp_index], "source_pair": known_ids[p.source_pair],
                        "noise_seed": str(p.noise_seed), "mode": p.mode} for p in prov],
    }
    write_manifest(root, manifest)
    print(f"built {len(K)} known-blur images ({mode} mode) in {known_dir}")
    return EXIT_OK


def cmd_train(ctx: Context) -> int:
    root = ctx.path(ctx.args.data)
    out = ctx.path(ctx.args.out)
    cfg = _train_cfg(ctx, ctx.args.iters)
    bundle = DatasetTree(root).training_bundle()
    data = TrainingData.from_images(bundle.B, bundle.K)
    models = Models.from_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(dataclasses.replace(ctx.config, train=cfg), out / "config.yaml")
    state = run_training(data, models, cfg, out, resume=not ctx.args.no_resume, stop_at=ctx.args.stop_at,
                         progress_every=ctx.args.progress)
    print(f"trained to iteration {state.iteration}; artifacts in {out}")
    return EXIT_OK


def cmd_convert(ctx: Context) -> int:
    g = _load_generator(ctx.path(ctx.args.model))
    src, out = ctx.path(ctx.args.input), ctx.path(ctx.args.out)
    names = _png_names(src)
    images = [read_png(src / f"{n}.png") for n in names]
    for n, img in zip(names, translate_images(g, images)):
        write_png(out / f"{n}.png", img)
    print(f"converted {len(names)} images into {out}")
    return EXIT_OK


def cmd_deblur(ctx: Context) -> int:
    w = _deblurrer(ctx, ctx.path(ctx.args.data) if ctx.args.data else None)
    g = _load_generator(ctx.path(ctx.args.model)) if ctx.args.model else None
    src, out = ctx.path(ctx.args.input), ctx.path(ctx.args.out)
    names = _png_names(src)
    images = [read_png(src / f"{n}.png") for n in names]
    for n, img in zip(names, translate_images(g, images)):
        write_png(out / f"{n}.png", w.predict(img))
    print(f"deblurred {len(names)} images into {out} ({'pipeline' if g is not None else 'direct'})")
    return EXIT_OK


def cmd_eval(ctx: Context) -> int:
    root = ctx.path(ctx.args.data)
    g = _load_generator(ctx.path(ctx.args.model)) if ctx.args.model else None
    w = _deblurrer(ctx, root)
    ids, pairs = DatasetTree(root).read_pairs(ctx.args.split)
    table = evaluate_set(g, w, pairs, ids)
    out = ctx.path(ctx.args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "metrics.csv")
    s = table.write_summary(out / "summary.json", ctx.config.hash(), nsr=w.nsr_,
                            model=str(ctx.args.model) if ctx.args.model else None)
    m = s["means"]
    print(f"{len(pairs)} images: input {m['psnr_input']:.2f} dB, direct {m['psnr_direct']:.2f} dB, "
          f"pipeline {m['psnr_pipeline']:.2f} dB, gain {s['pipeline_minus_direct_psnr']:+.2f} dB")
    return EXIT_OK


def cmd_ablate_ratio(ctx: Context) -> int:
    root = ctx.path(ctx.args.data) if ctx.args.data else None
    synth = ctx.config.synth
    if root is not None:
        synth = type(synth).from_dict(read_manifest(root)["synth_config"])
    ratios = ctx.args.ratios.split(",") if ctx.args.ratios else list(ctx.config.ablate.ratios)
    iters = ctx.args.iters if ctx.args.iters is not None else ctx.config.ablate.total_iters
    cfg = _train_cfg(ctx, iters)
    w = _deblurrer(ctx, root)
    out = ctx.path(ctx.args.out)
    rows = ratio_ablation(synth, ratios, cfg, w, out_dir=out)
    write_ablation(out / "ablation.csv", rows)
    for r in rows:
        print(f"{r.ratio:>6}  B={r.n_b_images:4d} S={r.n_s_images:4d}  direct {r.psnr_direct:.2f}  "
              f"pipeline {r.psnr_pipeline:.2f}  gain {r.gain:+.2f}")
    return EXIT_OK


def cmd_validate_converter(ctx: Context) -> int:
    root = ctx.path(ctx.args.data)
    tree = DatasetTree(root)
    g = _load_generator(ctx.path(ctx.args.model))
    d = _load_discriminator(ctx.path(ctx.args.discriminator)) if ctx.args.discriminator else None
    cc = ctx.config.classifier
    X, y = classifier_training_set(ctx.config.synth.unknown, ctx.config.synth.known, cc.n_scenes,
                                   ctx.config.synth.frame_size)
    clf = KernelClassifier(cc.width, cc.iters, cc.batch_size, cc.crop, cc.lr, cc.seed, cc.highpass).fit(X, y)
    _, pairs = tree.read_pairs(ctx.args.split)
    inputs = [p.blurry for p in pairs]
    known = tree.read("known")
    report = validate_converter(d, clf, inputs, translate_images(g, inputs), known)
    out = ctx.path(ctx.args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"acc1 {report.acc1:.3f} (raw {report.acc1_raw:.3f})  acc2 {report.acc2:.3f} "
          f"(raw {report.acc2_raw:.3f}, real K {report.acc2_known:.3f})")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--root", default=os.environ.get("BLURSHIFT_ROOT", "."),
                        help="base directory for every relative path (default: $BLURSHIFT_ROOT or .)")
    common.add_argument("--config", help="YAML config file; flags override its values")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="blurshift", description="Blur-domain translation for deblurring with a known-domain model.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic dataset tree")
    s.add_argument("--out", default="data", help="dataset directory to create (default: data)")
    s.add_argument("--seed", type=int, help="override synth.seed")
    s.add_argument("--overwrite", action="store_true", help="replace a non-empty target directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-known", parents=[common], help="rebuild the known-blur set K from sharp/ and known_source/")
    s.add_argument("--data", default="data", help="dataset directory (default: data)")
    s.add_argument("--mode", choices=("exact", "estimated"), help="kernel transfer mode (default: synth.known_mode)")
    s.add_argument("--seed", type=int, help="override the seed recorded in the manifest")
    s.set_defaults(func=cmd_build_known)

    s = sub.add_parser("train", parents=[common], help="train the blur translator")
    s.add_argument("--data", default="data", help="dataset directory (default: data)")
    s.add_argument("--out", default="runs/train", help="run directory for checkpoints and logs")
    s.add_argument("--iters", type=int, help="override train.total_iters")
    s.add_argument("--stop-at", type=int, help="pause after this iteration (resume later)")
    s.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint")
    s.add_argument("--progress", type=int, default=0, help="log losses every N iterations")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", parents=[common], help="translate images into the known blur domain")
    s.add_argument("--model", required=True, help="generator parameter file")
    s.add_argument("--input", required=True, help="directory of PNG images")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("deblur", parents=[common], help="deblur images, optionally translating them first")
    s.add_argument("--input", required=True, help="directory of PNG images")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--model", help="generator parameter file; omit for direct deblurring")
    s.add_argument("--data", help="dataset directory holding known_source/ pairs for nsr calibration")
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("eval", parents=[common], help="score input, direct and pipeline deblurring")
    s.add_argument("--data", default="data", help="dataset directory (default: data)")
    s.add_argument("--split", default="test", help="subdirectory holding blur/ and sharp/ pairs (default: test)")
    s.add_argument("--model", help="generator parameter file; omit to evaluate the identity translator")
    s.add_argument("--out", default="runs/eval", help="directory for metrics.csv and summary.json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate-ratio", parents=[common], help="train and score one translator per B:S ratio")
    s.add_argument("--data", help="dataset directory whose manifest fixes the scenes and seeds")
    s.add_argument("--ratios", help="comma separated, e.g. 5:5,6:4,9:1 (default: ablate.ratios)")
    s.add_argument("--iters", type=int, help="override training iterations per ratio")
    s.add_argument("--out", default="runs/ablate", help="output directory")
    s.set_defaults(func=cmd_ablate_ratio)

    s = sub.add_parser("validate-converter", parents=[common], help="classifier and discriminator acceptance rates")
    s.add_argument("--data", default="data", help="dataset directory (default: data)")
    s.add_argument("--split", default="test", help="subdirectory with the blurry inputs (default: test)")
    s.add_argument("--model", required=True, help="generator parameter file")
    s.add_argument("--discriminator", help="discriminator parameter file for acc1")
    s.add_argument("--out", default="runs/validate/report.json", help="JSON report path")
    s.set_defaults(func=cmd_validate_converter)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, UsageError)):
        return EXIT_USAGE
    if isinstance(exc, (NonFiniteError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        ctx = Context(args)
        return args.func(ctx)
    except (BlurshiftError, OSError, ValueError, KeyError, FloatingPointError) as exc:
        code = _exit_code(exc)
        print(f"blurshift {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
