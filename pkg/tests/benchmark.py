"""Desk benchmark driver shared by the acceptance suite.

Runs synth -> train -> eval -> validate-converter with the default project
config in ``<root>/<config key>/``, picking up whatever an earlier
invocation left behind (training resumes from its checkpoint). The final
numbers are cached in ``results.json`` in that directory.

Run it directly to pre-compute the results before ``pytest``::

    python3 tests/benchmark.py
"""

import json
import os
import sys
import time
from pathlib import Path

from blurshift import __version__
from blurshift.cli import main
from blurshift.config import ProjectConfig, dump_config

ROOT = Path(os.environ.get("BLURSHIFT_BENCH_ROOT", Path(__file__).resolve().parents[1] / "benchmarks" / "desk"))


def cache_key(cfg: ProjectConfig) -> str:
    return f"{cfg.hash()}-{__version__}"


def run_dir(root: Path = ROOT) -> Path:
    return root / cache_key(ProjectConfig())


def load_cached(root: Path = ROOT):
    path = run_dir(root) / "results.json"
    if not path.exists():
        return None
    results = json.loads(path.read_text())
    return results if results.get("key") == cache_key(ProjectConfig()) else None


def _stage(root: Path, timings: dict, name: str, *args: str) -> None:
    t0 = time.time()
    code = main([name, *args, "--root", str(root), "--config", "config.yaml"])
    if code != 0:
        raise RuntimeError(f"benchmark stage {name} exited with {code}")
    timings[name] = timings.get(name, 0.0) + time.time() - t0
    (root / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")


def run_benchmark(root: Path = ROOT) -> dict:
    cached = load_cached(root)
    if cached is not None:
        return cached
    cfg = ProjectConfig()
    root = run_dir(root)
    root.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, root / "config.yaml")
    tpath = root / "timings.json"
    timings = json.loads(tpath.read_text()) if tpath.exists() else {}

    if not (root / "data" / "manifest.json").exists():
        _stage(root, timings, "synth", "--overwrite")
    _stage(root, timings, "train", "--progress", "1000", "-v")
    _stage(root, timings, "eval", "--model", "runs/train/generator.pt")
    _stage(root, timings, "validate-converter", "--model", "runs/train/generator.pt",
           "--discriminator", "runs/train/discriminator.pt")

    summary = json.loads((root / "runs" / "eval" / "summary.json").read_text())
    report = json.loads((root / "runs" / "validate" / "report.json").read_text())
    results = {
        "key": cache_key(cfg),
        "n_images": summary["n_images"],
        "means": summary["means"],
        "gain_db": summary["pipeline_minus_direct_psnr"],
        "nsr": summary.get("nsr"),
        "converter": report,
        "runtime_s": sum(timings.values()),
        "timings": timings,
    }
    (root / "results.json").write_text(json.dumps(results, indent=2) + "\n")
    return results


if __name__ == "__main__":
    out = run_benchmark(Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT)
    print(json.dumps(out, indent=2))
