import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def texture():
    """Smooth random colour texture with a natural-image-like spectrum."""
    from scipy import ndimage

    r = np.random.default_rng(7)
    layers = [ndimage.gaussian_filter(r.normal(size=(64, 64, 3)), (s, s, 0), mode="wrap") * s for s in (0.7, 2, 5)]
    img = sum(layers)
    img = (img - img.min()) / (img.max() - img.min())
    return 0.1 + 0.8 * img


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(name, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
