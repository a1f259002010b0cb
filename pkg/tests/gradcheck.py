"""Central finite-difference probing of module parameters."""

import numpy as np
import torch


def probe_gradients(module, loss_fn, n_probe=100, seed=0, h=1e-6, rtol=1e-3, atol=1e-10):
    """Compare autograd against central differences on randomly chosen scalars.

    Returns ``(n_ok, n_probe)``. A probe passes when
    ``|analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol``.
    """
    params = [p for p in module.parameters()]
    for p in params:
        p.requires_grad_(True)
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    # probe only parameters the loss reaches; untouched ones would pass trivially
    params = [p for p in params if p.grad is not None]
    grads = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(offsets[-1], size=n_probe, replace=False)
    ok = 0
    # perturb through .data so losses that differentiate internally still work
    for fi in flat_idx:
        t = int(np.searchsorted(offsets, fi, side="right") - 1)
        j = int(fi - offsets[t])
        p = params[t].data.view(-1)
        orig = p[j].item()
        p[j] = orig + h
        up = loss_fn().item()
        p[j] = orig - h
        down = loss_fn().item()
        p[j] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[t].view(-1)[j].item()
        if abs(analytic - numeric) <= rtol * max(abs(analytic), abs(numeric)) + atol:
            ok += 1
    return ok, n_probe
