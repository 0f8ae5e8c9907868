"""Directional finite-difference gradient checking for torch modules."""

import numpy as np
import torch

from stylediff.backbone import flatten_parameters, load_flat_parameters


def directional_grad_errors(net, loss_fn, directions: int, seed: int, h: float = 1e-6):
    """Relative errors between autograd and central differences.

    ``loss_fn()`` must be a deterministic scalar function of the net's
    parameters. Returns one relative error per random unit direction.
    """
    theta = flatten_parameters(net)

    net.zero_grad()
    loss_fn().backward()
    grads = []
    for _, p in net.named_parameters():
        g = p.grad
        grads.append(
            np.zeros(p.numel()) if g is None else g.detach().double().numpy().ravel()
        )
    analytic = np.concatenate(grads)

    rng = np.random.default_rng(seed)
    errors = []
    with torch.no_grad():
        for _ in range(directions):
            v = rng.standard_normal(theta.size)
            v /= np.linalg.norm(v)
            load_flat_parameters(net, theta + h * v)
            plus = float(loss_fn())
            load_flat_parameters(net, theta - h * v)
            minus = float(loss_fn())
            fd = (plus - minus) / (2 * h)
            slope = float(analytic @ v)
            errors.append(abs(fd - slope) / max(abs(fd), abs(slope), 1e-12))
        load_flat_parameters(net, theta)
    return np.asarray(errors)
