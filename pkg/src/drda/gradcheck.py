"""Central finite-difference checks of the training loss gradients."""

from __future__ import annotations

import numpy as np
import torch

from .augment import AugmentedExample
from .loss import drda_loss_from_logits, drda_loss_grad, finite_difference_grad, relative_error
from .segmenter import TokenSequence

STEP = 1e-5
# Coordinates whose true gradient is below this magnitude are compared absolutely.
FLOOR = 1e-8


def logits_gradcheck(seed: int = 0, positions: int = 5, classes: int = 7, k: int = 2, step: float = STEP) -> float:
    """Max relative error of the hand-derived logits gradient."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(positions, classes))
    bs = [rng.normal(size=(positions, classes)) for _ in range(k)]
    y = rng.integers(classes, size=positions)
    mask = np.ones(positions, dtype=bool)
    mask[-1] = False
    ga, gbs = drda_loss_grad(a, bs, y, 5.0, 0.1, mask)
    worst = relative_error(ga, finite_difference_grad(lambda x: drda_loss_from_logits(x, bs, y, 5.0, 0.1, mask), a, step), FLOOR).max()
    for i in range(k):
        def f(x, i=i):
            views = list(bs)
            views[i] = x
            return drda_loss_from_logits(a, views, y, 5.0, 0.1, mask)

        worst = max(worst, relative_error(gbs[i], finite_difference_grad(f, bs[i], step), FLOOR).max())
    return float(worst)


def tiny_config(seed: int = 0):
    from .toy_nmt import ModelConfig

    return ModelConfig(
        prime_size=12, aug_sizes=(10,), d_model=8, n_heads=2, n_layers=1, ffn_dim=16,
        dropout=0.0, alpha=5.0, smoothing=0.1, seed=seed, dtype="float64",
    )


def tiny_batch(seed: int = 0) -> list[AugmentedExample]:
    rng = np.random.default_rng(seed + 1)

    def seq(n, hi, size):
        return TokenSequence(tuple(int(x) for x in rng.integers(4, hi, size=n)), None, size)

    return [
        AugmentedExample(seq(3, 12, 12), (seq(5, 10, 10),), seq(4, 12, 12)),
        AugmentedExample(seq(2, 12, 12), (seq(3, 10, 10),), seq(3, 12, 12)),
    ]


def model_gradcheck(seed: int = 0, step: float = STEP) -> float:
    """Max relative error of autograd vs central differences over every parameter."""
    from .toy_nmt import batch_loss, build_model

    config = tiny_config(seed)
    model = build_model(config)
    model.train()
    batch = tiny_batch(seed)

    def loss() -> torch.Tensor:
        return batch_loss(model, batch, config)[0]

    model.zero_grad()
    loss().backward()
    worst = 0.0
    with torch.no_grad():
        for p in model.parameters():
            analytic = p.grad.detach().numpy().copy()
            flat = p.view(-1)
            numeric = np.zeros(flat.numel())
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + step
                hi = loss().item()
                flat[j] = orig - step
                lo = loss().item()
                flat[j] = orig
                numeric[j] = (hi - lo) / (2 * step)
            err = relative_error(analytic.reshape(-1), numeric, FLOOR)
            worst = max(worst, float(err.max()))
    return worst
