"""Central finite-difference gradient checks.

The numeric side perturbs raw arrays and re-runs the forward function with
the tape disabled, so it is independent of the reverse-mode implementation
it vets. Intended for real64 tensors.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_partial(fn: Callable[[], Tensor], leaf: Tensor, coord: tuple, eps: float = 1e-5) -> float:
    """Central-difference derivative of the scalar fn() wrt one coordinate."""
    original = leaf.data[coord]
    with no_grad():
        leaf.data[coord] = original + eps
        hi = fn().item()
        leaf.data[coord] = original - eps
        lo = fn().item()
    leaf.data[coord] = original
    return (hi - lo) / (2.0 * eps)


def _sample_coords(shape: tuple, max_coords: int, rng: np.random.Generator) -> list[tuple]:
    size = int(np.prod(shape)) if shape else 1
    if size <= max_coords:
        flat = np.arange(size)
    else:
        flat = rng.choice(size, size=max_coords, replace=False)
    return [np.unravel_index(int(i), shape) if shape else () for i in flat]


def max_relative_error(fn: Callable[[], Tensor], leaves: Sequence[Tensor], *,
                       eps: float = 1e-5, max_coords: int = 6, seed: int = 0) -> float:
    """Worst relative disagreement between tape grads and finite differences.

    Relative error is max|analytic - numeric| over sampled coordinates,
    normalized by the largest sampled gradient magnitude.
    """
    rng = np.random.default_rng(seed)
    for leaf in leaves:
        leaf.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    scale = 1e-6
    for leaf in leaves:
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for coord in _sample_coords(leaf.data.shape, max_coords, rng):
            analytic = float(grad[coord])
            numeric = numeric_partial(fn, leaf, coord, eps)
            worst = max(worst, abs(analytic - numeric))
            scale = max(scale, abs(numeric), abs(analytic))
    return worst / scale
