"""Local distribution adjustment.

The learned form predicts per-patch corrections to local mean and standard
deviation and realigns the input with x' = (x - mu) / (sigma + eps) * sigma'
+ mu'. The oracle forms assume the clean image is known and implement the
ladder of increasingly local alignments used to motivate the learned one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .module import Conv2d, Module
from .ops import pad_reflect2d, patch_broadcast, patch_mean
from .tensor import Tensor, concat

ORACLE_MODES = ("global_fixed", "global_mean", "local_mean", "local_mean_std")

# Keeps sqrt differentiable on constant patches; small enough not to move
# real32 statistics.
_VAR_GUARD = 1e-12


@dataclass
class LocalStats:
    """Patchwise mean/std broadcast back to pixel resolution."""

    mu: Tensor
    sigma: Tensor
    patch_size: int


def local_mean_std(x: Tensor, patch_size: int) -> LocalStats:
    """Per-patch per-channel population statistics of a B,C,H,W tensor."""
    if patch_size <= 0:
        raise ShapeError(f"patch size must be positive, got {patch_size}")
    mu_grid = patch_mean(x, patch_size)
    centered = x - patch_broadcast(mu_grid, patch_size)
    var_grid = patch_mean(centered * centered, patch_size)
    sigma_grid = (var_grid + _VAR_GUARD).sqrt()
    return LocalStats(
        mu=patch_broadcast(mu_grid, patch_size),
        sigma=patch_broadcast(sigma_grid, patch_size),
        patch_size=patch_size,
    )


def align(x: Tensor, stats: LocalStats, mu_target, sigma_target, epsilon: float) -> Tensor:
    """x' = (x - mu) / (sigma + eps) * sigma' + mu'."""
    return (x - stats.mu) / (stats.sigma + epsilon) * sigma_target + mu_target


def _np_patch_stats(x: np.ndarray, patch: int) -> tuple[np.ndarray, np.ndarray]:
    c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"extents {h}x{w} not divisible by patch {patch}")
    cells = x.reshape(c, h // patch, patch, w // patch, patch)
    mu = cells.mean(axis=(2, 4))
    sigma = cells.std(axis=(2, 4))
    expand = lambda g: np.repeat(np.repeat(g, patch, axis=1), patch, axis=2)
    return expand(mu), expand(sigma)


def oracle_align(x: np.ndarray, gt: np.ndarray, mode: str, patch_size: int = 16,
                 ratio: float | None = None, eps: float = 0.0) -> np.ndarray:
    """Known-clean-image alignment ladder on [C,H,W] arrays.

    global_fixed and global_mean emulate exposure scaling and clip to [0,1];
    the local modes apply the statistic transform unclipped so patch means
    and deviations match the clean image's exactly.
    """
    if x.shape != gt.shape:
        raise ShapeError(f"noisy and clean shapes differ: {x.shape} vs {gt.shape}")
    if mode == "global_fixed":
        if ratio is None:
            raise ConfigError("global_fixed alignment needs the amplification ratio")
        return np.clip(x * ratio, 0.0, 1.0)
    if mode == "global_mean":
        return np.clip(x * (gt.mean() / max(x.mean(), 1e-12)), 0.0, 1.0)
    if mode == "local_mean":
        mu_x, _ = _np_patch_stats(x, patch_size)
        mu_gt, _ = _np_patch_stats(gt, patch_size)
        return x * (mu_gt / (mu_x + (eps or 1e-12)))
    if mode == "local_mean_std":
        mu_x, sd_x = _np_patch_stats(x, patch_size)
        mu_gt, sd_gt = _np_patch_stats(gt, patch_size)
        return (x - mu_x) / (sd_x + eps) * sd_gt + mu_gt
    raise ConfigError(f"unknown oracle alignment mode {mode!r}")


class Loda(Module):
    """Learned multi-scale local distribution adjustment.

    Per patch size, 3x3 heads on the patch grids predict a mean shift and a
    log std scale (so sigma' stays positive); the aligned branches are
    concatenated and fused back to the input width. Heads start at zero,
    which makes every branch an identity alignment.
    """

    def __init__(self, rng, channels: int, patch_sizes: tuple[int, ...],
                 epsilon: float = 1e-6, dtype=np.float32):
        if not patch_sizes:
            raise ConfigError("patch_sizes must be nonempty")
        if epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        self.patch_sizes = tuple(int(p) for p in patch_sizes)
        self.epsilon = float(epsilon)
        self.mean_heads = [Conv2d(rng, channels, channels, 3, padding=1, zero_init=True, dtype=dtype)
                           for _ in self.patch_sizes]
        self.std_heads = [Conv2d(rng, channels, channels, 3, padding=1, zero_init=True, dtype=dtype)
                          for _ in self.patch_sizes]
        self.fuse = Conv2d(rng, channels * len(self.patch_sizes), channels, 1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        branches = []
        for ps, mean_head, std_head in zip(self.patch_sizes, self.mean_heads, self.std_heads):
            pad_h = (-h) % ps
            pad_w = (-w) % ps
            if pad_h >= h or pad_w >= w:
                raise ShapeError(f"patch size {ps} too large for {h}x{w} input")
            xe = pad_reflect2d(x, (0, pad_h, 0, pad_w)) if (pad_h or pad_w) else x
            mu_grid = patch_mean(xe, ps)
            centered = xe - patch_broadcast(mu_grid, ps)
            var_grid = patch_mean(centered * centered, ps)
            sigma_grid = (var_grid + _VAR_GUARD).sqrt()
            mu_target = mu_grid + mean_head(mu_grid)
            sigma_target = sigma_grid * std_head(sigma_grid).exp()
            aligned = (centered
                       / (patch_broadcast(sigma_grid, ps) + self.epsilon)
                       * patch_broadcast(sigma_target, ps)
                       + patch_broadcast(mu_target, ps))
            if pad_h or pad_w:
                aligned = aligned[:, :, :h, :w]
            branches.append(aligned)
        return self.fuse(concat(branches, axis=1))
