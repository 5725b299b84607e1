"""Centered-spectrum low/high frequency split and its exact inverse.

The low window is the 2h' x 2w' rectangle around DC with h' = int(h * t),
so for extents below 1/t the window is empty and the whole spectrum counts
as high frequency. That truncation is intentional; pass min_low_halfwidth=1
to force a nonempty window on small inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import ComplexPair, dft2, fftshift2, idft2, ifftshift2
from .tensor import Tensor


@dataclass
class FreqSplit:
    """High-frequency real/imag parts plus the complex low-frequency window."""

    hf_real: Tensor
    hf_imag: Tensor
    lf: ComplexPair
    threshold: float

    @property
    def shape(self):
        return self.hf_real.shape


def low_window(h: int, w: int, threshold: float, min_low_halfwidth: int = 0) -> tuple[int, int]:
    if not 0.0 <= threshold <= 0.5:
        raise ConfigError(f"threshold must lie in [0, 0.5], got {threshold}")
    hh = max(int(h * threshold), min_low_halfwidth)
    ww = max(int(w * threshold), min_low_halfwidth)
    return hh, ww


def _low_mask(h: int, w: int, threshold: float, min_low_halfwidth: int, dtype) -> np.ndarray:
    hh, ww = low_window(h, w, threshold, min_low_halfwidth)
    mask = np.zeros((h, w), dtype=dtype)
    if hh and ww:
        mask[h // 2 - hh:h // 2 + hh, w // 2 - ww:w // 2 + ww] = 1.0
    return mask


def fe(x: Tensor, threshold: float = 0.01, min_low_halfwidth: int = 0) -> FreqSplit:
    """Split a real tensor's shifted spectrum into high and low rectangles."""
    if x.ndim < 2:
        raise ShapeError(f"fe needs at least 2 dimensions, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    m_low = _low_mask(h, w, threshold, min_low_halfwidth, x.dtype)
    m_high = 1.0 - m_low
    spec = fftshift2(dft2(x))
    return FreqSplit(
        hf_real=spec.real * m_high,
        hf_imag=spec.imag * m_high,
        lf=ComplexPair(spec.real * m_low, spec.imag * m_low),
        threshold=threshold,
    )


def ife(split: FreqSplit) -> Tensor:
    """Rebuild the spatial tensor from a (possibly modulated) split."""
    if split.hf_real.shape != split.hf_imag.shape or split.hf_real.shape != split.lf.shape:
        raise ShapeError("FreqSplit components disagree in shape")
    spec = ComplexPair(split.lf.real + split.hf_real, split.lf.imag + split.hf_imag)
    return idft2(ifftshift2(spec))


def ife_parts(hf_real: Tensor, hf_imag: Tensor, lf: ComplexPair) -> Tensor:
    """ife with the high-frequency real part swapped for a modulated one."""
    return ife(FreqSplit(hf_real=hf_real, hf_imag=hf_imag, lf=lf, threshold=0.0))


def hf_component(x: Tensor, threshold: float = 0.01, min_low_halfwidth: int = 0) -> Tensor:
    """Spatial-domain high-pass reconstruction (the low window zeroed)."""
    split = fe(x, threshold, min_low_halfwidth)
    return idft2(ifftshift2(ComplexPair(split.hf_real, split.hf_imag)))
