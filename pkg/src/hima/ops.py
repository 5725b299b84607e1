"""Image-shaped operators on the autodiff tape.

Everything here works on B,C,H,W tensors (DFTs on the trailing two axes of
any rank). Convolution padding is always explicit; same-size callers pass
dilation*(k-1)//2 for odd kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import counting
from .errors import ShapeError
from .tensor import Tensor, _make, matmul, reshape, tmean

# -- convolution --------------------------------------------------------------


def _conv_out_extent(extent: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (extent + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *, stride: int = 1,
           padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """Direct 2-D convolution (cross-correlation) with stride/dilation/groups."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    batch, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernels must be square, got {kh}x{kw}")
    if cin % groups:
        raise ShapeError(f"input channels {cin} not divisible by groups {groups}")
    if cout % groups:
        raise ShapeError(f"output channels {cout} not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight expects {cin_g} channels per group, input provides {cin // groups}"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} does not match output channels {cout}")
    ho = _conv_out_extent(h, kh, stride, padding, dilation)
    wo = _conv_out_extent(wd, kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output would be empty for input {h}x{wd} kernel {kh}")
    counting.add("conv2d", batch * ho * wo * cout * cin_g * kh * kw)
    if groups == cin and groups == cout:
        out = _depthwise(x, w, b, stride, padding, dilation, (ho, wo))
    else:
        out = _grouped(x, w, b, stride, padding, dilation, groups, (ho, wo))
    return out


def dwconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *, stride: int = 1,
             padding: int = 1, dilation: int = 1) -> Tensor:
    """Depthwise convolution: one k x k filter per channel."""
    if w.shape[0] != x.shape[1] or w.shape[1] != 1:
        raise ShapeError(f"dwconv2d weight {w.shape} must be [C,1,k,k] with C={x.shape[1]}")
    return conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=x.shape[1])


def _pad_hw(data: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return data
    return np.pad(data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, out_hw: tuple[int, int]) -> np.ndarray:
    # windows laid out as [B, H', W', C, k, k]
    keff = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (keff, keff), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    win = win[:, :, : out_hw[0], : out_hw[1]]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def _grouped(x: Tensor, w: Tensor, b: Tensor | None, stride: int, padding: int,
             dilation: int, groups: int, out_hw: tuple[int, int]) -> Tensor:
    batch, cin, h, wd = x.shape
    cout = w.shape[0]
    k = w.shape[2]
    hoxwo = out_hw[0] * out_hw[1]
    xp = _pad_hw(x.data, padding)
    cols = _im2col(xp, k, stride, dilation, out_hw)  # [B,H',W',C,k,k]
    cin_g = cin // groups
    cout_g = cout // groups
    outs = []
    col_groups = []
    for g in range(groups):
        col = cols[:, :, :, g * cin_g:(g + 1) * cin_g].reshape(batch * hoxwo, cin_g * k * k)
        col_groups.append(col)
        wmat = w.data[g * cout_g:(g + 1) * cout_g].reshape(cout_g, cin_g * k * k)
        outs.append(col @ wmat.T)
    out = np.concatenate(outs, axis=1) if groups > 1 else outs[0]
    out = out.reshape(batch, out_hw[0], out_hw[1], cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def vjp(grad):
        gflat = grad.transpose(0, 2, 3, 1).reshape(batch * hoxwo, cout)
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for g in range(groups):
            gout = gflat[:, g * cout_g:(g + 1) * cout_g]
            wmat = w.data[g * cout_g:(g + 1) * cout_g].reshape(cout_g, cin_g * k * k)
            gw[g * cout_g:(g + 1) * cout_g] = (gout.T @ col_groups[g]).reshape(cout_g, cin_g, k, k)
            gcol = (gout @ wmat).reshape(batch, out_hw[0], out_hw[1], cin_g, k, k)
            gcol = gcol.transpose(0, 3, 1, 2, 4, 5)
            base = g * cin_g
            for ki in range(k):
                for kj in range(k):
                    hi = ki * dilation
                    wi = kj * dilation
                    gxp[:, base:base + cin_g,
                        hi:hi + stride * (out_hw[0] - 1) + 1:stride,
                        wi:wi + stride * (out_hw[1] - 1) + 1:stride] += gcol[:, :, :, :, ki, kj]
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = None if b is None else grad.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(np.ascontiguousarray(out), parents, vjp)


def _depthwise(x: Tensor, w: Tensor, b: Tensor | None, stride: int, padding: int,
               dilation: int, out_hw: tuple[int, int]) -> Tensor:
    batch, c, h, wd = x.shape
    k = w.shape[2]
    xp = _pad_hw(x.data, padding)
    out = np.zeros((batch, c, out_hw[0], out_hw[1]), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            hi = ki * dilation
            wi = kj * dilation
            patch = xp[:, :, hi:hi + stride * (out_hw[0] - 1) + 1:stride,
                       wi:wi + stride * (out_hw[1] - 1) + 1:stride]
            out += w.data[None, :, 0, ki, kj, None, None] * patch
    if b is not None:
        out += b.data[None, :, None, None]

    def vjp(grad):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                hi = ki * dilation
                wi = kj * dilation
                sl = (slice(None), slice(None),
                      slice(hi, hi + stride * (out_hw[0] - 1) + 1, stride),
                      slice(wi, wi + stride * (out_hw[1] - 1) + 1, stride))
                gw[:, 0, ki, kj] = (grad * xp[sl]).sum(axis=(0, 2, 3))
                gxp[sl] += w.data[None, :, 0, ki, kj, None, None] * grad
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        gb = None if b is None else grad.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, vjp)


# -- dense / norm / pool -------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., Din] times w[Dout, Din] transposed, plus optional bias."""
    din = x.shape[-1] if x.ndim else 0
    if w.ndim != 2 or w.shape[1] != din:
        raise ShapeError(f"linear weight {w.shape} does not match input feature size {din}")
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)) if lead else 1, din))
    out = matmul(flat, transpose_last(w))
    if b is not None:
        out = out + b
    return reshape(out, lead + (w.shape[0],))


def transpose_last(t: Tensor) -> Tensor:
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return t.transpose(axes)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (x,), vjp)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, *, eps: float = 1e-6) -> Tensor:
    """LayerNorm over the channel axis of a B,C,H,W tensor."""
    if x.ndim != 4:
        raise ShapeError(f"layernorm expects B,C,H,W input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layernorm affine must have shape ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def vjp(g):
        gg = g * gamma.data[None, :, None, None]
        m1 = gg.mean(axis=1, keepdims=True)
        m2 = (gg * xhat).mean(axis=1, keepdims=True)
        gx = inv * (gg - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return (gx, ggamma, gbeta)

    return _make(out, (x, gamma, beta), vjp)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Global average pool to B,C,1,1."""
    return tmean(x, axis=(2, 3), keepdims=True)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pool with stride 2 (extents must be even)."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even extents, got {h}x{w}")
    r = reshape(x, (b, c, h // 2, 2, w // 2, 2))
    return tmean(r, axis=(3, 5))


# -- pixel shuffle -------------------------------------------------------------


def _shuffle_fwd(d: np.ndarray, r: int) -> np.ndarray:
    b, crr, h, w = d.shape
    c = crr // (r * r)
    out = d.reshape(b, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h * r, w * r)
    return np.ascontiguousarray(out)


def _unshuffle_fwd(d: np.ndarray, r: int) -> np.ndarray:
    b, c, hr, wr = d.shape
    h, w = hr // r, wr // r
    out = d.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h, w)
    return np.ascontiguousarray(out)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    if r == 1:
        return x
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by {r * r}, got {x.shape}")
    return _make(_shuffle_fwd(x.data, r), (x,), lambda g: (_unshuffle_fwd(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r == 1:
        return x
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle needs extents divisible by {r}, got {x.shape}")
    return _make(_unshuffle_fwd(x.data, r), (x,), lambda g: (_shuffle_fwd(g, r),))


# -- Fourier -------------------------------------------------------------------


@dataclass
class ComplexPair:
    """Real/imaginary halves of a spectrum, kept as two real tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(
                f"complex parts must share a shape: {self.real.shape} vs {self.imag.shape}"
            )

    @property
    def shape(self):
        return self.real.shape


def dft2(x: Tensor) -> ComplexPair:
    """Unnormalized forward DFT over the trailing two axes."""
    if x.ndim < 2:
        raise ShapeError(f"dft2 needs at least 2 dimensions, got {x.shape}")
    spec = np.fft.fft2(x.data, axes=(-2, -1))
    dt = x.dtype
    # Re(Fx) and Im(Fx) are independent linear maps of a real x; each gets
    # its own vjp through another forward transform.
    re = _make(np.ascontiguousarray(spec.real.astype(dt)), (x,),
               lambda g: (np.fft.fft2(g, axes=(-2, -1)).real.astype(dt),))
    im = _make(np.ascontiguousarray(spec.imag.astype(dt)), (x,),
               lambda g: (np.fft.fft2(g, axes=(-2, -1)).imag.astype(dt),))
    return ComplexPair(re, im)


def idft2(z: ComplexPair) -> Tensor:
    """1/(HW)-normalized inverse DFT; returns the real part."""
    spec = z.real.data + 1j * z.imag.data
    out = np.fft.ifft2(spec, axes=(-2, -1)).real
    dt = z.real.dtype

    def vjp_re(g):
        return np.fft.ifft2(g, axes=(-2, -1)).real.astype(dt)

    def vjp_im(g):
        return -np.fft.ifft2(g, axes=(-2, -1)).imag.astype(dt)

    return _make(np.ascontiguousarray(out.astype(dt)), (z.real, z.imag),
                 lambda g: (vjp_re(g), vjp_im(g)))


def _shift(t: Tensor, inverse: bool) -> Tensor:
    h, w = t.shape[-2], t.shape[-1]
    sh = (-(h // 2), -(w // 2)) if inverse else (h // 2, w // 2)
    back = (h // 2, w // 2) if inverse else (-(h // 2), -(w // 2))
    return _make(np.roll(t.data, sh, axis=(-2, -1)), (t,),
                 lambda g: (np.roll(g, back, axis=(-2, -1)),))


def fftshift2(z: ComplexPair) -> ComplexPair:
    """Move DC to (H//2, W//2) on the trailing axes."""
    return ComplexPair(_shift(z.real, False), _shift(z.imag, False))


def ifftshift2(z: ComplexPair) -> ComplexPair:
    return ComplexPair(_shift(z.real, True), _shift(z.imag, True))


# -- padding and patch statistics ---------------------------------------------


def pad_reflect2d(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflective padding of the trailing two axes by (top, bottom, left, right)."""
    top, bottom, left, right = pads
    if not any(pads):
        return x
    b, c, h, w = x.shape
    idx = np.pad(np.arange(h * w).reshape(h, w), ((top, bottom), (left, right)), mode="reflect")
    flat_idx = idx.ravel()
    out = x.data.reshape(b, c, h * w)[:, :, flat_idx].reshape(b, c, h + top + bottom, w + left + right)

    def vjp(g):
        gflat = g.reshape(b, c, -1)
        acc = np.zeros((b, c, h * w), dtype=g.dtype)
        np.add.at(acc, (slice(None), slice(None), flat_idx), gflat)
        return (acc.reshape(b, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), vjp)


def patch_mean(x: Tensor, patch: int) -> Tensor:
    """Per-patch per-channel mean on a grid of (H/patch, W/patch) cells."""
    if patch <= 0:
        raise ShapeError(f"patch size must be positive, got {patch}")
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(f"extents {h}x{w} not divisible by patch {patch}")
    r = reshape(x, (b, c, h // patch, patch, w // patch, patch))
    return tmean(r, axis=(3, 5))


def patch_broadcast(grid: Tensor, patch: int) -> Tensor:
    """Nearest-neighbor broadcast of a patch grid back to pixel resolution."""
    b, c, gh, gw = grid.shape
    out = np.repeat(np.repeat(grid.data, patch, axis=2), patch, axis=3)

    def vjp(g):
        return (g.reshape(b, c, gh, patch, gw, patch).sum(axis=(3, 5)),)

    return _make(out, (grid,), vjp)
