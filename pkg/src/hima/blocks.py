"""Neural building blocks.

LEB: gated multi-dilation convolutions (dilations 1, 4, 9).
MeSA: channel-wise C x C self-attention with a learnable metadata vector
      modulating the queries.
SS2D: four-direction selective-scan state-space mixer.
LSB/SSB: pre-norm residual blocks pairing MeSA or SS2D with an LEB.
PDB: stage-one pre-denoiser built from residual LEBs.

Branch output layers start at zero so every block is the identity at
initialization.
"""

from __future__ import annotations

import numpy as np

from . import counting
from .errors import ShapeError
from .module import Conv2d, LayerNorm, Linear, Module, ones_param, param
from .ops import adaptive_avg_pool, transpose_last
from .ops import softmax as softmax_op
from .tensor import Tensor, _make, concat, matmul, reshape, sigmoid, softplus, stack

LEB_DILATIONS = (1, 4, 9)


class LEB(Module):
    """x = sum_i x_i * t_i over three dilated convs, then a pooled channel
    gate and a depthwise projection (zero-initialized by default)."""

    def __init__(self, rng, channels: int, *, zero_out: bool = True, dtype=np.float32):
        self.diconvs = [
            Conv2d(rng, channels, 2 * channels, 3, padding=d, dilation=d, dtype=dtype)
            for d in LEB_DILATIONS
        ]
        self.gate = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.dwconv = Conv2d(rng, channels, channels, 3, padding=1, groups=channels,
                             zero_init=zero_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        mixed = None
        for diconv in self.diconvs:
            xi, ti = diconv(x).chunk(2, axis=1)
            term = xi * ti
            mixed = term if mixed is None else mixed + term
        mixed = self.gate(adaptive_avg_pool(mixed)) * mixed
        return self.dwconv(mixed)


class MeSA(Module):
    """Channel attention whose query path is modulated by learnable metadata.

    Attention is softmax(Q_flat K_flat^T * t) of shape C x C regardless of
    the spatial extent; the output projection is zero-initialized.
    """

    def __init__(self, rng, channels: int, meta_dim: int = 16, *,
                 use_metadata: bool = True, zero_out: bool = True, dtype=np.float32):
        self.use_metadata = use_metadata
        self.meta = param(rng, (meta_dim,), dtype, scale=0.02) if use_metadata else None
        self.meta_proj = Linear(rng, meta_dim, channels, dtype=dtype) if use_metadata else None
        self.q_conv = Conv2d(rng, channels, channels, 1, dtype=dtype) if use_metadata else None
        self.q_dw = (Conv2d(rng, channels, channels, 3, padding=1, groups=channels, dtype=dtype)
                     if use_metadata else None)
        self.k_conv = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.v_conv = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.temperature = Tensor(np.full((1,), 0.01, dtype=dtype), requires_grad=True)
        self.out_conv = Conv2d(rng, channels, channels, 1, zero_init=zero_out, dtype=dtype)
        self.last_attention_shape: tuple | None = None

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        if self.use_metadata:
            meta_vec = reshape(self.meta_proj(self.meta), (1, c, 1, 1))
            q = x + self.q_dw(meta_vec * self.q_conv(x))
        else:
            q = x
        q_flat = reshape(q, (b, c, h * w))
        k_flat = reshape(self.k_conv(x), (b, c, h * w))
        v_flat = reshape(self.v_conv(x), (b, c, h * w))
        attention = softmax_op(matmul(q_flat, transpose_last(k_flat)) * self.temperature, axis=-1)
        self.last_attention_shape = attention.shape
        out = reshape(matmul(attention, v_flat), (b, c, h, w))
        return self.out_conv(out)


# -- selective scan -------------------------------------------------------------


def selective_scan(u: Tensor, delta: Tensor, a: Tensor, b_seq: Tensor,
                   c_seq: Tensor, d_skip: Tensor) -> Tensor:
    """Input-dependent state-space recurrence over stacked token sequences.

    Shapes: u, delta [K,B,L,C]; a [K,C,S]; b_seq, c_seq [K,B,L,S];
    d_skip [K,C]. Per token: h = exp(delta*a) h + (delta*u) b,
    y = <c, h> + d*u, with a zero initial state per sequence.
    One tape node; the reverse recurrence is written out by hand.
    """
    kdirs, batch, length, chan = u.shape
    sdim = a.shape[-1]
    if a.shape != (kdirs, chan, sdim):
        raise ShapeError(f"scan state matrix {a.shape} incompatible with input {u.shape}")
    if b_seq.shape != (kdirs, batch, length, sdim) or c_seq.shape != b_seq.shape:
        raise ShapeError("scan B/C sequences must be [K,B,L,S]")
    if d_skip.shape != (kdirs, chan):
        raise ShapeError(f"scan skip term must be [K,C], got {d_skip.shape}")
    counting.add("scan", scan_macs(length, chan, sdim, kdirs, batch))

    ud, dd, ad, bd, cd, skip = (t.data for t in (u, delta, a, b_seq, c_seq, d_skip))
    h = np.zeros((kdirs, batch, chan, sdim), dtype=ud.dtype)
    hs = np.empty((length, kdirs, batch, chan, sdim), dtype=ud.dtype)
    decays = np.empty_like(hs)
    y = np.empty_like(ud)
    for t in range(length):
        dt = dd[:, :, t]                                   # [K,B,C]
        decay = np.exp(dt[..., None] * ad[:, None])        # [K,B,C,S]
        drive = (dt * ud[:, :, t])[..., None] * bd[:, :, t][:, :, None, :]
        h = decay * h + drive
        hs[t] = h
        decays[t] = decay
        y[:, :, t] = (h * cd[:, :, t][:, :, None, :]).sum(-1) + skip[:, None] * ud[:, :, t]

    def vjp(grad):
        lam = np.zeros((kdirs, batch, chan, sdim), dtype=ud.dtype)
        gu = np.empty_like(ud)
        gdelta = np.empty_like(dd)
        ga = np.zeros_like(ad)
        gb = np.empty_like(bd)
        gc = np.empty_like(cd)
        gskip = (grad * ud).sum(axis=(1, 2))
        for t in range(length - 1, -1, -1):
            gy = grad[:, :, t]                             # [K,B,C]
            ht = hs[t]
            hprev = hs[t - 1] if t else np.zeros_like(ht)
            ct = cd[:, :, t][:, :, None, :]
            bt = bd[:, :, t][:, :, None, :]
            dt = dd[:, :, t]
            gc[:, :, t] = (gy[..., None] * ht).sum(axis=2)
            lam = lam + gy[..., None] * ct
            decay = decays[t]
            ga += (lam * hprev * decay * dt[..., None]).sum(axis=1)
            gdelta[:, :, t] = (lam * hprev * decay * ad[:, None]).sum(-1) \
                + (lam * bt).sum(-1) * ud[:, :, t]
            gu[:, :, t] = (lam * bt).sum(-1) * dt + gy * skip[:, None]
            gb[:, :, t] = (lam * (dt * ud[:, :, t])[..., None]).sum(axis=2)
            lam = lam * decay
        return gu, gdelta, ga, gb, gc, gskip

    return _make(y, (u, delta, a, b_seq, c_seq, d_skip), vjp)


def scan_macs(length: int, chan: int, sdim: int, kdirs: int = 4, batch: int = 1) -> int:
    """Counting convention for one selective_scan call."""
    return kdirs * batch * length * (5 * chan * sdim + chan)


class SS2D(Module):
    """Four-direction selective scan over image tokens.

    Row-major and column-major orderings, each forward and backward; the
    directional outputs are un-permuted, summed, and passed through a
    zero-initialized 1x1 projection. A = -exp(A_log) keeps the recurrence
    stable and softplus keeps step sizes positive.
    """

    def __init__(self, rng, channels: int, d_state: int = 8, *,
                 zero_out: bool = True, dtype=np.float32):
        self.d_state = d_state
        self.dt_rank = max(1, channels // 16)
        k = 4
        self.x_proj = param(rng, (k, self.dt_rank + 2 * d_state, channels), dtype,
                            scale=channels**-0.5)
        self.dt_proj = param(rng, (k, channels, self.dt_rank), dtype,
                             scale=self.dt_rank**-0.5)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=(k, channels)))
        self.dt_bias = Tensor((dt + np.log(-np.expm1(-dt))).astype(dtype), requires_grad=True)
        a_init = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (k, channels, 1))
        self.a_log = Tensor(np.log(a_init).astype(dtype), requires_grad=True)
        self.skip = ones_param((k, channels), dtype)
        self.out_conv = Conv2d(rng, channels, channels, 1, zero_init=zero_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        length = h * w
        row = transpose_last(reshape(x, (b, c, length)))                       # [B,L,C]
        col = transpose_last(reshape(x.transpose((0, 1, 3, 2)), (b, c, length)))
        seqs = stack([row, row.flip(1), col, col.flip(1)], axis=0)             # [4,B,L,C]
        proj = matmul(seqs, reshape(transpose_last(self.x_proj), (4, 1, c, -1)))
        dt_low = proj[:, :, :, :self.dt_rank]
        b_seq = proj[:, :, :, self.dt_rank:self.dt_rank + self.d_state]
        c_seq = proj[:, :, :, self.dt_rank + self.d_state:]
        delta = softplus(matmul(dt_low, reshape(transpose_last(self.dt_proj), (4, 1, self.dt_rank, c)))
                         + reshape(self.dt_bias, (4, 1, 1, c)))
        a = -self.a_log.exp()
        ys = selective_scan(seqs, delta, a, b_seq, c_seq, self.skip)

        def to_image(seq: Tensor, transposed: bool) -> Tensor:
            img = reshape(transpose_last(seq), (b, c, w, h) if transposed else (b, c, h, w))
            return img.transpose((0, 1, 3, 2)) if transposed else img

        merged = (to_image(ys[0], False) + to_image(ys[1].flip(1), False)
                  + to_image(ys[2], True) + to_image(ys[3].flip(1), True))
        return self.out_conv(merged)


class SpatialAttention(Module):
    """CBAM-style spatial gate (ablation stand-in for the scan mixer)."""

    def __init__(self, rng, channels: int, *, zero_out: bool = True, dtype=np.float32):
        self.gate_conv = Conv2d(rng, 2, 1, 7, padding=3, dtype=dtype)
        self.out_conv = Conv2d(rng, channels, channels, 1, zero_init=zero_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        avg = x.mean(axis=1, keepdims=True)
        peak = x.max(axis=1, keepdims=True)
        gate = sigmoid(self.gate_conv(concat([avg, peak], axis=1)))
        return self.out_conv(x * gate)


class ResidualBlock(Module):
    """Pre-norm residual pairing of a mixer and an LEB."""

    def __init__(self, rng, channels: int, mixer: Module, dtype=np.float32):
        self.norm1 = LayerNorm(channels, dtype)
        self.mixer = mixer
        self.norm2 = LayerNorm(channels, dtype)
        self.leb = LEB(rng, channels, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.mixer(self.norm1(x))
        return x + self.leb(self.norm2(x))


def make_block(rng, channels: int, kind: str, *, meta_dim: int = 16, d_state: int = 8,
               use_metadata: bool = True, dtype=np.float32) -> ResidualBlock:
    if kind == "lsb":
        mixer = MeSA(rng, channels, meta_dim, use_metadata=use_metadata, dtype=dtype)
    elif kind == "ssb":
        mixer = SS2D(rng, channels, d_state, dtype=dtype)
    elif kind == "sa":
        mixer = SpatialAttention(rng, channels, dtype=dtype)
    else:
        raise ShapeError(f"unknown block kind {kind!r}")
    return ResidualBlock(rng, channels, mixer, dtype)


class PDB(Module):
    """Pre-denoising stage: lift, residual LEBs, project back."""

    def __init__(self, rng, in_channels: int, width: int = 32, depth: int = 2, dtype=np.float32):
        self.lift = Conv2d(rng, in_channels, width, 3, padding=1, dtype=dtype)
        self.lebs = [LEB(rng, width, dtype=dtype) for _ in range(depth)]
        self.proj = Conv2d(rng, width, in_channels, 3, padding=1, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        f = self.lift(x)
        for leb in self.lebs:
            f = f + leb(f)
        return self.proj(f)
