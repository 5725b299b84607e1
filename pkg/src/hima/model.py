"""The two-stage enhancement model.

Stage one: local distribution adjustment, pre-denoising, and a spatial
high-frequency extract of the denoised output; the three results form a
prior pyramid. Stage two: a U-shaped net with channel-attention blocks at
the shallow levels and selective-scan blocks at the deep ones, skip
connections fused with the priors through frequency-domain modulation, and
a pixel-shuffle head producing sRGB. The only stage-one to stage-two
channels are the priors; no decoder latent feeds back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import PDB, ResidualBlock, make_block
from .errors import ConfigError, DataError, ShapeError
from .freq import fe, hf_component, ife_parts
from .loda import Loda
from .module import Conv2d, Module
from .ops import avg_pool2, pixel_shuffle
from .rawio import BAYER, CFA_CHANNELS, CFA_FACTOR
from .serialize import load_arrays, save_arrays
from .tensor import Tensor, concat, no_grad

PRIOR_NAMES = ("aligned", "rhat", "hf")
BLOCK_KINDS = ("lsb", "ssb", "sa")


@dataclass
class ModelConfig:
    """Single source of architectural truth; JSON-roundtrippable."""

    cfa: str = BAYER
    levels: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_level: int = 2
    block_types: tuple[str, ...] = ("lsb", "lsb", "ssb", "ssb")
    loda_patch_sizes: tuple[int, ...] = (8, 16, 32)
    loda_epsilon: float = 1e-6
    fe_threshold: float = 0.01
    min_low_halfwidth: int = 0
    pdb_width: int = 32
    pdb_depth: int = 2
    meta_dim: int = 16
    d_state: int = 8
    alpha: float = 1.0
    beta: float = 1.0
    use_metadata: bool = True
    use_stage1: bool = True
    use_mpf: bool = True
    priors: tuple[str, ...] = PRIOR_NAMES
    dtype: str = "real32"

    @property
    def in_channels(self) -> int:
        return CFA_CHANNELS[self.cfa]

    @property
    def upscale(self) -> int:
        return CFA_FACTOR[self.cfa]

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "real32" else np.float64

    def validate(self) -> "ModelConfig":
        if self.cfa not in CFA_CHANNELS:
            raise ConfigError(f"cfa: unknown kind {self.cfa!r}")
        if self.levels < 2:
            raise ConfigError(f"levels: need at least 2, got {self.levels}")
        if len(self.widths) != self.levels:
            raise ConfigError(f"widths: expected {self.levels} entries, got {len(self.widths)}")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"widths: must strictly increase with depth, got {self.widths}")
        if len(self.block_types) != self.levels:
            raise ConfigError(f"block_types: expected {self.levels} entries")
        for kind in self.block_types:
            if kind not in BLOCK_KINDS:
                raise ConfigError(f"block_types: unknown kind {kind!r}")
        if self.blocks_per_level < 1:
            raise ConfigError(f"blocks_per_level: must be >= 1, got {self.blocks_per_level}")
        if not self.loda_patch_sizes or any(p <= 0 for p in self.loda_patch_sizes):
            raise ConfigError(f"loda_patch_sizes: need positive entries, got {self.loda_patch_sizes}")
        if not 0.0 <= self.fe_threshold <= 0.5:
            raise ConfigError(f"fe_threshold: must lie in [0, 0.5], got {self.fe_threshold}")
        for name in self.priors:
            if name not in PRIOR_NAMES:
                raise ConfigError(f"priors: unknown prior {name!r}")
        if self.priors and not self.use_stage1:
            raise ConfigError("priors: stage one must be enabled to supply priors")
        if self.dtype not in ("real32", "real64"):
            raise ConfigError(f"dtype: must be real32 or real64, got {self.dtype}")
        return self

    def to_json(self) -> dict:
        return {
            "cfa": self.cfa, "levels": self.levels, "widths": list(self.widths),
            "blocks_per_level": self.blocks_per_level, "block_types": list(self.block_types),
            "loda_patch_sizes": list(self.loda_patch_sizes), "loda_epsilon": self.loda_epsilon,
            "fe_threshold": self.fe_threshold, "min_low_halfwidth": self.min_low_halfwidth,
            "pdb_width": self.pdb_width, "pdb_depth": self.pdb_depth,
            "meta_dim": self.meta_dim, "d_state": self.d_state,
            "alpha": self.alpha, "beta": self.beta,
            "use_metadata": self.use_metadata, "use_stage1": self.use_stage1,
            "use_mpf": self.use_mpf, "priors": list(self.priors), "dtype": self.dtype,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ModelConfig":
        kwargs = dict(payload)
        for key in ("widths", "block_types", "loda_patch_sizes", "priors"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**kwargs).validate()

    def with_overrides(self, overrides: dict[str, str]) -> "ModelConfig":
        payload = self.to_json()
        for key, raw in overrides.items():
            if key not in payload:
                raise ConfigError(f"override targets unknown field {key!r}")
            payload[key] = json.loads(raw) if not isinstance(payload[key], str) else raw
        return ModelConfig.from_json(payload)


@dataclass
class PriorPyramid:
    """Per-level channel-lifted priors: aligned input, denoised raw, its HF part."""

    levels: list[dict[str, Tensor]] = field(default_factory=list)

    def at(self, level: int) -> dict[str, Tensor]:
        return self.levels[level]


class MPF(Module):
    """Multi-prior skip fusion.

    The aligned prior shifts the decoder feature; encoder and shifted
    decoder features are split in frequency; only the high-frequency real
    parts (plus the spatial HF prior) are modulated by concat+conv while the
    encoder's imaginary HF and low window pass through unchanged; the
    reconstruction is fused with the denoised-raw prior and added back to
    the decoder feature through a zero-initialized projection.
    """

    def __init__(self, rng, channels: int, priors: tuple[str, ...],
                 fe_threshold: float, min_low_halfwidth: int, dtype=np.float32):
        self.priors = tuple(priors)
        self.fe_threshold = fe_threshold
        self.min_low_halfwidth = min_low_halfwidth
        self.aligned_conv = (Conv2d(rng, channels, channels, 1, dtype=dtype)
                             if "aligned" in priors else None)
        mod_in = 2 * channels
        self.mod_conv = Conv2d(rng, mod_in, channels, 1, dtype=dtype)
        self.recon_conv = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.rhat_conv = Conv2d(rng, channels, channels, 1, dtype=dtype) if "rhat" in priors else None
        self.hf_conv = Conv2d(rng, channels, channels, 1, dtype=dtype) if "hf" in priors else None
        self.out_conv = Conv2d(rng, channels, channels, 1, zero_init=True, dtype=dtype)

    def __call__(self, x_enc: Tensor, y_dec: Tensor, priors: dict[str, Tensor]) -> Tensor:
        if x_enc.shape != y_dec.shape:
            raise ShapeError(f"skip features disagree: {x_enc.shape} vs {y_dec.shape}")
        y_shift = y_dec + self.aligned_conv(priors["aligned"]) if self.aligned_conv else y_dec
        split_x = fe(x_enc, self.fe_threshold, self.min_low_halfwidth)
        split_y = fe(y_shift, self.fe_threshold, self.min_low_halfwidth)
        hf_mod = self.mod_conv(concat([split_x.hf_real, split_y.hf_real], axis=1))
        recon = ife_parts(hf_mod, split_x.hf_imag, split_x.lf)
        fused = self.recon_conv(recon)
        if self.rhat_conv:
            fused = fused + self.rhat_conv(priors["rhat"])
        if self.hf_conv:
            fused = fused + self.hf_conv(priors["hf"])
        return self.out_conv(fused) + y_dec


class ConvFusion(Module):
    """Plain concat+conv skip fusion (the no-priors baseline)."""

    def __init__(self, rng, channels: int, dtype=np.float32):
        self.fuse = Conv2d(rng, 2 * channels, channels, 1, dtype=dtype)

    def __call__(self, x_enc: Tensor, y_dec: Tensor, priors: dict[str, Tensor]) -> Tensor:
        return self.fuse(concat([x_enc, y_dec], axis=1))


class HimaNet(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        cin = config.in_channels
        widths = config.widths
        if config.use_stage1:
            self.loda = Loda(rng, cin, config.loda_patch_sizes, config.loda_epsilon, dtype=dtype)
            self.pdb = PDB(rng, cin, config.pdb_width, config.pdb_depth, dtype=dtype)
            self.prior_lifts = {
                name: [Conv2d(rng, cin, widths[lv], 1, dtype=dtype) for lv in range(config.levels)]
                for name in config.priors
            }
        else:
            self.loda = None
            self.pdb = None
            self.prior_lifts = {}
        self.shallow = Conv2d(rng, cin, widths[0], 3, padding=1, dtype=dtype)
        self.encoder = [
            [self._block(rng, lv) for _ in range(config.blocks_per_level)]
            for lv in range(config.levels)
        ]
        self.downs = [
            Conv2d(rng, widths[lv], widths[lv + 1], 3, stride=2, padding=1, dtype=dtype)
            for lv in range(config.levels - 1)
        ]
        self.ups = [
            Conv2d(rng, widths[lv + 1], 4 * widths[lv], 1, dtype=dtype)
            for lv in range(config.levels - 1)
        ]
        if config.use_mpf:
            self.skips = [
                MPF(rng, widths[lv], config.priors, config.fe_threshold,
                    config.min_low_halfwidth, dtype=dtype)
                for lv in range(config.levels - 1)
            ]
        else:
            self.skips = [ConvFusion(rng, widths[lv], dtype=dtype)
                          for lv in range(config.levels - 1)]
        self.decoder = [
            [self._block(rng, lv) for _ in range(config.blocks_per_level)]
            for lv in range(config.levels - 1)
        ]
        self.head = Conv2d(rng, widths[0], 3 * config.upscale**2, 3, padding=1, dtype=dtype)

    def _block(self, rng, level: int) -> ResidualBlock:
        cfg = self.config
        return make_block(rng, cfg.widths[level], cfg.block_types[level],
                          meta_dim=cfg.meta_dim, d_state=cfg.d_state,
                          use_metadata=cfg.use_metadata, dtype=cfg.np_dtype)

    # Dict attributes are invisible to Module._walk; surface them.
    def named_parameters(self, prefix: str = ""):
        from .module import _walk

        for name, value in vars(self).items():
            if name == "prior_lifts":
                for prior_name, lifts in value.items():
                    yield from _walk(f"{prefix}prior_lifts.{prior_name}", lifts)
            else:
                yield from _walk(f"{prefix}{name}", value)

    # -- forward ---------------------------------------------------------------

    def check_input(self, x: Tensor) -> None:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"expected packed input with {cfg.in_channels} channels for {cfg.cfa}, got {x.shape}"
            )
        divisor = 2 ** (cfg.levels - 1)
        if x.shape[2] % divisor or x.shape[3] % divisor:
            raise ShapeError(
                f"packed extents {x.shape[2]}x{x.shape[3]} must be divisible by {divisor}"
            )

    def downsample_priors(self, sources: dict[str, Tensor]) -> PriorPyramid:
        """Strided average pooling per level, then a 1x1 lift to that level's width."""
        cfg = self.config
        pyramid = PriorPyramid()
        scaled = {name: sources[name] for name in cfg.priors}
        for lv in range(cfg.levels):
            if lv:
                scaled = {name: avg_pool2(t) for name, t in scaled.items()}
            pyramid.levels.append(
                {name: self.prior_lifts[name][lv](t) for name, t in scaled.items()}
            )
        return pyramid

    def stage_one(self, x: Tensor) -> tuple[Tensor, Tensor, PriorPyramid]:
        cfg = self.config
        aligned = self.loda(x)
        rhat = self.pdb(aligned)
        hf = hf_component(rhat, cfg.fe_threshold, cfg.min_low_halfwidth)
        pyramid = self.downsample_priors({"aligned": aligned, "rhat": rhat, "hf": hf})
        return aligned, rhat, pyramid

    def __call__(self, x: Tensor) -> tuple[Tensor | None, Tensor]:
        self.check_input(x)
        cfg = self.config
        rhat = None
        pyramid = PriorPyramid(levels=[{} for _ in range(cfg.levels)])
        if cfg.use_stage1:
            _, rhat, pyramid = self.stage_one(x)
        feat = self.shallow(x)
        skips: list[Tensor] = []
        for lv in range(cfg.levels):
            for block in self.encoder[lv]:
                feat = block(feat)
            if lv < cfg.levels - 1:
                skips.append(feat)
                feat = self.downs[lv](feat)
        for lv in range(cfg.levels - 2, -1, -1):
            feat = pixel_shuffle(self.ups[lv](feat), 2)
            feat = self.skips[lv](skips[lv], feat, pyramid.at(lv))
            for block in self.decoder[lv]:
                feat = block(feat)
        srgb = pixel_shuffle(self.head(feat), cfg.upscale)
        return rhat, srgb

    def infer(self, packed: np.ndarray) -> tuple[np.ndarray | None, np.ndarray]:
        """Tape-free forward on a packed [C,h,w] array already ratio-amplified."""
        with no_grad():
            rhat, srgb = self(Tensor(packed[None].astype(self.config.np_dtype)))
        return (None if rhat is None else rhat.data[0]), srgb.data[0]


def build_model(config: ModelConfig, seed: int = 0) -> HimaNet:
    return HimaNet(config, seed)


# -- weights ---------------------------------------------------------------------


def save_weights(model: HimaNet, directory: Path | str) -> None:
    """Write model.blob + model.manifest.json (real32 wire format)."""
    directory = Path(directory)
    arrays = {name: p.data for name, p in model.named_parameters()}
    save_arrays(directory / "model", arrays, dtype="real32",
                extra={"config": model.config.to_json()})


def load_weights(directory: Path | str) -> HimaNet:
    directory = Path(directory)
    arrays, extra = load_arrays(directory / "model")
    if "config" not in extra:
        raise DataError(f"weights manifest under {directory} lacks the model config")
    config = ModelConfig.from_json(extra["config"])
    model = build_model(config, seed=0)
    named = dict(model.named_parameters())
    if set(named) != set(arrays):
        missing = sorted(set(named) ^ set(arrays))
        raise DataError(f"weight manifest does not match the architecture: {missing[:5]}")
    for name, p in named.items():
        stored = arrays[name]
        if tuple(stored.shape) != tuple(p.data.shape):
            raise DataError(f"tensor {name} has shape {stored.shape}, expected {p.data.shape}")
        p.data = stored.astype(config.np_dtype)
    return model
