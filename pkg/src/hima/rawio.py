"""CFA packing, 16-bit image file I/O, and the synthetic low-light corpus.

Bayer mosaics pack RGGB 2x2 cells into 4 channels at half resolution;
X-Trans mosaics pack 3x3 cell positions into 9 channels at a third of the
resolution (the color layout inside the 6x6 tile is treated as content).
Everything here is plain numpy; nothing is differentiated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

BAYER = "bayer"
XTRANS = "xtrans"

CFA_CHANNELS = {BAYER: 4, XTRANS: 9}
CFA_FACTOR = {BAYER: 2, XTRANS: 3}

DEFAULT_BLACK = 512
DEFAULT_WHITE = 16383

# Color index (0=R, 1=G, 2=B) per mosaic position.
_BAYER_COLORS = np.array([[0, 1], [1, 2]])
_XTRANS_COLORS = np.array([
    [1, 2, 0, 1, 0, 2],
    [0, 1, 1, 2, 1, 1],
    [2, 1, 1, 0, 1, 1],
    [1, 0, 2, 1, 2, 0],
    [2, 1, 1, 0, 1, 1],
    [0, 1, 1, 2, 1, 1],
])


@dataclass
class PackedRaw:
    """CFA-packed mosaic in [0,1] plus the metadata needed to undo it."""

    data: np.ndarray
    cfa: str
    black_level: int = DEFAULT_BLACK
    white_level: int = DEFAULT_WHITE
    ratio: float = 1.0

    def __post_init__(self):
        if self.cfa not in CFA_CHANNELS:
            raise DataError(f"unknown CFA kind {self.cfa!r}")
        if self.data.ndim != 3 or self.data.shape[0] != CFA_CHANNELS[self.cfa]:
            raise ShapeError(
                f"{self.cfa} packed data must have {CFA_CHANNELS[self.cfa]} channels, got {self.data.shape}"
            )


@dataclass
class SamplePair:
    noisy: PackedRaw
    gt_raw: PackedRaw
    gt_srgb: np.ndarray  # [3, H, W] in [0,1]


# -- packing -------------------------------------------------------------------


def pack_bayer(mosaic: np.ndarray) -> np.ndarray:
    """RGGB 2x2 cells -> channels [R, G1, G2, B] at half resolution."""
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise ShapeError(f"bayer mosaic extents must be even, got {h}x{w}")
    return np.stack([
        mosaic[0::2, 0::2],
        mosaic[0::2, 1::2],
        mosaic[1::2, 0::2],
        mosaic[1::2, 1::2],
    ])


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    c, h, w = packed.shape
    if c != 4:
        raise ShapeError(f"bayer pack must have 4 channels, got {c}")
    mosaic = np.empty((h * 2, w * 2), dtype=packed.dtype)
    mosaic[0::2, 0::2] = packed[0]
    mosaic[0::2, 1::2] = packed[1]
    mosaic[1::2, 0::2] = packed[2]
    mosaic[1::2, 1::2] = packed[3]
    return mosaic


def pack_xtrans(mosaic: np.ndarray) -> np.ndarray:
    """3x3 cell positions -> 9 channels; extents must be multiples of 6."""
    h, w = mosaic.shape
    if h % 6 or w % 6:
        raise ShapeError(f"x-trans mosaic extents must be multiples of 6, got {h}x{w}")
    return np.stack([mosaic[k // 3::3, k % 3::3] for k in range(9)])


def unpack_xtrans(packed: np.ndarray) -> np.ndarray:
    c, h, w = packed.shape
    if c != 9:
        raise ShapeError(f"x-trans pack must have 9 channels, got {c}")
    mosaic = np.empty((h * 3, w * 3), dtype=packed.dtype)
    for k in range(9):
        mosaic[k // 3::3, k % 3::3] = packed[k]
    return mosaic


def pack(mosaic: np.ndarray, cfa: str) -> np.ndarray:
    return pack_bayer(mosaic) if cfa == BAYER else pack_xtrans(mosaic)


def unpack(packed: np.ndarray, cfa: str) -> np.ndarray:
    return unpack_bayer(packed) if cfa == BAYER else unpack_xtrans(packed)


# -- portable bitmap I/O ---------------------------------------------------------


def _read_pnm_header(raw: bytes, path, magic: bytes) -> tuple[int, int, int, int]:
    if not raw.startswith(magic):
        raise DataError(f"{path}: expected {magic.decode()} file")
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(raw):
            raise DataError(f"{path}: truncated header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.find(b"\n", pos)
            if pos < 0:
                raise DataError(f"{path}: truncated header comment")
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        try:
            tokens.append(int(raw[pos:end]))
        except ValueError as exc:
            raise DataError(f"{path}: bad header token {raw[pos:end]!r}") from exc
        pos = end
    return tokens[0], tokens[1], tokens[2], pos + 1


def read_pgm16(path: Path | str) -> np.ndarray:
    """Binary PGM (P5, maxval 65535, big-endian samples) -> uint16 [H,W]."""
    raw = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(raw, path, b"P5")
    if maxval != 65535:
        raise DataError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    expected = width * height * 2
    payload = raw[offset:offset + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=">u2").reshape(height, width).astype(np.uint16)


def write_pgm16(path: Path | str, image: np.ndarray) -> None:
    if image.ndim != 2:
        raise ShapeError(f"PGM image must be 2-d, got {image.shape}")
    h, w = image.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + image.astype(">u2").tobytes())


def read_ppm8(path: Path | str) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> uint8 [3,H,W]."""
    raw = Path(path).read_bytes()
    width, height, maxval, offset = _read_pnm_header(raw, path, b"P6")
    if maxval != 255:
        raise DataError(f"{path}: expected 8-bit PPM (maxval 255), got {maxval}")
    expected = width * height * 3
    payload = raw[offset:offset + expected]
    if len(payload) != expected:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).transpose(2, 0, 1).copy()


def write_ppm8(path: Path | str, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"PPM image must be [3,H,W], got {image.shape}")
    interleaved = image.transpose(1, 2, 0).astype(np.uint8)
    header = f"P6\n{image.shape[2]} {image.shape[1]}\n255\n".encode()
    Path(path).write_bytes(header + interleaved.tobytes())


# -- deterministic ISP -----------------------------------------------------------

WB_GAINS = np.array([1.9, 1.0, 1.6])
GAMMA = 1.0 / 2.2


def _color_masks(h: int, w: int, cfa: str) -> np.ndarray:
    layout = _BAYER_COLORS if cfa == BAYER else _XTRANS_COLORS
    tile = layout.shape[0]
    reps = (h + tile - 1) // tile, (w + tile - 1) // tile
    colors = np.tile(layout, reps)[:h, :w]
    return np.stack([(colors == c).astype(np.float64) for c in range(3)])


def _box_filter(image: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    padded = np.pad(image, pad, mode="reflect")
    out = np.zeros_like(image)
    for i in range(k):
        for j in range(k):
            out += padded[i:i + image.shape[0], j:j + image.shape[1]]
    return out


def simple_isp(mosaic: np.ndarray, cfa: str) -> np.ndarray:
    """Fixed white balance, normalized box-filter fill, gamma 1/2.2."""
    h, w = mosaic.shape
    masks = _color_masks(h, w, cfa)
    k = 3 if cfa == BAYER else 5
    planes = []
    for c in range(3):
        num = _box_filter(mosaic * masks[c], k)
        den = _box_filter(masks[c], k)
        planes.append(num / den)
    rgb = np.stack(planes) * WB_GAINS[:, None, None]
    return np.clip(rgb, 0.0, 1.0) ** GAMMA


# -- synthetic scenes ------------------------------------------------------------


@dataclass
class NoiseModel:
    """Gaussian approximation with signal-proportional (shot) variance."""

    shot: float = 8e-4
    read: float = 1.5e-3

    def sigma(self, signal: np.ndarray) -> np.ndarray:
        return np.sqrt(self.shot * np.clip(signal, 0.0, None) + self.read**2)


def _scene_rgb(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    rgb = np.zeros((3, h, w))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    for c in range(3):
        rgb[c] += rng.uniform(0.2, 0.8) * (ramp - ramp.min()) / (np.ptp(ramp) + 1e-9)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, 1, 2)
        radius = rng.uniform(0.08, 0.3)
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        disk = 1.0 / (1.0 + np.exp((dist - radius) / 0.01))
        color = rng.uniform(0.1, 0.9, 3)
        rgb += color[:, None, None] * disk * rng.uniform(0.3, 0.8)
    period = int(rng.integers(4, 17))
    checker = ((yy * h // period).astype(int) + (xx * w // period).astype(int)) % 2
    rgb += rng.uniform(0.05, 0.25) * checker * rng.uniform(0.2, 1.0, 3)[:, None, None]
    rgb /= rgb.max() + 1e-9
    # night scenes are unevenly lit: a smooth wide-blob illumination field
    # leaves bright pockets next to deep shadow
    field = np.zeros((h, w))
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, 1, 2)
        sigma = rng.uniform(0.15, 0.4)
        field += rng.uniform(0.4, 1.0) * np.exp(
            -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    field /= field.max() + 1e-9
    floor = rng.uniform(0.04, 0.12)
    rgb *= floor + (1.0 - floor) * field
    return 0.02 + 0.93 * np.clip(rgb, 0.0, 1.0)


def _mosaic_from_rgb(rgb: np.ndarray, cfa: str) -> np.ndarray:
    # Sensor sees the scene through the CFA and before white balance.
    _, h, w = rgb.shape
    masks = _color_masks(h, w, cfa)
    raw = np.zeros((h, w))
    for c in range(3):
        raw += masks[c] * rgb[c] / WB_GAINS[c]
    return raw


def synth_pair(seed: int, size: tuple[int, int], cfa: str = BAYER,
               ratio: float = 100.0, noise: NoiseModel | None = None) -> SamplePair:
    """Deterministic ground-truth/noisy pair standing in for a capture.

    The noisy mosaic is clip(gt/ratio + n, 0, 1) with n drawn from the
    heteroscedastic model; gt_srgb is the fixed ISP applied to the clean
    mosaic.
    """
    h, w = size
    tile = 2 if cfa == BAYER else 6
    if h % tile or w % tile:
        raise ShapeError(f"size {h}x{w} incompatible with {cfa} packing")
    noise = noise or NoiseModel()
    rng = np.random.default_rng(seed)
    rgb = _scene_rgb(rng, h, w)
    mosaic = _mosaic_from_rgb(rgb, cfa)
    gt_srgb = simple_isp(mosaic, cfa)
    dark = mosaic / ratio
    noisy = dark if noise.shot == 0 and noise.read == 0 else np.clip(
        dark + rng.standard_normal((h, w)) * noise.sigma(dark), 0.0, 1.0)
    meta = dict(cfa=cfa, ratio=float(ratio))
    return SamplePair(
        noisy=PackedRaw(pack(noisy, cfa), **meta),
        gt_raw=PackedRaw(pack(mosaic, cfa), **meta),
        gt_srgb=gt_srgb,
    )


# -- dataset directory layout ----------------------------------------------------


def save_pair(root: Path | str, split: str, sample_id: str, pair: SamplePair,
              seed: int | None = None) -> None:
    directory = Path(root) / split
    directory.mkdir(parents=True, exist_ok=True)
    black, white = pair.noisy.black_level, pair.noisy.white_level
    scale = white - black

    def to_dn(values01: np.ndarray) -> np.ndarray:
        return np.round(black + values01 * scale).astype(np.uint16)

    write_pgm16(directory / f"{sample_id}_noisy.pgm", to_dn(unpack(pair.noisy.data, pair.noisy.cfa)))
    write_pgm16(directory / f"{sample_id}_gt.pgm", to_dn(unpack(pair.gt_raw.data, pair.gt_raw.cfa)))
    write_ppm8(directory / f"{sample_id}_gt.ppm", np.round(pair.gt_srgb * 255).astype(np.uint8))
    meta = {
        "cfa": pair.noisy.cfa,
        "ratio": pair.noisy.ratio,
        "black_level": black,
        "white_level": white,
        "seed": seed,
    }
    (directory / f"{sample_id}_meta.json").write_text(json.dumps(meta, indent=1))


def load_pair(root: Path | str, split: str, sample_id: str) -> SamplePair:
    directory = Path(root) / split
    meta_path = directory / f"{sample_id}_meta.json"
    if not meta_path.exists():
        raise DataError(f"missing metadata {meta_path}")
    meta = json.loads(meta_path.read_text())
    cfa = meta["cfa"]
    black, white = int(meta["black_level"]), int(meta["white_level"])
    scale = white - black

    def normalize(dn: np.ndarray) -> np.ndarray:
        return np.clip((dn.astype(np.float64) - black) / scale, 0.0, 1.0)

    fields = dict(cfa=cfa, black_level=black, white_level=white, ratio=float(meta["ratio"]))
    noisy = PackedRaw(pack(normalize(read_pgm16(directory / f"{sample_id}_noisy.pgm")), cfa), **fields)
    gt_raw = PackedRaw(pack(normalize(read_pgm16(directory / f"{sample_id}_gt.pgm")), cfa), **fields)
    gt_srgb = read_ppm8(directory / f"{sample_id}_gt.ppm").astype(np.float64) / 255.0
    return SamplePair(noisy=noisy, gt_raw=gt_raw, gt_srgb=gt_srgb)


def list_ids(root: Path | str, split: str) -> list[str]:
    directory = Path(root) / split
    if not directory.is_dir():
        raise DataError(f"missing dataset split directory {directory}")
    return sorted(p.name[:-len("_meta.json")] for p in directory.glob("*_meta.json"))


def load_split(root: Path | str, split: str) -> list[tuple[str, SamplePair]]:
    ids = list_ids(root, split)
    if not ids:
        raise DataError(f"no samples under {Path(root) / split}")
    return [(sid, load_pair(root, split, sid)) for sid in ids]
