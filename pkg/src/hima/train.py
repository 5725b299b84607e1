"""Dual-domain L1 loss, Adam, cosine schedule, and the training loop.

Batch size is 1; the learning rate decays from lr_start to lr_end over the
configured step budget by cosine annealing; flips and (square) transposes
augment both domains consistently. Everything is deterministic for a given
seed, and checkpoints capture enough state (weights, moments, RNG) for a
resumed run to reproduce the uninterrupted loss trajectory exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError
from .model import HimaNet, ModelConfig, build_model, save_weights
from .rawio import SamplePair
from .serialize import load_arrays, save_arrays
from .tensor import Tensor


def l1_dual_loss(pred_raw: Tensor | None, gt_raw: Tensor | None,
                 pred_srgb: Tensor, gt_srgb: Tensor,
                 alpha: float = 1.0, beta: float = 1.0) -> Tensor:
    """alpha * mean|raw error| + beta * mean|sRGB error|."""
    if pred_srgb.shape != gt_srgb.shape:
        raise ShapeError(f"srgb shapes differ: {pred_srgb.shape} vs {gt_srgb.shape}")
    loss = beta * (pred_srgb - gt_srgb).abs().mean()
    if pred_raw is not None and gt_raw is not None and alpha != 0.0:
        if pred_raw.shape != gt_raw.shape:
            raise ShapeError(f"raw shapes differ: {pred_raw.shape} vs {gt_raw.shape}")
        loss = alpha * (pred_raw - gt_raw).abs().mean() + loss
    return loss


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    if total_steps <= 0:
        return lr_end
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_end + (lr_start - lr_end) * 0.5 * (1.0 + np.cos(np.pi * frac))


class Adam:
    def __init__(self, params: Sequence[tuple[str, Tensor]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named}

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.named:
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None


@dataclass
class TrainConfig:
    steps: int = 2000
    lr_start: float = 2e-4
    lr_end: float = 2e-5
    seed: int = 0
    augment: bool = True
    log_every: int = 25
    checkpoint_every: int = 0
    out_dir: Path | None = None


@dataclass
class TrainState:
    step: int = 0
    lr: float = 0.0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)
    # history rows: (step, lr, loss_raw, loss_srgb)
    dataset_size: int = 0
    rng_state: dict | None = None
    pending: list[int] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [raw + srgb for _, _, raw, srgb in self.history]

    @property
    def epoch(self) -> int:
        return self.step // self.dataset_size if self.dataset_size else 0


def _augment(rng: np.random.Generator, noisy: np.ndarray, gt: np.ndarray,
             srgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if rng.random() < 0.5:
        noisy, gt, srgb = (np.flip(a, axis=-1) for a in (noisy, gt, srgb))
    if rng.random() < 0.5:
        noisy, gt, srgb = (np.flip(a, axis=-2) for a in (noisy, gt, srgb))
    if noisy.shape[-1] == noisy.shape[-2] and rng.random() < 0.5:
        noisy, gt, srgb = (a.swapaxes(-1, -2) for a in (noisy, gt, srgb))
    return np.ascontiguousarray(noisy), np.ascontiguousarray(gt), np.ascontiguousarray(srgb)


def _to_input(pair: SamplePair, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    amplified = np.clip(pair.noisy.data * pair.noisy.ratio, 0.0, 1.0)
    return (amplified.astype(dtype), pair.gt_raw.data.astype(dtype),
            pair.gt_srgb.astype(dtype))


def train(model: HimaNet, pairs: Sequence[SamplePair], cfg: TrainConfig,
          optimizer: Adam | None = None, state: TrainState | None = None,
          stop_check: Callable[[TrainState], bool] | None = None) -> TrainState:
    """Optimize the model in place; returns (possibly resumed) train state."""
    if not pairs:
        raise ShapeError("training needs a nonempty dataset")
    mcfg = model.config
    dtype = mcfg.np_dtype
    optimizer = optimizer or Adam(list(model.named_parameters()))
    state = state or TrainState()
    state.dataset_size = len(pairs)
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    order = state.pending
    while state.step < cfg.steps:
        idx = _next_sample(rng, order, len(pairs))
        noisy, gt_raw, gt_srgb = _to_input(pairs[idx], dtype)
        if cfg.augment:
            noisy, gt_raw, gt_srgb = _augment(rng, noisy, gt_raw, gt_srgb)
        lr = cosine_lr(state.step, cfg.steps, cfg.lr_start, cfg.lr_end)
        pred_raw, pred_srgb = model(Tensor(noisy[None]))
        loss_srgb = (pred_srgb - Tensor(gt_srgb[None])).abs().mean()
        if pred_raw is not None and mcfg.alpha != 0.0:
            loss_raw = (pred_raw - Tensor(gt_raw[None])).abs().mean()
            loss = mcfg.alpha * loss_raw + mcfg.beta * loss_srgb
            raw_value = loss_raw.item() * mcfg.alpha
        else:
            loss = mcfg.beta * loss_srgb
            raw_value = 0.0
        total = loss.item()
        if not np.isfinite(total):
            _snapshot(model, optimizer, state, cfg, reason="nan-loss")
            raise NumericsError(f"loss became non-finite at step {state.step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step(lr)
        state.step += 1
        state.lr = lr
        state.history.append((state.step, lr, raw_value, loss_srgb.item() * mcfg.beta))
        state.rng_state = rng.bit_generator.state
        state.pending = order
        if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 and cfg.out_dir:
            save_checkpoint(Path(cfg.out_dir), model, optimizer, state, cfg)
        if stop_check and state.step % max(cfg.log_every, 1) == 0 and stop_check(state):
            break
    return state


def _next_sample(rng: np.random.Generator, order: list[int], n: int) -> int:
    if not order:
        order.extend(int(i) for i in rng.permutation(n))
    return order.pop(0)


def _snapshot(model, optimizer, state, cfg, reason: str) -> None:
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_weights(model, out / f"diagnostic-{reason}")
        (out / f"diagnostic-{reason}.json").write_text(
            json.dumps({"step": state.step, "reason": reason}))


# -- checkpointing ------------------------------------------------------------


def save_checkpoint(directory: Path, model: HimaNet, optimizer: Adam,
                    state: TrainState, cfg: TrainConfig) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / f"ckpt-{state.step:06d}"
    arrays = {f"param.{n}": p.data for n, p in model.named_parameters()}
    arrays.update({f"adam.m.{n}": optimizer.m[n] for n, _ in optimizer.named})
    arrays.update({f"adam.v.{n}": optimizer.v[n] for n, _ in optimizer.named})
    extra = {
        "config": model.config.to_json(),
        "step": state.step,
        "adam_steps": optimizer.step_count,
        "history": state.history,
        "dataset_size": state.dataset_size,
        "rng_state": _encode_rng(state.rng_state),
        "pending": state.pending,
        "train": {"steps": cfg.steps, "lr_start": cfg.lr_start, "lr_end": cfg.lr_end,
                  "seed": cfg.seed, "augment": cfg.augment},
    }
    dtype = "real64" if model.config.dtype == "real64" else "real32"
    save_arrays(base, arrays, dtype=dtype, extra=extra)
    return base


def _encode_rng(rng_state: dict | None):
    if rng_state is None:
        return None
    encoded = dict(rng_state)
    encoded["state"] = {k: str(v) for k, v in rng_state["state"].items()}
    return encoded


def _decode_rng(payload) -> dict | None:
    if payload is None:
        return None
    decoded = dict(payload)
    decoded["state"] = {k: int(v) for k, v in payload["state"].items()}
    return decoded


def load_checkpoint(base: Path | str) -> tuple[HimaNet, Adam, TrainState, TrainConfig]:
    arrays, extra = load_arrays(base)
    config = ModelConfig.from_json(extra["config"])
    model = build_model(config, seed=0)
    named = list(model.named_parameters())
    for name, p in named:
        p.data = arrays[f"param.{name}"].astype(config.np_dtype)
    optimizer = Adam(named)
    optimizer.step_count = int(extra["adam_steps"])
    for name, _ in named:
        optimizer.m[name] = arrays[f"adam.m.{name}"].astype(config.np_dtype)
        optimizer.v[name] = arrays[f"adam.v.{name}"].astype(config.np_dtype)
    state = TrainState(step=int(extra["step"]),
                       history=[tuple(row) for row in extra["history"]],
                       dataset_size=int(extra.get("dataset_size", 0)),
                       rng_state=_decode_rng(extra.get("rng_state")),
                       pending=[int(i) for i in extra.get("pending", [])])
    tr = extra["train"]
    cfg = TrainConfig(steps=tr["steps"], lr_start=tr["lr_start"], lr_end=tr["lr_end"],
                      seed=tr["seed"], augment=tr["augment"])
    return model, optimizer, state, cfg


def write_loss_csv(path: Path | str, state: TrainState) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss_raw", "loss_srgb"])
        writer.writerows(state.history)
