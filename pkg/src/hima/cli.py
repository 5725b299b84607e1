"""Command-line entry point.

Subcommands: synth, train, infer, eval, profile, loda-demo, ablate,
selftest. Diagnostics go to stderr; machine-readable output goes to files
or stdout as JSON. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure. HIMA_THREADS caps the eval worker pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablate import AblationSpec, format_report, report_to_json, run_ablation
from .cost import profile
from .errors import ConfigError, DataError, NumericsError, ShapeError
from .loda import ORACLE_MODES, oracle_align
from .metrics import psnr, ssim
from .model import ModelConfig, build_model, load_weights, save_weights
from .rawio import (BAYER, list_ids, load_pair, load_split, save_pair,
                    synth_pair, unpack, write_pgm16, write_ppm8)
from .selftest import run_selftest
from .train import TrainConfig, train, write_loss_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _worker_count() -> int:
    raw = os.environ.get("HIMA_THREADS", "")
    if raw.isdigit() and int(raw) > 0:
        return int(raw)
    return max(os.cpu_count() or 1, 1)


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"missing config file {path}")
        config = ModelConfig.from_json(json.loads(path.read_text()))
    else:
        config = ModelConfig()
    overrides = dict(kv.split("=", 1) for kv in getattr(args, "set", []) or [])
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()


def _heatmap_ppm(values: np.ndarray) -> np.ndarray:
    """Grayscale [0,1] -> ember colormap [3,H,W] uint8."""
    anchors = np.array([[0, 0, 24], [128, 24, 96], [230, 120, 20], [255, 250, 220]], dtype=np.float64)
    t = np.clip(values, 0.0, 1.0) * (len(anchors) - 1)
    idx = np.minimum(t.astype(int), len(anchors) - 2)
    frac = t - idx
    low = anchors[idx]
    high = anchors[idx + 1]
    rgb = low + (high - low) * frac[..., None]
    return np.round(rgb).astype(np.uint8).transpose(2, 0, 1)


# -- subcommands -----------------------------------------------------------------


def _cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    ratios = [float(r) for r in args.ratios.split(",")]
    h, w = (int(v) for v in args.size.split("x"))
    for i in range(args.count):
        ratio = ratios[i % len(ratios)]
        sample_seed = int(rng.integers(0, 2**31))
        pair = synth_pair(sample_seed, (h, w), args.cfa, ratio)
        save_pair(args.data, args.split, f"{i:04d}", pair, seed=sample_seed)
    print(json.dumps({"written": args.count, "split": args.split,
                      "size": [h, w], "cfa": args.cfa, "ratios": ratios}))
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [pair for _, pair in load_split(args.data, args.split)]
    model = build_model(config, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, seed=args.seed,
                      checkpoint_every=args.checkpoint_every, out_dir=out)
    state = train(model, pairs, cfg)
    save_weights(model, out)
    write_loss_csv(out / "loss.csv", state)
    (out / "config.json").write_text(json.dumps(config.to_json(), indent=1))
    print(json.dumps({"steps": state.step, "final_loss": state.losses[-1],
                      "weights": str(out)}))
    return EXIT_OK


def _cmd_infer(args) -> int:
    model = load_weights(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for sid in list_ids(args.data, args.split):
        pair = load_pair(args.data, args.split, sid)
        if pair.noisy.cfa != model.config.cfa:
            raise DataError(f"sample {sid} is {pair.noisy.cfa}, model expects {model.config.cfa}")
        amplified = np.clip(pair.noisy.data * pair.noisy.ratio, 0.0, 1.0)
        rhat, srgb = model.infer(amplified)
        srgb8 = np.round(np.clip(srgb, 0.0, 1.0) * 255).astype(np.uint8)
        write_ppm8(out / f"{sid}_srgb.ppm", srgb8)
        if rhat is not None:
            scale = pair.noisy.white_level - pair.noisy.black_level
            dn = np.round(pair.noisy.black_level
                          + np.clip(rhat, 0.0, 1.0) * scale).astype(np.uint16)
            write_pgm16(out / f"{sid}_rhat.pgm", unpack(dn, model.config.cfa))
        written.append(sid)
    print(json.dumps({"written": written, "out": str(out)}))
    return EXIT_OK


def _eval_one(model, pair) -> tuple[float, float]:
    amplified = np.clip(pair.noisy.data * pair.noisy.ratio, 0.0, 1.0)
    _, srgb = model.infer(amplified)
    out = np.clip(srgb, 0.0, 1.0)
    return psnr(out, pair.gt_srgb), ssim(out, pair.gt_srgb)


def _cmd_eval(args) -> int:
    model = load_weights(args.weights)
    samples = load_split(args.data, args.split)
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        scores = list(pool.map(lambda item: _eval_one(model, item[1]), samples))
    rows = [{"id": sid, "psnr": round(p, 3), "ssim": round(s, 4)}
            for (sid, _), (p, s) in zip(samples, scores)]
    summary = {
        "split": args.split,
        "rows": rows,
        "mean_psnr": round(float(np.mean([r["psnr"] for r in rows])), 3),
        "mean_ssim": round(float(np.mean([r["ssim"] for r in rows])), 4),
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"eval-{args.split}.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps(summary))
    return EXIT_OK


def _cmd_profile(args) -> int:
    config = _load_config(args)
    h, w = (int(v) for v in args.size.split("x"))
    reports = {"hima": profile(config, (h, w))}
    if args.compare == "all-lsb":
        reports["all_lsb"] = profile(
            replace(config, block_types=("lsb",) * config.levels), (h, w))
    payload = {
        "convention": reports["hima"].convention,
        "input_hw": [h, w],
        "models": {name: {"params": r.total_params, "macs": r.total_macs}
                   for name, r in reports.items()},
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, rep in reports.items():
            (out / f"profile-{name}.txt").write_text(rep.to_text())
            (out / f"profile-{name}.json").write_text(rep.to_json())
    for name, rep in reports.items():
        print(f"[{name}] params={rep.total_params:,} macs={rep.total_macs:,}", file=sys.stderr)
    print(json.dumps(payload))
    return EXIT_OK


def _cmd_loda_demo(args) -> int:
    h, w = (int(v) for v in args.size.split("x"))
    pair = synth_pair(args.seed, (h, w), BAYER, args.ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noisy, gt = pair.noisy.data, pair.gt_raw.data
    rows = []
    images = {"noisy": np.clip(noisy * args.ratio, 0, 1), "gt": gt}
    for mode in ORACLE_MODES:
        aligned = oracle_align(noisy, gt, mode, args.patch, ratio=args.ratio)
        rows.append({"mode": mode, "mae_to_gt": float(np.mean(np.abs(aligned - gt))),
                     "patch_size": args.patch})
        images[mode] = aligned
    for name, img in images.items():
        write_ppm8(out / f"loda-{name}.ppm", _heatmap_ppm(img.mean(axis=0)))
    payload = {"rows": rows, "seed": args.seed, "ratio": args.ratio}
    (out / "loda-demo.json").write_text(json.dumps(payload, indent=1))
    print(json.dumps(payload))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    spec = AblationSpec(tables=tuple(args.tables.split(",")),
                        seeds=tuple(int(s) for s in args.seeds.split(",")),
                        steps=args.steps)
    report = run_ablation(spec)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(report_to_json(report))
        (out / "ablation.txt").write_text(format_report(report))
    print(format_report(report), file=sys.stderr)
    print(json.dumps(report))
    return EXIT_OK


def _cmd_selftest(args) -> int:
    results = run_selftest()
    failed = False
    for name, (passed, total) in results.items():
        print(f"{name}: {passed}/{total} passed", file=sys.stderr)
        failed |= passed != total
    print(json.dumps({name: {"passed": p, "total": t} for name, (p, t) in results.items()}))
    return EXIT_NUMERIC if failed else EXIT_OK


# -- argument wiring ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hima", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="model config JSON path")
            p.add_argument("--set", action="append", metavar="K=V",
                           help="override a config field")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, config=False)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", default="64x64", help="mosaic HxW")
    p.add_argument("--cfa", default=BAYER, choices=["bayer", "xtrans"])
    p.add_argument("--ratios", default="100,200")

    p = sub.add_parser("train", help="train on a dataset split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("infer", help="run the model over a split, write images")
    common(p, config=False)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="PSNR/SSIM table over a split")
    common(p, config=False)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")

    p = sub.add_parser("profile", help="analytic parameter/MAC report")
    common(p)
    p.add_argument("--size", default="32x32", help="packed input HxW")
    p.add_argument("--compare", choices=["all-lsb"])
    p.add_argument("--out")

    p = sub.add_parser("loda-demo", help="oracle alignment ladder heatmaps")
    common(p, config=False)
    p.add_argument("--out", required=True)
    p.add_argument("--size", default="64x64")
    p.add_argument("--ratio", type=float, default=100.0)
    p.add_argument("--patch", type=int, default=16)

    p = sub.add_parser("ablate", help="train and score ablation variants")
    common(p, config=False)
    p.add_argument("--out")
    p.add_argument("--tables", default="main,mpf,arch")
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=200)

    p = sub.add_parser("selftest", help="run built-in invariant suites")
    common(p, config=False)
    return parser


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "profile": _cmd_profile,
    "loda-demo": _cmd_loda_demo,
    "ablate": _cmd_ablate,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
