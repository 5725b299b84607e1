"""Ablation study runner.

Builds named configuration variants (module ladder, prior removals,
architecture swaps), trains each on the same synthetic split and seed, and
reports PSNR/SSIM next to analytic parameter and MAC counts. Values are
desk-scale: they order variants, they do not reproduce any published table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .cost import profile
from .errors import ConfigError
from .metrics import psnr, ssim
from .model import HimaNet, ModelConfig, build_model
from .rawio import BAYER, SamplePair, synth_pair
from .train import TrainConfig, train

MAIN_LADDER = ("baseline", "+metadata", "+loda", "+mpf")
PRIOR_TABLE = ("priors_all", "priors_no_hf", "priors_ar_only", "priors_none")
ARCH_TABLE = ("all_lsb", "ssb_sa", "hima")
TABLES = {"main": MAIN_LADDER, "mpf": PRIOR_TABLE, "arch": ARCH_TABLE}


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    if name == "baseline":
        return replace(base, use_stage1=False, use_mpf=False, use_metadata=False, priors=())
    if name == "+metadata":
        return replace(base, use_stage1=False, use_mpf=False, use_metadata=True, priors=())
    if name == "+loda":
        return replace(base, use_stage1=True, use_mpf=False, use_metadata=True, priors=())
    if name in ("+mpf", "priors_all", "hima"):
        return replace(base)
    if name == "priors_no_hf":
        return replace(base, priors=("aligned", "rhat"))
    if name == "priors_ar_only":
        return replace(base, priors=("aligned",))
    if name == "priors_none":
        return replace(base, priors=())
    if name == "all_lsb":
        return replace(base, block_types=("lsb",) * base.levels)
    if name == "ssb_sa":
        kinds = tuple("sa" if k == "ssb" else k for k in base.block_types)
        return replace(base, block_types=kinds)
    raise ConfigError(f"unknown ablation toggle {name!r}")


@dataclass
class AblationSpec:
    tables: tuple[str, ...] = ("main", "mpf", "arch")
    variants: tuple[str, ...] = ()           # explicit list overrides tables
    seeds: tuple[int, ...] = (0,)
    base: ModelConfig = field(default_factory=lambda: ModelConfig(
        widths=(8, 12, 16, 24), blocks_per_level=1, loda_patch_sizes=(4, 8),
        pdb_width=12, pdb_depth=1, meta_dim=8))
    steps: int = 200
    n_pairs: int = 4
    mosaic_size: tuple[int, int] = (32, 32)
    ratio: float = 100.0
    data_seed: int = 1234
    cfa: str = BAYER


def make_corpus(spec: AblationSpec) -> list[SamplePair]:
    return [synth_pair(spec.data_seed + i, spec.mosaic_size, spec.cfa, spec.ratio)
            for i in range(spec.n_pairs)]


def evaluate_model(model: HimaNet, pairs: list[SamplePair]) -> tuple[float, float]:
    scores_p, scores_s = [], []
    for pair in pairs:
        amplified = np.clip(pair.noisy.data * pair.noisy.ratio, 0.0, 1.0)
        _, srgb = model.infer(amplified)
        out = np.clip(srgb, 0.0, 1.0)
        scores_p.append(psnr(out, pair.gt_srgb))
        scores_s.append(ssim(out, pair.gt_srgb))
    return float(np.mean(scores_p)), float(np.mean(scores_s))


def run_ablation(spec: AblationSpec) -> dict:
    """Train every requested variant; one report row per (variant, seed)."""
    for table in spec.tables:
        if table not in TABLES:
            raise ConfigError(f"unknown ablation table {table!r}")
    names: list[tuple[str, str]] = []
    if spec.variants:
        names = [("custom", v) for v in spec.variants]
    else:
        for table in spec.tables:
            names += [(table, v) for v in TABLES[table]]
    pairs = make_corpus(spec)
    input_hw = tuple(s // (2 if spec.cfa == BAYER else 3) for s in spec.mosaic_size)
    rows = []
    for table, name in names:
        cfg = variant_config(spec.base, name).validate()
        report = profile(cfg, input_hw)
        for seed in spec.seeds:
            model = build_model(cfg, seed=seed)
            train(model, pairs, TrainConfig(steps=spec.steps, seed=seed, augment=False))
            score_p, score_s = evaluate_model(model, pairs)
            rows.append({
                "table": table, "variant": name, "seed": seed,
                "psnr": round(score_p, 3), "ssim": round(score_s, 4),
                "params": report.total_params, "macs": report.total_macs,
            })
    return {
        "note": "desk-scale synthetic corpus; values order variants only",
        "steps": spec.steps, "pairs": spec.n_pairs, "seeds": list(spec.seeds),
        "rows": rows,
    }


def format_report(report: dict) -> str:
    headers = ("table", "variant", "seed", "psnr", "ssim", "params", "macs")
    rows = [headers] + [tuple(str(r[h]) for h in headers) for r in report["rows"]]
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = ["  ".join(f"{cell:<{widths[i]}}" for i, cell in enumerate(row)) for row in rows]
    return "\n".join(["# " + report["note"]] + lines)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=1)
