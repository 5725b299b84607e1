"""Built-in invariant checks behind the `selftest` subcommand.

Quick, dependency-free versions of the package's core contracts: gradient
agreement with finite differences, Fourier partition identities, CFA and
file roundtrips, alignment statistics, scan causality, cost-model equality,
and determinism of build/serialize. The pytest suite is the full gate; this
is the smoke panel.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import freq, ops
from .gradcheck import max_relative_error
from .loda import Loda, oracle_align
from .metrics import psnr, ssim
from .model import ModelConfig, build_model, load_weights, save_weights
from .rawio import (BAYER, XTRANS, pack, read_pgm16, synth_pair, unpack,
                    write_pgm16)
from .tensor import Tensor, real64
from .cost import instrumented_macs, profile


def _suite_gradients() -> list[bool]:
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True, dtype=real64)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.4, requires_grad=True, dtype=real64)
    checks = []
    checks.append(max_relative_error(
        lambda: (ops.conv2d(x, w, padding=2, dilation=2) ** 2).sum(), [x, w]) < 1e-4)
    checks.append(max_relative_error(
        lambda: ((x.exp() * x).mean() + x.std()).reshape(()), [x]) < 1e-4)
    loda = Loda(rng, 3, (3,), dtype=real64)
    checks.append(max_relative_error(
        lambda: (loda(x) ** 2).sum(), [x] + loda.parameters(), max_coords=3) < 1e-4)
    return checks


def _suite_fourier() -> list[bool]:
    rng = np.random.default_rng(1)
    checks = []
    for h, w in ((4, 4), (7, 5), (16, 16)):
        z = Tensor(rng.standard_normal((1, 2, h, w)), dtype=real64)
        back = freq.ife(freq.fe(z, 0.2))
        checks.append(float(np.abs(back.data - z.data).max()) < 1e-10)
    z = Tensor(rng.standard_normal((1, 1, 8, 8)), dtype=real64)
    spec = ops.dft2(z)
    energy = (spec.real.data**2 + spec.imag.data**2).sum()
    checks.append(abs(energy - (z.data**2).sum() * 64) / energy < 1e-8)
    return checks


def _suite_cfa_io() -> list[bool]:
    rng = np.random.default_rng(2)
    checks = []
    mosaic = rng.uniform(0, 1, (12, 18))
    checks.append(np.array_equal(unpack(pack(mosaic, BAYER), BAYER), mosaic))
    checks.append(np.array_equal(unpack(pack(mosaic, XTRANS), XTRANS), mosaic))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "t.pgm"
        dn = rng.integers(0, 65536, (9, 7)).astype(np.uint16)
        write_pgm16(path, dn)
        checks.append(np.array_equal(read_pgm16(path), dn))
    return checks


def _suite_alignment() -> list[bool]:
    checks = []
    hits = 0
    for seed in range(5):
        pair = synth_pair(seed, (64, 64), BAYER, ratio=100.0)
        noisy, gt = pair.noisy.data, pair.gt_raw.data
        maes = [np.mean(np.abs(oracle_align(noisy, gt, mode, 8, ratio=100.0) - gt))
                for mode in ("global_fixed", "global_mean", "local_mean", "local_mean_std")]
        hits += all(a > b for a, b in zip(maes, maes[1:]))
        aligned = oracle_align(noisy, gt, "local_mean_std", 8)
        mu_err = np.abs(aligned.reshape(4, 4, 8, 4, 8).mean(axis=(2, 4))
                        - gt.reshape(4, 4, 8, 4, 8).mean(axis=(2, 4))).max()
        checks.append(mu_err < 1e-6)
    checks.append(hits >= 4)
    return checks


def _suite_scan() -> list[bool]:
    from .blocks import selective_scan

    rng = np.random.default_rng(3)
    length, chan, sdim = 6, 3, 2
    u = rng.standard_normal((1, 1, length, chan))
    dt = np.abs(rng.standard_normal((1, 1, length, chan))) * 0.5
    a = -np.abs(rng.standard_normal((1, chan, sdim)))
    bs = rng.standard_normal((1, 1, length, sdim))
    cs = rng.standard_normal((1, 1, length, sdim))
    d = rng.standard_normal((1, chan))
    base = selective_scan(*(Tensor(t, dtype=real64) for t in (u, dt, a, bs, cs, d))).data
    checks = []
    # causality: perturbing token t+1 leaves outputs at <= t unchanged
    u2 = u.copy()
    u2[0, 0, 3] += 1.0
    pert = selective_scan(*(Tensor(t, dtype=real64) for t in (u2, dt, a, bs, cs, d))).data
    checks.append(np.array_equal(pert[0, 0, :3], base[0, 0, :3]))
    checks.append(not np.allclose(pert[0, 0, 3:], base[0, 0, 3:]))
    # memoryless limit: strongly negative state matrix kills carryover
    amem = np.full((1, chan, sdim), -1e6)
    ones = np.ones((1, 1, length, sdim))
    y = selective_scan(Tensor(u, dtype=real64), Tensor(dt, dtype=real64),
                       Tensor(amem, dtype=real64), Tensor(ones, dtype=real64),
                       Tensor(ones, dtype=real64), Tensor(np.zeros((1, chan)), dtype=real64))
    checks.append(np.allclose(y.data, sdim * dt * u, atol=1e-12))
    return checks


def _suite_cost_model() -> list[bool]:
    cfg = ModelConfig(levels=2, widths=(4, 8), blocks_per_level=1,
                      block_types=("lsb", "ssb"), loda_patch_sizes=(4,),
                      pdb_width=8, pdb_depth=1, meta_dim=4, d_state=2)
    model = build_model(cfg, seed=0)
    report = profile(cfg, (8, 8))
    tally = instrumented_macs(model, (8, 8))
    return [report.total_macs == tally["total"],
            report.total_params == model.param_count()]


def _suite_metrics() -> list[bool]:
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, (3, 32, 32))
    checks = [psnr(img, img) == 100.0, abs(ssim(img, img) - 1.0) < 1e-12]
    shifted = np.clip(img + 0.1, 0, 1)
    mse = np.mean((img - shifted) ** 2)
    checks.append(abs(psnr(img, shifted) - 10 * np.log10(1.0 / mse)) < 1e-9)
    return checks


def _suite_determinism() -> list[bool]:
    cfg = ModelConfig(levels=2, widths=(4, 8), blocks_per_level=1,
                      block_types=("lsb", "ssb"), loda_patch_sizes=(4,),
                      pdb_width=8, pdb_depth=1, meta_dim=4, d_state=2)
    m1 = build_model(cfg, seed=9)
    m2 = build_model(cfg, seed=9)
    same = all(np.array_equal(p.data, q.data)
               for (_, p), (_, q) in zip(m1.named_parameters(), m2.named_parameters()))
    x = np.random.default_rng(5).uniform(0, 1, (4, 8, 8)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        save_weights(m1, tmp)
        m3 = load_weights(tmp)
    _, srgb1 = m1.infer(x)
    _, srgb3 = m3.infer(x)
    return [same, np.array_equal(srgb1, srgb3)]


SUITES = {
    "gradients": _suite_gradients,
    "fourier": _suite_fourier,
    "cfa-io": _suite_cfa_io,
    "alignment": _suite_alignment,
    "scan": _suite_scan,
    "cost-model": _suite_cost_model,
    "metrics": _suite_metrics,
    "determinism": _suite_determinism,
}


def run_selftest() -> dict[str, tuple[int, int]]:
    results = {}
    for name, suite in SUITES.items():
        outcomes = suite()
        results[name] = (sum(bool(v) for v in outcomes), len(outcomes))
    return results
