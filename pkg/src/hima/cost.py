"""Closed-form parameter and MAC counts for any model configuration.

Counts follow the package-wide convention (see counting): convolutions,
matrix multiplies, and scan recurrences only, one multiply-accumulate = 1.
`instrumented_macs` runs a real forward under the tally and must agree with
`profile` exactly; the analytic side never touches the model code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import counting
from .model import HimaNet, ModelConfig
from .tensor import Tensor, no_grad

CONVENTION = "MACs (1 multiply-accumulate = 1); convs, matmuls, scans only"


@dataclass
class CostLine:
    name: str
    params: int
    macs: int


@dataclass
class CostReport:
    input_hw: tuple[int, int]
    batch: int
    lines: list[CostLine] = field(default_factory=list)
    convention: str = CONVENTION

    def add(self, name: str, params: int, macs: int) -> None:
        self.lines.append(CostLine(name, int(params), int(macs)))

    @property
    def total_params(self) -> int:
        return sum(line.params for line in self.lines)

    @property
    def total_macs(self) -> int:
        return sum(line.macs for line in self.lines)

    def to_json(self) -> str:
        return json.dumps({
            "convention": self.convention,
            "input_hw": list(self.input_hw),
            "batch": self.batch,
            "lines": [{"name": l.name, "params": l.params, "macs": l.macs} for l in self.lines],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }, indent=1)

    def to_text(self) -> str:
        rows = [("component", "params", "MACs")]
        rows += [(l.name, f"{l.params:,}", f"{l.macs:,}") for l in self.lines]
        rows.append(("total", f"{self.total_params:,}", f"{self.total_macs:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        header = f"# {self.convention}; packed input {self.input_hw[0]}x{self.input_hw[1]}, batch {self.batch}"
        body = "\n".join(
            f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows)
        return header + "\n" + body


# -- primitive closed forms -------------------------------------------------------


def conv_cost(cin: int, cout: int, k: int, out_hw: int, *, groups: int = 1,
              bias: bool = True, batch: int = 1) -> tuple[int, int]:
    params = cout * (cin // groups) * k * k + (cout if bias else 0)
    macs = batch * out_hw * cout * (cin // groups) * k * k
    return params, macs


def leb_cost(channels: int, hw: int, batch: int = 1) -> tuple[int, int]:
    params = macs = 0
    for _ in range(3):
        p, m = conv_cost(channels, 2 * channels, 3, hw, batch=batch)
        params += p
        macs += m
    p, m = conv_cost(channels, channels, 1, 1, batch=batch)  # gate on pooled 1x1
    params += p
    macs += m
    p, m = conv_cost(channels, channels, 3, hw, groups=channels, batch=batch)
    return params + p, macs + m


def mesa_attention_macs(channels: int, hw: int, batch: int = 1) -> int:
    """The two C x C attention matmuls; quadratic in channels, linear in area."""
    return 2 * batch * channels * channels * hw


def mesa_cost(channels: int, hw: int, meta_dim: int, use_metadata: bool,
              batch: int = 1) -> tuple[int, int]:
    params = macs = 0
    if use_metadata:
        params += meta_dim                                   # metadata vector
        params += channels * meta_dim + channels             # metadata projection
        macs += channels * meta_dim
        p, m = conv_cost(channels, channels, 1, hw, batch=batch)
        params += p
        macs += m
        p, m = conv_cost(channels, channels, 3, hw, groups=channels, batch=batch)
        params += p
        macs += m
    for _ in ("k", "v"):
        p, m = conv_cost(channels, channels, 1, hw, batch=batch)
        params += p
        macs += m
    params += 1                                              # temperature
    macs += mesa_attention_macs(channels, hw, batch)
    p, m = conv_cost(channels, channels, 1, hw, batch=batch)
    return params + p, macs + m


def ss2d_macs(channels: int, hw: int, d_state: int, batch: int = 1) -> int:
    """Whole mixer MACs: projections, recurrence, output conv; linear in area."""
    rank = max(1, channels // 16)
    macs = 4 * batch * hw * (rank + 2 * d_state) * channels      # x projection
    macs += 4 * batch * hw * channels * rank                     # step projection
    macs += 4 * batch * hw * (5 * channels * d_state + channels)  # recurrence
    macs += batch * hw * channels * channels                     # output conv
    return macs


def ss2d_cost(channels: int, hw: int, d_state: int, batch: int = 1) -> tuple[int, int]:
    rank = max(1, channels // 16)
    params = 4 * (rank + 2 * d_state) * channels    # x_proj
    params += 4 * channels * rank + 4 * channels    # dt_proj + bias
    params += 4 * channels * d_state                # a_log
    params += 4 * channels                          # skip
    params += channels * channels + channels        # out conv
    return params, ss2d_macs(channels, hw, d_state, batch)


def spatial_attention_cost(channels: int, hw: int, batch: int = 1) -> tuple[int, int]:
    params, macs = conv_cost(2, 1, 7, hw, batch=batch)
    p, m = conv_cost(channels, channels, 1, hw, batch=batch)
    return params + p, macs + m


def block_cost(kind: str, channels: int, hw: int, cfg: ModelConfig,
               batch: int = 1) -> tuple[int, int]:
    if kind == "lsb":
        params, macs = mesa_cost(channels, hw, cfg.meta_dim, cfg.use_metadata, batch)
    elif kind == "ssb":
        params, macs = ss2d_cost(channels, hw, cfg.d_state, batch)
    else:
        params, macs = spatial_attention_cost(channels, hw, batch)
    p, m = leb_cost(channels, hw, batch)
    params += p + 4 * channels  # two layer norms
    return params, macs + m


def loda_cost(channels: int, h: int, w: int, patch_sizes, batch: int = 1) -> tuple[int, int]:
    params = macs = 0
    for ps in patch_sizes:
        grid = math.ceil(h / ps) * math.ceil(w / ps)
        for _ in ("mean", "std"):
            p, m = conv_cost(channels, channels, 3, grid, batch=batch)
            params += p
            macs += m
    p, m = conv_cost(channels * len(patch_sizes), channels, 1, h * w, batch=batch)
    return params + p, macs + m


def pdb_cost(cin: int, width: int, depth: int, hw: int, batch: int = 1) -> tuple[int, int]:
    params, macs = conv_cost(cin, width, 3, hw, batch=batch)
    for _ in range(depth):
        p, m = leb_cost(width, hw, batch)
        params += p
        macs += m
    p, m = conv_cost(width, cin, 3, hw, batch=batch)
    return params + p, macs + m


def mpf_cost(channels: int, hw: int, priors, batch: int = 1) -> tuple[int, int]:
    params = macs = 0
    if "aligned" in priors:
        p, m = conv_cost(channels, channels, 1, hw, batch=batch)
        params += p
        macs += m
    p, m = conv_cost(2 * channels, channels, 1, hw, batch=batch)  # HF modulation
    params += p
    macs += m
    p, m = conv_cost(channels, channels, 1, hw, batch=batch)      # recon path
    params += p
    macs += m
    for name in ("rhat", "hf"):
        if name in priors:
            p, m = conv_cost(channels, channels, 1, hw, batch=batch)
            params += p
            macs += m
    p, m = conv_cost(channels, channels, 1, hw, batch=batch)      # zero-init out
    return params + p, macs + m


# -- whole-model profile -----------------------------------------------------------


def profile(config: ModelConfig, input_hw: tuple[int, int] = (32, 32),
            batch: int = 1) -> CostReport:
    """Analytic cost of a forward pass on a packed input of the given size."""
    config.validate()
    h, w = input_hw
    cin = config.in_channels
    report = CostReport(input_hw=input_hw, batch=batch)
    if config.use_stage1:
        report.add("stage1.loda", *loda_cost(cin, h, w, config.loda_patch_sizes, batch))
        report.add("stage1.pdb", *pdb_cost(cin, config.pdb_width, config.pdb_depth, h * w, batch))
        for name in config.priors:
            params = macs = 0
            for lv in range(config.levels):
                hw_lv = (h >> lv) * (w >> lv)
                p, m = conv_cost(cin, config.widths[lv], 1, hw_lv, batch=batch)
                params += p
                macs += m
            report.add(f"stage1.lift.{name}", params, macs)
    report.add("net.shallow", *conv_cost(cin, config.widths[0], 3, h * w, batch=batch))
    for lv in range(config.levels):
        hw_lv = (h >> lv) * (w >> lv)
        width = config.widths[lv]
        p, m = block_cost(config.block_types[lv], width, hw_lv, config, batch)
        n = config.blocks_per_level
        report.add(f"net.enc{lv}", n * p, n * m)
        if lv < config.levels - 1:
            hw_next = (h >> (lv + 1)) * (w >> (lv + 1))
            report.add(f"net.down{lv}",
                       *conv_cost(width, config.widths[lv + 1], 3, hw_next, batch=batch))
    for lv in range(config.levels - 2, -1, -1):
        width = config.widths[lv]
        hw_lv = (h >> lv) * (w >> lv)
        hw_next = (h >> (lv + 1)) * (w >> (lv + 1))
        report.add(f"net.up{lv}",
                   *conv_cost(config.widths[lv + 1], 4 * width, 1, hw_next, batch=batch))
        if config.use_mpf:
            report.add(f"net.skip{lv}", *mpf_cost(width, hw_lv, config.priors, batch))
        else:
            report.add(f"net.skip{lv}", *conv_cost(2 * width, width, 1, hw_lv, batch=batch))
        p, m = block_cost(config.block_types[lv], width, hw_lv, config, batch)
        n = config.blocks_per_level
        report.add(f"net.dec{lv}", n * p, n * m)
    r2 = config.upscale**2
    report.add("net.head", *conv_cost(config.widths[0], 3 * r2, 3, h * w, batch=batch))
    return report


def instrumented_macs(model: HimaNet, input_hw: tuple[int, int],
                      batch: int = 1) -> dict[str, int]:
    """Tally of a real forward pass; keys are op kinds plus 'total'."""
    h, w = input_hw
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.0, (batch, model.config.in_channels, h, w))
    with no_grad(), counting.mac_tally() as tally:
        model(Tensor(x.astype(model.config.np_dtype)))
    tally["total"] = counting.total({k: v for k, v in tally.items() if k != "total"})
    return tally
