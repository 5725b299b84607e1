#!/usr/bin/env python3
"""Sweep the analytic cost model: mixer MACs against channel count and
spatial area, plus an all-LSB vs hybrid comparison at several input sizes.

Example:
    python3 scripts/profile_sweep.py --out /tmp/sweep
"""

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from hima.cost import mesa_attention_macs, profile, ss2d_macs
from hima.model import ModelConfig


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, type=Path)
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    with open(args.out / "mixer_macs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channels", "area", "attention_macs", "scan_macs"])
        for channels in (16, 32, 64, 128, 256):
            for area in (256, 1024, 4096):
                writer.writerow([channels, area,
                                 mesa_attention_macs(channels, area),
                                 ss2d_macs(channels, area, d_state=8)])

    comparison = []
    desk = ModelConfig()
    for extent in (16, 32, 64, 128):
        hybrid = profile(desk, (extent, extent))
        all_lsb = profile(replace(desk, block_types=("lsb",) * desk.levels),
                          (extent, extent))
        comparison.append({
            "packed_extent": extent,
            "hima": {"params": hybrid.total_params, "macs": hybrid.total_macs},
            "all_lsb": {"params": all_lsb.total_params, "macs": all_lsb.total_macs},
            "all_lsb_heavier": (all_lsb.total_params > hybrid.total_params
                                and all_lsb.total_macs > hybrid.total_macs),
        })
    (args.out / "hybrid_vs_all_lsb.json").write_text(json.dumps(comparison, indent=1))
    (args.out / "desk_profile.txt").write_text(profile(desk, (32, 32)).to_text())
    print(json.dumps({"rows": len(comparison),
                      "all_heavier": all(r["all_lsb_heavier"] for r in comparison)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
