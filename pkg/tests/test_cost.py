import json
from dataclasses import replace

import numpy as np
import pytest

from hima import counting, ops
from hima.cost import (conv_cost, instrumented_macs, mesa_attention_macs,
                       profile, ss2d_macs)
from hima.model import ModelConfig, build_model
from hima.tensor import Tensor


MICRO_CONFIGS = [
    ModelConfig(levels=2, widths=(4, 8), blocks_per_level=1, block_types=("lsb", "ssb"),
                loda_patch_sizes=(4,), pdb_width=8, pdb_depth=1, meta_dim=4, d_state=2),
    ModelConfig(levels=3, widths=(4, 6, 8), blocks_per_level=2,
                block_types=("lsb", "ssb", "ssb"), loda_patch_sizes=(2, 4),
                pdb_width=6, pdb_depth=2, use_mpf=False, priors=(), meta_dim=4, d_state=2),
    ModelConfig(cfa="xtrans", levels=2, widths=(6, 12), blocks_per_level=1,
                block_types=("sa", "ssb"), use_stage1=False, use_mpf=False, priors=(),
                use_metadata=False, meta_dim=4, d_state=3),
]


class TestPrimitives:
    def test_single_conv_hand_audited(self):
        # 3x3 conv, 4 -> 16 channels: 4*16*9 weights + 16 biases = 592
        params, macs = conv_cost(4, 16, 3, out_hw=25)
        assert params == 592
        assert macs == 25 * 16 * 4 * 9

    def test_conv_counter_matches_hand_formula(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 10, 10)).astype(np.float32))
        w = Tensor(rng.standard_normal((16, 4, 3, 3)).astype(np.float32))
        with counting.mac_tally() as tally:
            out = ops.conv2d(x, w, padding=1, stride=2)
        assert tally["conv2d"] == 2 * out.shape[2] * out.shape[3] * 16 * 4 * 9

    def test_matmul_counter(self, rng):
        a = Tensor(rng.standard_normal((3, 4, 5)).astype(np.float32))
        b = Tensor(rng.standard_normal((3, 5, 7)).astype(np.float32))
        with counting.mac_tally() as tally:
            from hima.tensor import matmul

            matmul(a, b)
        assert tally["matmul"] == 3 * 4 * 7 * 5

    def test_nested_tallies_both_count(self, rng):
        x = Tensor(np.ones((1, 1, 4, 4), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        with counting.mac_tally() as outer:
            ops.conv2d(x, w)
            with counting.mac_tally() as inner:
                ops.conv2d(x, w)
        assert outer["conv2d"] == 2 * inner["conv2d"]


class TestProfileExactness:
    @pytest.mark.parametrize("idx", range(len(MICRO_CONFIGS)))
    def test_analytic_macs_equal_instrumented(self, idx):
        cfg = MICRO_CONFIGS[idx]
        model = build_model(cfg, seed=0)
        hw = (8, 8)
        assert profile(cfg, hw).total_macs == instrumented_macs(model, hw)["total"]

    @pytest.mark.parametrize("idx", range(len(MICRO_CONFIGS)))
    def test_analytic_params_equal_built(self, idx):
        cfg = MICRO_CONFIGS[idx]
        assert profile(cfg, (8, 8)).total_params == build_model(cfg, 0).param_count()

    def test_desk_config_with_nondivisible_loda_grid(self):
        # odd-grid reflective padding path must still be counted exactly
        cfg = ModelConfig(levels=2, widths=(4, 8), blocks_per_level=1,
                          block_types=("lsb", "ssb"), loda_patch_sizes=(3,),
                          pdb_width=8, pdb_depth=1, meta_dim=4, d_state=2)
        model = build_model(cfg, 0)
        assert profile(cfg, (8, 8)).total_macs == instrumented_macs(model, (8, 8))["total"]

    def test_params_independent_of_input_size(self):
        cfg = MICRO_CONFIGS[0]
        assert profile(cfg, (8, 8)).total_params == profile(cfg, (16, 16)).total_params

    def test_macs_deterministic_function_of_config_and_size(self):
        cfg = MICRO_CONFIGS[0]
        assert profile(cfg, (16, 16)).total_macs == profile(cfg, (16, 16)).total_macs
        assert profile(cfg, (16, 16)).total_macs > profile(cfg, (8, 8)).total_macs

    def test_totals_equal_sum_of_parts(self):
        report = profile(MICRO_CONFIGS[0], (8, 8))
        assert report.total_macs == sum(l.macs for l in report.lines)
        assert report.total_params == sum(l.params for l in report.lines)


class TestScalingLaws:
    def test_attention_macs_quadruple_when_channels_double(self):
        hw = 256
        for c in (8, 16, 32, 64):
            assert mesa_attention_macs(2 * c, hw) == 4 * mesa_attention_macs(c, hw)

    def test_attention_macs_double_when_area_doubles(self):
        for hw in (64, 128, 256):
            assert mesa_attention_macs(16, 2 * hw) == 2 * mesa_attention_macs(16, hw)

    def test_scan_macs_double_when_area_doubles(self):
        for hw in (16, 64, 256):
            assert ss2d_macs(32, 2 * hw, 8) == 2 * ss2d_macs(32, hw, 8)

    def test_scan_macs_subquadratic_in_channels(self):
        # channel sensitivity: doubling C must not quadruple the scan cost
        hw = 64
        for c in (32, 64):
            assert ss2d_macs(2 * c, hw, 8) < 4 * ss2d_macs(c, hw, 8)


class TestEfficiencyOrdering:
    @pytest.mark.parametrize("hw", [(16, 16), (32, 32), (64, 64)])
    def test_all_lsb_exceeds_hybrid_at_every_size(self, hw):
        desk = ModelConfig()
        all_lsb = replace(desk, block_types=("lsb",) * desk.levels)
        base = profile(desk, hw)
        swapped = profile(all_lsb, hw)
        assert swapped.total_params > base.total_params
        assert swapped.total_macs > base.total_macs

    def test_scaled_config_keeps_ordering(self):
        scaled = ModelConfig(widths=(32, 64, 128, 256), pdb_width=64)
        all_lsb = replace(scaled, block_types=("lsb",) * 4)
        base = profile(scaled, (64, 64))
        swapped = profile(all_lsb, (64, 64))
        assert swapped.total_params > base.total_params
        assert swapped.total_macs > base.total_macs


class TestReportFormats:
    def test_json_payload(self):
        report = profile(MICRO_CONFIGS[0], (8, 8))
        payload = json.loads(report.to_json())
        assert payload["total_macs"] == report.total_macs
        assert payload["convention"].startswith("MACs")

    def test_text_alignment(self):
        text = profile(MICRO_CONFIGS[0], (8, 8)).to_text()
        assert text.splitlines()[0].startswith("#")
        assert "total" in text.splitlines()[-1]
