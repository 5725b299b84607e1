import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hima import rawio
from hima.errors import DataError, ShapeError


class TestBayerPacking:
    def test_single_cell_channel_order(self):
        mosaic = np.array([[1.0, 2.0], [3.0, 4.0]])
        packed = rawio.pack_bayer(mosaic)
        assert packed.shape == (4, 1, 1)
        np.testing.assert_array_equal(packed[:, 0, 0], [1, 2, 3, 4])

    def test_roundtrip_exact(self, rng):
        mosaic = rng.uniform(0, 1, (64, 64))
        np.testing.assert_array_equal(rawio.unpack_bayer(rawio.pack_bayer(mosaic)), mosaic)

    def test_full_sensor_shape(self):
        # Sony sensor extents: 2848x4256 packs to 4x1424x2128
        mosaic = np.zeros((2848, 4256), dtype=np.float32)
        assert rawio.pack_bayer(mosaic).shape == (4, 1424, 2128)

    def test_odd_extents_error(self):
        with pytest.raises(ShapeError):
            rawio.pack_bayer(np.zeros((3, 4)))


class TestXTransPacking:
    def test_single_tile_index_map(self):
        mosaic = np.arange(9, dtype=np.float64).reshape(3, 3)
        mosaic6 = np.tile(mosaic, (2, 2))
        packed = rawio.pack_xtrans(mosaic6)
        assert packed.shape == (9, 2, 2)
        for k in range(9):
            assert packed[k, 0, 0] == mosaic[k // 3, k % 3]

    def test_roundtrip_exact(self, rng):
        mosaic = rng.uniform(0, 1, (48, 48))
        np.testing.assert_array_equal(rawio.unpack_xtrans(rawio.pack_xtrans(mosaic)), mosaic)

    def test_divisibility_rule(self):
        with pytest.raises(ShapeError):
            rawio.pack_xtrans(np.zeros((512, 512)))
        assert rawio.pack_xtrans(np.zeros((510, 510))).shape == (9, 170, 170)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from([rawio.BAYER, rawio.XTRANS]))
def test_pack_unpack_inverse_property(th, tw, cfa):
    tile = 2 if cfa == rawio.BAYER else 6
    rng = np.random.default_rng(th * 100 + tw)
    mosaic = rng.uniform(0, 1, (th * tile, tw * tile))
    np.testing.assert_array_equal(rawio.unpack(rawio.pack(mosaic, cfa), cfa), mosaic)


class TestPgmPpm:
    def test_hand_encoded_big_endian(self, tmp_path):
        # 2x2, values chosen so byte order mistakes are visible
        payload = b"P5\n2 2\n65535\n" + bytes([0x01, 0x02, 0xFF, 0xFE, 0x00, 0x10, 0x10, 0x00])
        path = tmp_path / "g.pgm"
        path.write_bytes(payload)
        img = rawio.read_pgm16(path)
        np.testing.assert_array_equal(img, [[0x0102, 0xFFFE], [0x0010, 0x1000]])

    def test_single_pixel_normalization(self, tmp_path):
        path = tmp_path / "one.pgm"
        rawio.write_pgm16(path, np.array([[65535]], dtype=np.uint16))
        dn = rawio.read_pgm16(path)
        assert (dn.astype(np.float64) - 0) / 65535 == pytest.approx(1.0)

    def test_pgm_byte_roundtrip(self, rng, tmp_path):
        img = rng.integers(0, 65536, (16, 16)).astype(np.uint16)
        p1 = tmp_path / "a.pgm"
        p2 = tmp_path / "b.pgm"
        rawio.write_pgm16(p1, img)
        rawio.write_pgm16(p2, rawio.read_pgm16(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_ppm_byte_roundtrip(self, rng, tmp_path):
        img = rng.integers(0, 256, (3, 5, 7)).astype(np.uint8)
        p1 = tmp_path / "a.ppm"
        p2 = tmp_path / "b.ppm"
        rawio.write_ppm8(p1, img)
        rawio.write_ppm8(p2, rawio.read_ppm8(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_with_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n1 1\n65535\n\x00\xff")
        assert rawio.read_pgm16(path)[0, 0] == 0x00FF

    def test_malformed_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n1 1\n65535\n\x00\x00")
        with pytest.raises(DataError, match="expected P5"):
            rawio.read_pgm16(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n\x00\x01\x02")
        with pytest.raises(DataError, match="truncated"):
            rawio.read_pgm16(path)

    def test_wrong_maxval(self, tmp_path):
        path = tmp_path / "8bit.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(DataError, match="maxval"):
            rawio.read_pgm16(path)


class TestSynthPair:
    def test_ratio_one_zero_noise_is_identity(self):
        pair = rawio.synth_pair(0, (32, 32), ratio=1.0, noise=rawio.NoiseModel(0.0, 0.0))
        np.testing.assert_array_equal(pair.noisy.data, pair.gt_raw.data)

    def test_same_seed_bit_identical(self):
        a = rawio.synth_pair(7, (32, 32), ratio=100.0)
        b = rawio.synth_pair(7, (32, 32), ratio=100.0)
        assert np.array_equal(a.noisy.data, b.noisy.data)
        assert np.array_equal(a.gt_raw.data, b.gt_raw.data)
        assert np.array_equal(a.gt_srgb, b.gt_srgb)

    def test_different_seed_differs(self):
        a = rawio.synth_pair(7, (32, 32))
        b = rawio.synth_pair(8, (32, 32))
        assert not np.array_equal(a.gt_raw.data, b.gt_raw.data)

    def test_noisy_mean_matches_declared_model(self):
        # moderate ratio keeps clipping negligible, so E[noisy] = E[gt]/ratio
        ratio = 4.0
        pair = rawio.synth_pair(3, (64, 64), ratio=ratio)
        sigma = rawio.NoiseModel().sigma(pair.gt_raw.data / ratio)
        standard_error = np.sqrt((sigma**2).sum()) / sigma.size
        gap = abs(pair.noisy.data.mean() - pair.gt_raw.data.mean() / ratio)
        assert gap < 3 * standard_error

    def test_values_in_unit_interval(self):
        pair = rawio.synth_pair(11, (32, 32), ratio=100.0)
        for arr in (pair.noisy.data, pair.gt_raw.data, pair.gt_srgb):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_xtrans_pair_shapes(self):
        pair = rawio.synth_pair(1, (36, 36), cfa=rawio.XTRANS, ratio=50.0)
        assert pair.noisy.data.shape == (9, 12, 12)
        assert pair.gt_srgb.shape == (3, 36, 36)

    def test_incompatible_size_errors(self):
        with pytest.raises(ShapeError):
            rawio.synth_pair(0, (33, 32))


class TestDatasetLayout:
    def test_save_load_roundtrip(self, tmp_path):
        pair = rawio.synth_pair(5, (32, 32), ratio=100.0)
        rawio.save_pair(tmp_path, "train", "0001", pair)
        expected = {"0001_noisy.pgm", "0001_gt.pgm", "0001_gt.ppm", "0001_meta.json"}
        assert {p.name for p in (tmp_path / "train").iterdir()} == expected
        loaded = rawio.load_pair(tmp_path, "train", "0001")
        assert loaded.noisy.cfa == rawio.BAYER
        assert loaded.noisy.ratio == 100.0
        # quantization bound: half a DN step
        step = 1.0 / (pair.noisy.white_level - pair.noisy.black_level)
        assert np.abs(loaded.noisy.data - pair.noisy.data).max() <= step / 2 + 1e-12
        assert np.abs(loaded.gt_srgb - pair.gt_srgb).max() <= 1 / 255 / 2 + 1e-12

    def test_list_ids_sorted(self, tmp_path):
        pair = rawio.synth_pair(5, (16, 16), ratio=10.0)
        for sid in ("b", "a", "c"):
            rawio.save_pair(tmp_path, "test", sid, pair)
        assert rawio.list_ids(tmp_path, "test") == ["a", "b", "c"]

    def test_missing_split_errors(self, tmp_path):
        with pytest.raises(DataError):
            rawio.list_ids(tmp_path, "nope")

    def test_simple_isp_deterministic_and_bounded(self, rng):
        mosaic = rng.uniform(0, 0.6, (24, 24))
        a = rawio.simple_isp(mosaic, rawio.BAYER)
        b = rawio.simple_isp(mosaic, rawio.BAYER)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (3, 24, 24)
        assert a.min() >= 0 and a.max() <= 1
