"""IDX parsing, noise mixing, batching, image export."""

import struct

import numpy as np
import pytest

from bsdegen.data import (
    IdxFormatError,
    ImageDataset,
    batch_iter,
    downsample_mean,
    export_pgm,
    noisy_mix,
    parse_idx_images,
    serialize_idx,
    subset,
)
from bsdegen.rng import Rng
from synthdata import synthetic_images


def _idx_bytes(count, rows, cols, payload, magic=0x803):
    return struct.pack(">IIII", magic, count, rows, cols) + bytes(payload)


class TestParseIdx:
    def test_hand_built_file(self):
        ds = parse_idx_images(_idx_bytes(1, 2, 2, [0, 128, 255, 64]))
        assert (ds.count, ds.rows, ds.cols) == (1, 2, 2)
        np.testing.assert_allclose(
            ds.pixels[0], [0.0, 128 / 255, 1.0, 64 / 255], rtol=1e-12
        )
        assert abs(ds.pixels[0][1] - 0.501961) < 1e-6
        assert abs(ds.pixels[0][3] - 0.250980) < 1e-6

    def test_label_magic_rejected(self):
        with pytest.raises(IdxFormatError, match="magic"):
            parse_idx_images(_idx_bytes(1, 2, 2, [0, 0, 0, 0], magic=0x801))

    def test_length_mismatch_rejected(self):
        with pytest.raises(IdxFormatError, match="length"):
            parse_idx_images(_idx_bytes(2, 2, 2, [0, 0, 0, 0]))

    def test_round_trip_byte_exact(self):
        ds = synthetic_images(20, 9, 7, seed=1)
        blob = serialize_idx(ds)
        ds2 = parse_idx_images(blob)
        np.testing.assert_array_equal(ds.pixels, ds2.pixels)
        assert serialize_idx(ds2) == blob

    def test_full_size_file_shape(self):
        """Standard-corpus geometry: 60000 x 28 x 28 with u8 pixels."""
        count, rows, cols = 60_000, 28, 28
        payload = np.zeros(count * rows * cols, dtype=np.uint8)
        payload[:256] = np.arange(256, dtype=np.uint8)
        ds = parse_idx_images(_idx_bytes(count, rows, cols, payload.tobytes()))
        assert (ds.count, ds.rows, ds.cols) == (count, rows, cols)
        assert ds.pixels[0, 255] == 1.0


class TestNoisyMix:
    def test_alpha_one_is_identity(self):
        img = synthetic_images(3, 6, 6, seed=2).pixels
        np.testing.assert_array_equal(noisy_mix(img, 1.0, Rng(1)), img)

    def test_variance_scaling(self):
        out = noisy_mix(np.zeros((100, 1000)), 0.5, Rng(4))
        assert abs(out.mean()) < 0.01
        assert abs(out.var() / 0.25 - 1.0) < 0.02

    def test_seed_determinism(self):
        img = np.full((4, 5), 0.3)
        np.testing.assert_array_equal(noisy_mix(img, 0.7, Rng(9)), noisy_mix(img, 0.7, Rng(9)))

    def test_alpha_range_enforced(self):
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError, match="alpha"):
                noisy_mix(np.zeros((2, 2)), bad, Rng(0))


class TestBatchIter:
    def _ds(self, count):
        return ImageDataset(count, 1, 2, np.zeros((count, 2)))

    def test_drop_last_rule(self):
        batches = []
        it = batch_iter(self._ds(10), 4, Rng(3))
        for _ in range(2):
            batches.append(next(it))
        seen = np.concatenate(batches)
        assert len(seen) == 8
        assert len(np.unique(seen)) == 8

    def test_exact_epoch_coverage(self):
        count, bs = 4 * 16, 16
        it = batch_iter(self._ds(count), bs, Rng(5))
        seen = np.concatenate([next(it) for _ in range(count // bs)])
        assert sorted(seen.tolist()) == list(range(count))

    def test_same_seed_same_order(self):
        a = np.concatenate([next(batch_iter(self._ds(12), 4, Rng(8))) for _ in range(1)])
        b = np.concatenate([next(batch_iter(self._ds(12), 4, Rng(8))) for _ in range(1)])
        np.testing.assert_array_equal(a, b)

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValueError, match="batch"):
            next(batch_iter(self._ds(4), 5, Rng(0)))


class TestExportPgm:
    def test_hand_quantization(self):
        blob = export_pgm(np.array([0.0, 0.5, 1.0, 1.2]), 2, 2)
        assert blob == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 255])

    def test_all_zero(self):
        blob = export_pgm(np.zeros(6), 2, 3)
        assert blob.endswith(bytes(6))

    def test_negative_clamps_to_zero(self):
        blob = export_pgm(np.array([-0.3]), 1, 1)
        assert blob[-1] == 0

    def test_half_rounds_away_from_zero(self):
        # 0.4/255 scaled: 102.0 exactly stays 102; 102.5 must go up
        blob = export_pgm(np.array([102.5 / 255.0, 101.5 / 255.0]), 1, 2)
        assert list(blob[-2:]) == [103, 102]

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            export_pgm(np.array([np.nan]), 1, 1)


class TestDownsample:
    def test_preserves_mean_and_range(self):
        ds = synthetic_images(10, 28, 28, seed=6)
        small = downsample_mean(ds, 8, 8)
        assert (small.rows, small.cols) == (8, 8)
        np.testing.assert_allclose(
            small.pixels.mean(axis=1), ds.pixels.mean(axis=1), rtol=1e-12
        )
        assert small.pixels.min() >= 0.0 and small.pixels.max() <= 1.0

    def test_constant_image_stays_constant(self):
        ds = ImageDataset(1, 28, 28, np.full((1, 784), 0.4))
        small = downsample_mean(ds, 8, 8)
        np.testing.assert_allclose(small.pixels, 0.4, rtol=1e-12)

    def test_integer_factor_matches_block_mean(self):
        ds = synthetic_images(5, 8, 8, seed=7)
        small = downsample_mean(ds, 4, 4)
        imgs = ds.pixels.reshape(5, 8, 8)
        want = imgs.reshape(5, 4, 2, 4, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(small.pixels.reshape(5, 4, 4), want, rtol=1e-12)


class TestSubset:
    def test_takes_prefix(self):
        ds = synthetic_images(10, 5, 5, seed=8)
        sub = subset(ds, 4)
        assert sub.count == 4
        np.testing.assert_array_equal(sub.pixels, ds.pixels[:4])

    def test_bounds_checked(self):
        ds = synthetic_images(3, 4, 4, seed=9)
        with pytest.raises(ValueError):
            subset(ds, 0)
        with pytest.raises(ValueError):
            subset(ds, 4)
