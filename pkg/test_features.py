"""
Tests for the filter-bank extractor and channel means.
"""

import numpy as np
import pytest

from src.core import ImageRaster, load_dataset
from src.errors import DatasetError, ValidationError
from src.features import (
    FeatureMap,
    FilterBank,
    FilterBankConfig,
    build_filter_bank,
    channel_means,
    dataset_channel_means,
    extract,
)
from conftest import write_images


class TestBuildFilterBank:

    def test_same_seed_same_checksum(self):
        assert build_filter_bank(7).checksum() == build_filter_bank(7).checksum()

    def test_different_seed_different_checksum(self):
        assert build_filter_bank(7).checksum() != build_filter_bank(8).checksum()

    def test_default_architecture(self):
        bank = build_filter_bank(0)
        assert [k.shape for k in bank.kernels] == [(32, 3, 3, 3), (64, 32, 3, 3)]
        assert bank.n_channels == 64
        assert bank.stride == 2

    def test_weights_in_range(self):
        for kernel in build_filter_bank(3).kernels:
            assert np.all(np.abs(kernel) <= 1.0 / 9.0)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            build_filter_bank(0, FilterBankConfig(kernel_size=4))

    def test_zero_channels_rejected(self):
        with pytest.raises(ValidationError):
            build_filter_bank(0, FilterBankConfig(layers=2, channels=(32, 0)))

    def test_layer_count_must_match(self):
        with pytest.raises(ValidationError):
            FilterBankConfig(layers=3, channels=(8, 8))


class TestExtract:

    def test_zero_image(self):
        bank = build_filter_bank(0)
        fm = extract(bank, ImageRaster(np.zeros((16, 16, 3), np.uint8)))
        assert np.all(fm.values == 0)

    def test_identity_kernel(self, rng):
        kernel = np.zeros((1, 3, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        bank = FilterBank(kernels=(kernel,), stride=1)
        image = ImageRaster(rng.integers(0, 256, size=(6, 7, 3), dtype=np.uint8))
        fm = extract(bank, image)
        expected = image.pixels[1:-1, 1:-1, 0] / 255.0
        np.testing.assert_allclose(fm.values[0], expected, rtol=0, atol=1e-15)

    def test_single_cell_mean(self, rng):
        kernel = np.full((1, 3, 3, 3), 1.0 / 9.0)
        bank = FilterBank(kernels=(kernel,), stride=1)
        image = ImageRaster(rng.integers(0, 256, size=(3, 3, 3), dtype=np.uint8))
        fm = extract(bank, image)
        assert fm.values.shape == (1, 1, 1)
        expected = (image.pixels.astype(np.float64) / 255.0).sum() / 9.0
        assert fm.values[0, 0, 0] == pytest.approx(expected, abs=1e-12)

    def test_output_shape(self):
        bank = build_filter_bank(0)
        fm = extract(bank, ImageRaster(np.full((33, 20, 3), 128, np.uint8)))
        assert (fm.height, fm.width) == bank.output_shape(33, 20) == (7, 4)

    def test_too_small(self):
        bank = build_filter_bank(0)
        with pytest.raises(ValidationError, match="receptive field"):
            extract(bank, ImageRaster(np.zeros((4, 4, 3), np.uint8)))

    def test_non_negative(self, rng):
        bank = build_filter_bank(5)
        fm = extract(bank, ImageRaster(rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)))
        assert np.all(fm.values >= 0)

    def test_constant_image_first_layer_flat(self):
        bank = build_filter_bank(1)
        single = FilterBank(kernels=bank.kernels[:1], stride=bank.stride)
        fm = extract(single, ImageRaster(np.full((15, 15, 3), 90, np.uint8)))
        for channel in fm.values:
            assert np.all(channel == channel[0, 0])


class TestChannelMeans:

    def test_constant_channel(self):
        assert channel_means(FeatureMap(np.full((1, 3, 3), 2.0))).tolist() == [2.0]

    def test_small_grid(self):
        assert channel_means(FeatureMap(np.array([[[0.0, 1.0], [2.0, 3.0]]]))).tolist() == [1.5]

    def test_zero_map(self):
        assert channel_means(FeatureMap(np.zeros((4, 2, 2)))).tolist() == [0.0] * 4

    def test_linear(self, rng):
        values = rng.random((5, 4, 6))
        for alpha in (0.0, 0.5, 3.0):
            scaled = channel_means(FeatureMap(alpha * values))
            np.testing.assert_allclose(scaled, alpha * channel_means(FeatureMap(values)), rtol=1e-12)

    def test_feature_map_rejects_negative(self):
        with pytest.raises(ValidationError):
            FeatureMap(np.array([[[-1.0]]]))


class TestDatasetChannelMeans:

    def test_identical_images_identical_rows(self, tmp_path, small_images):
        root = write_images(tmp_path / 'same', [small_images[0]] * 3)
        matrix = dataset_channel_means(build_filter_bank(0), load_dataset(root))
        assert matrix.n_images == 3
        assert np.array_equal(matrix.values[0], matrix.values[1])
        assert np.array_equal(matrix.values[1], matrix.values[2])

    def test_deterministic_across_jobs(self, source_dir):
        bank = build_filter_bank(0)
        handle = load_dataset(source_dir)
        once = dataset_channel_means(bank, handle, jobs=1)
        again = dataset_channel_means(build_filter_bank(0), handle, jobs=4)
        assert once == again
        assert once.n_images == len(handle)

    def test_tag_records_root_and_seed(self, source_dir):
        matrix = dataset_channel_means(build_filter_bank(11), load_dataset(source_dir))
        assert str(source_dir) in matrix.source_tag
        assert "seed=11" in matrix.source_tag

    def test_failing_entry_named(self, tmp_path, small_images):
        root = write_images(tmp_path / 'bad', small_images[:2])
        (root / 'broken.png').write_bytes(b'\x89PNG\r\n\x1a\n garbage')
        with pytest.raises(DatasetError, match="broken"):
            dataset_channel_means(build_filter_bank(0), load_dataset(root))

    def test_row_permutation_follows_names(self, tmp_path, small_images):
        forward = write_images(tmp_path / 'fwd', small_images[:3])
        reverse = tmp_path / 'rev'
        write_images(reverse, list(reversed(small_images[:3])))
        bank = build_filter_bank(0)
        a = dataset_channel_means(bank, load_dataset(forward)).values
        b = dataset_channel_means(bank, load_dataset(reverse)).values
        assert np.array_equal(a, b[::-1])
