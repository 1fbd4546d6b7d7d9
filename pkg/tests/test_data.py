#!/usr/bin/env python3
"""
Tests for dataset ingestion, stratified splitting, augmentation and batching
"""
import os

import numpy as np
import pytest
from PIL import Image

from models.dataset import DATASET_PROFILES, DatasetIndex, Sample, split_counts
from repositories.dataset_repository import FolderDatasetRepository
from services.data_service import (
    IDENTITY_DRAW,
    AugmentationDraw,
    DataService,
    apply_augmentation,
    augment,
    batch_order,
    draw_augmentation,
    normalize,
    stratified_split,
)
from tests.conftest import write_image_folder
from utils.errors import IngestionError


@pytest.fixture
def repository():
    return FolderDatasetRepository()


@pytest.fixture
def data_service(repository):
    return DataService(repository, workers=1)


@pytest.fixture
def dataset_root(tmp_path):
    return write_image_folder(tmp_path / 'leaves', {'healthy': 12, 'rust': 10, 'scab': 7})


def synthetic_index(class_sizes):
    samples = [Sample(path=f"/data/c{c}/img_{i:04d}.png", class_id=c)
               for c, size in enumerate(class_sizes) for i in range(size)]
    return DatasetIndex(root='/data', classes=[f"c{c}" for c in range(len(class_sizes))], samples=samples)


class TestSplitRule:
    """Floor rule against the published class tables"""

    @pytest.mark.parametrize('profile', sorted(DATASET_PROFILES))
    def test_profile_cells(self, profile):
        for train, val, test, total in DATASET_PROFILES[profile].counts:
            assert split_counts(total) == (train, val, test)

    @pytest.mark.parametrize('profile, ratio', [('apple', 5.98), ('corn', 2.32), ('potato', 6.58)])
    def test_imbalance_ratios(self, profile, ratio):
        totals = DATASET_PROFILES[profile].class_totals()
        assert round(max(totals) / min(totals), 2) == ratio

    def test_profile_totals_are_consistent(self):
        for profile in DATASET_PROFILES.values():
            train, val, test, total = profile.totals()
            assert train + val + test == total

    @pytest.mark.parametrize('n, expected', [(10, (7, 1, 2)), (0, (0, 0, 0)), (1, (0, 0, 1)), (3, (2, 0, 1)),
                                             (100, (70, 15, 15))])
    def test_small_counts(self, n, expected):
        assert split_counts(n) == expected

    def test_counts_always_sum(self):
        for n in range(0, 500):
            assert sum(split_counts(n)) == n


class TestStratifiedSplit:
    """Per-class shuffling and assignment"""

    def test_every_sample_assigned_once(self):
        index = stratified_split(synthetic_index([630, 621, 275, 1645]), seed=42)
        assert index.is_split()
        assert len(index.split_assignment) == len(index.samples)
        table = index.counts_table()
        for name, total in zip(index.classes, [630, 621, 275, 1645]):
            row = table[name]
            assert (row['train'], row['val'], row['test']) == split_counts(total)
            assert row['total'] == total

    def test_same_seed_same_split(self):
        index = synthetic_index([40, 25])
        assert stratified_split(index, 5).split_assignment == stratified_split(index, 5).split_assignment

    def test_different_seed_different_split(self):
        index = synthetic_index([40, 25])
        assert stratified_split(index, 5).split_assignment != stratified_split(index, 6).split_assignment

    def test_input_index_is_not_modified(self):
        index = synthetic_index([10, 10])
        stratified_split(index, 1)
        assert not index.is_split()

    def test_tiny_class_warns(self, caplog):
        stratified_split(synthetic_index([2, 10]), 0)
        assert "only 2 samples" in caplog.text


class TestAugmentation:
    """Flips, rotation, brightness and clamping"""

    def test_identity_draw(self, rng):
        image = rng.uniform(size=(3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(apply_augmentation(image, IDENTITY_DRAW), image)

    def test_double_flip_is_identity(self, rng):
        image = rng.uniform(size=(3, 8, 6)).astype(np.float32)
        flip = AugmentationDraw(hflip=True, vflip=True)
        np.testing.assert_array_equal(apply_augmentation(apply_augmentation(image, flip), flip), image)

    def test_hflip_reverses_columns(self):
        image = np.arange(12, dtype=np.float32).reshape(1, 3, 4) / 12.0
        flipped = apply_augmentation(image, AugmentationDraw(hflip=True))
        np.testing.assert_array_equal(flipped[0, 0], image[0, 0, ::-1])

    def test_brightness_is_clamped(self):
        image = np.full((3, 4, 4), 0.9, dtype=np.float32)
        np.testing.assert_array_equal(apply_augmentation(image, AugmentationDraw(brightness=1.3)), 1.0)

    def test_rotation_keeps_shape_and_range(self, rng):
        image = rng.uniform(size=(3, 16, 16)).astype(np.float32)
        rotated = apply_augmentation(image, AugmentationDraw(angle=9.5))
        assert rotated.shape == image.shape and rotated.dtype == np.float32
        assert rotated.min() >= 0.0 and rotated.max() <= 1.0

    def test_draws_stay_in_range(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            draw = draw_augmentation(rng)
            assert -10.0 <= draw.angle <= 10.0
            assert 0.7 <= draw.brightness <= 1.3

    def test_augment_is_deterministic_per_seed(self, rng):
        image = rng.uniform(size=(3, 12, 12)).astype(np.float32)
        first = augment(image, np.random.default_rng([3, 0, 5]))
        second = augment(image, np.random.default_rng([3, 0, 5]))
        np.testing.assert_array_equal(first, second)

    def test_normalize(self):
        image = np.full((3, 2, 2), 0.5, dtype=np.float32)
        out = normalize(image, (0.5, 0.25, 0.0), (0.5, 0.25, 1.0))
        np.testing.assert_allclose(out[:, 0, 0], [0.0, 1.0, 0.5])
        assert normalize(image, None, None) is image


class TestBatchOrder:
    """Batch partitioning and per-epoch shuffling"""

    def test_apple_train_split_batches(self):
        batches = batch_order(2218, 32, shuffle=True, shuffle_seed=42, epoch=0)
        assert len(batches) == 70
        assert len(batches[-1]) == 10
        assert sorted(np.concatenate(batches).tolist()) == list(range(2218))

    def test_unshuffled_keeps_order(self):
        batches = batch_order(5, 2, shuffle=False, shuffle_seed=0, epoch=3)
        assert [b.tolist() for b in batches] == [[0, 1], [2, 3], [4]]

    def test_epochs_reshuffle(self):
        first = np.concatenate(batch_order(50, 8, True, 42, 0))
        second = np.concatenate(batch_order(50, 8, True, 42, 1))
        assert not np.array_equal(first, second)
        np.testing.assert_array_equal(first, np.concatenate(batch_order(50, 8, True, 42, 0)))

    def test_invalid_batch_size(self):
        with pytest.raises(ValueError):
            batch_order(10, 0, False, 0, 0)


class TestIngestion:
    """Image-folder indexing and decoding"""

    def test_index_orders_classes_and_files(self, repository, dataset_root):
        index = repository.index(dataset_root)
        assert index.classes == ['healthy', 'rust', 'scab']
        assert index.class_sizes() == [12, 10, 7]
        paths = [s.path for s in index.samples if s.class_id == 0]
        assert paths == sorted(paths)

    def test_single_class_rejected(self, repository, tmp_path):
        root = write_image_folder(tmp_path / 'one', {'healthy': 3})
        with pytest.raises(IngestionError, match='at least 2'):
            repository.index(root)

    def test_empty_class_rejected(self, repository, tmp_path):
        root = write_image_folder(tmp_path / 'data', {'healthy': 3, 'rust': 2})
        os.makedirs(os.path.join(root, 'scab'))
        with pytest.raises(IngestionError, match='scab'):
            repository.index(root)

    def test_missing_root(self, repository, tmp_path):
        with pytest.raises(IngestionError):
            repository.index(str(tmp_path / 'nowhere'))

    def test_corrupt_file_skipped(self, repository, dataset_root, caplog):
        with open(os.path.join(dataset_root, 'rust', 'broken.png'), 'wb') as fh:
            fh.write(b'this is not an image')
        with open(os.path.join(dataset_root, 'rust', 'notes.txt'), 'w') as fh:
            fh.write('ignored')
        index = repository.index(dataset_root)
        assert index.class_sizes() == [12, 10, 7]
        assert 'broken.png' in caplog.text

    def test_grayscale_becomes_three_equal_channels(self, repository, tmp_path):
        path = str(tmp_path / 'gray.png')
        Image.fromarray(np.arange(64, dtype=np.uint8).reshape(8, 8)).save(path)
        image = repository.load_image(path, (8, 8))
        assert image.shape == (3, 8, 8)
        np.testing.assert_array_equal(image[0], image[1])
        np.testing.assert_array_equal(image[1], image[2])

    def test_exact_size_is_not_resampled(self, repository, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
        path = str(tmp_path / 'exact.png')
        Image.fromarray(pixels).save(path)
        image = repository.load_image(path, (16, 16))
        np.testing.assert_allclose(image, pixels.transpose(2, 0, 1) / 255.0, atol=1e-6)

    def test_resize_to_model_input(self, repository, tmp_path):
        path = str(tmp_path / 'wide.jpg')
        Image.new('RGB', (500, 375), color=(200, 40, 10)).save(path)
        image = repository.load_image(path, (256, 256))
        assert image.shape == (3, 256, 256)
        assert image.dtype == np.float32
        assert 0.0 <= image.min() and image.max() <= 1.0

    def test_undecodable_image_on_load(self, repository, tmp_path):
        path = tmp_path / 'bad.png'
        path.write_bytes(b'garbage')
        with pytest.raises(IngestionError):
            repository.load_image(str(path), (8, 8))

    def test_manifest_round_trip(self, repository, dataset_root, tmp_path):
        index = stratified_split(repository.index(dataset_root), 42)
        manifest = str(tmp_path / 'out' / 'split_manifest.csv')
        repository.write_manifest(index, manifest)
        restored = repository.read_manifest(manifest)
        assert restored.classes == index.classes
        assert [s.path for s in restored.samples] == [s.path for s in index.samples]
        assert restored.split_assignment == index.split_assignment
        assert os.path.samefile(restored.root, dataset_root)


class TestBatches:
    """Batch assembly through the data service"""

    @pytest.fixture
    def split_index(self, data_service, dataset_root):
        return data_service.split(data_service.index_dataset(dataset_root), 42)

    def test_batch_shapes(self, data_service, split_index):
        batches = list(data_service.make_batches(split_index, 'train', 4, shuffle_seed=42, image_size=16))
        assert sum(len(b) for b in batches) == len(split_index.split_samples('train'))
        assert batches[0].images.shape == (4, 3, 16, 16)
        assert batches[0].images.dtype == np.float32

    def test_eval_batches_identical_across_epochs(self, data_service, split_index):
        first = list(data_service.make_batches(split_index, 'val', 2, 42, epoch=0, image_size=16))
        later = list(data_service.make_batches(split_index, 'val', 2, 42, epoch=5, image_size=16))
        assert [b.paths for b in first] == [b.paths for b in later]
        for a, b in zip(first, later):
            np.testing.assert_array_equal(a.images, b.images)

    def test_train_batches_independent_of_worker_count(self, repository, split_index):
        single = list(DataService(repository, workers=1).make_batches(split_index, 'train', 5, 42, epoch=1,
                                                                     image_size=16))
        pooled = list(DataService(repository, workers=4).make_batches(split_index, 'train', 5, 42, epoch=1,
                                                                     image_size=16))
        for a, b in zip(single, pooled):
            assert a.paths == b.paths
            np.testing.assert_array_equal(a.images, b.images)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_unsplit_index_rejected(self, data_service, dataset_root):
        index = data_service.index_dataset(dataset_root)
        with pytest.raises(IngestionError):
            next(data_service.make_batches(index, 'train', 4, 42))

    def test_empty_split_rejected(self, data_service):
        index = stratified_split(synthetic_index([1, 1]), 0)
        with pytest.raises(IngestionError, match="'train' is empty"):
            next(data_service.make_batches(index, 'train', 4, 0))
