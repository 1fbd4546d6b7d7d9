"""
Data service for splitting, augmentation and batch assembly
Coordinates between the dataset repository and the training/evaluation services
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from models.dataset import SPLITS, Batch, DatasetIndex, split_counts
from repositories.dataset_repository import DatasetRepositoryInterface
from utils.errors import IngestionError
from utils.run_logger import get_run_logger

logger = logging.getLogger(__name__)

MAX_ROTATION_DEGREES = 10.0
BRIGHTNESS_RANGE = (0.7, 1.3)
FLIP_PROBABILITY = 0.5


def stratified_split(index: DatasetIndex, seed: int) -> DatasetIndex:
    """
    Per class (in class-id order) shuffle with one seeded generator, then apply the floor rule.

    :param index: populated dataset index
    :param seed: split seed
    :return: a copy of the index with split_assignment filled in
    """
    rng = np.random.default_rng(seed)
    assignment: List[Optional[str]] = [None] * len(index.samples)
    by_class: List[List[int]] = [[] for _ in index.classes]
    for position, sample in enumerate(index.samples):
        by_class[sample.class_id].append(position)

    for class_id, positions in enumerate(by_class):
        n = len(positions)
        if n < 3:
            logger.warning("Class '%s' has only %d samples; some splits will be empty", index.classes[class_id], n)
        order = rng.permutation(n)
        train, val, _ = split_counts(n)
        for rank, offset in enumerate(order):
            if rank < train:
                tag = 'train'
            elif rank < train + val:
                tag = 'val'
            else:
                tag = 'test'
            assignment[positions[offset]] = tag

    return replace(index, split_assignment=assignment, seed=seed)


@dataclass(frozen=True)
class AugmentationDraw:
    """One sample's random augmentation decisions."""
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0
    brightness: float = 1.0


IDENTITY_DRAW = AugmentationDraw()


def draw_augmentation(rng: np.random.Generator) -> AugmentationDraw:
    # fixed draw order keeps the stream aligned regardless of outcomes
    hflip = rng.random() < FLIP_PROBABILITY
    vflip = rng.random() < FLIP_PROBABILITY
    angle = float(rng.uniform(-MAX_ROTATION_DEGREES, MAX_ROTATION_DEGREES))
    brightness = float(rng.uniform(*BRIGHTNESS_RANGE))
    return AugmentationDraw(hflip=bool(hflip), vflip=bool(vflip), angle=angle, brightness=brightness)


def apply_augmentation(image: np.ndarray, draw: AugmentationDraw) -> np.ndarray:
    """
    Horizontal flip, vertical flip, rotation (bilinear, zero fill), brightness scale, clamp to [0, 1].

    :param image: [3, H, W] array in [0, 1]
    """
    out = image
    if draw.hflip:
        out = out[:, :, ::-1]
    if draw.vflip:
        out = out[:, ::-1, :]
    if draw.angle != 0.0:
        out = ndimage.rotate(out, draw.angle, axes=(2, 1), reshape=False, order=1, mode='constant', cval=0.0)
    if draw.brightness != 1.0:
        out = out * draw.brightness
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def augment(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return apply_augmentation(image, draw_augmentation(rng))


def normalize(image: np.ndarray, mean: Optional[Sequence[float]], std: Optional[Sequence[float]]) -> np.ndarray:
    if mean is None or std is None:
        return image
    m = np.asarray(mean, dtype=image.dtype)[:, None, None]
    s = np.asarray(std, dtype=image.dtype)[:, None, None]
    return (image - m) / s


def batch_order(count: int, batch_size: int, shuffle: bool, shuffle_seed: int, epoch: int) -> List[np.ndarray]:
    """Positions of each batch; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(count) if shuffle else np.arange(count)
    return [order[start:start + batch_size] for start in range(0, count, batch_size)]


class DataService:
    """
    Service class handling dataset indexing, splitting and batching
    Decoding and augmentation of distinct samples run on a thread pool; batch order never depends on it
    """

    def __init__(self, dataset_repository: DatasetRepositoryInterface, workers: int = 1):
        """
        :param dataset_repository: Repository instance for image folder access
        :param workers: decode/augment threads per batch
        """
        self.dataset_repository = dataset_repository
        self.workers = max(1, int(workers))

    def index_dataset(self, root: str) -> DatasetIndex:
        index = self.dataset_repository.index(root)
        logger.info("Indexed %d images in %d classes under %s", len(index.samples), index.num_classes, root)
        return index

    def split(self, index: DatasetIndex, seed: int) -> DatasetIndex:
        result = stratified_split(index, seed)
        get_run_logger().log_split(index.root, result.counts_table(), seed)
        return result

    def load_and_preprocess(self, path: str, size: int = 256) -> np.ndarray:
        return self.dataset_repository.load_image(path, (size, size))

    def write_manifest(self, index: DatasetIndex, path: str) -> None:
        self.dataset_repository.write_manifest(index, path)

    def _load_sample(self, path: str, image_size: int, rng: Optional[np.random.Generator],
                     norm: Tuple[Optional[Sequence[float]], Optional[Sequence[float]]]) -> np.ndarray:
        image = self.load_and_preprocess(path, image_size)
        if rng is not None:
            image = augment(image, rng)
        return normalize(image, *norm)

    def make_batches(
        self,
        index: DatasetIndex,
        split: str,
        batch_size: int,
        shuffle_seed: int,
        epoch: int = 0,
        image_size: int = 256,
        augment_train: bool = True,
        norm: Tuple[Optional[Sequence[float]], Optional[Sequence[float]]] = (None, None),
    ) -> Iterator[Batch]:
        """
        Yield batches of one split.

        The train split is reshuffled per epoch from (shuffle_seed, epoch) and augmented with a
        per-sample generator seeded from (shuffle_seed, epoch, sample position). Val/test keep index order.
        """
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got '{split}'")
        if not index.is_split():
            raise IngestionError(index.root, "dataset index has no split assignment")
        positions = [i for i, tag in enumerate(index.split_assignment) if tag == split]
        if not positions:
            raise IngestionError(index.root, f"split '{split}' is empty")

        training = split == 'train'
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for chunk in batch_order(len(positions), batch_size, training, shuffle_seed, epoch):
                chosen = [positions[i] for i in chunk]
                paths = [index.samples[p].path for p in chosen]
                rngs = [
                    np.random.default_rng([shuffle_seed, epoch, p]) if training and augment_train else None
                    for p in chosen
                ]
                images = list(pool.map(lambda args: self._load_sample(args[0], image_size, args[1], norm),
                                       zip(paths, rngs)))
                labels = np.array([index.samples[p].class_id for p in chosen], dtype=np.int64)
                yield Batch(images=np.stack(images).astype(np.float32), labels=labels, paths=paths)
