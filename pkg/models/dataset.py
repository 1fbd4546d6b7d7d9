"""
Dataset index, batch and split-profile models
Data representation only; ingestion lives in the repository, splitting in the data service
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

SPLITS = ('train', 'val', 'test')
TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.15


def split_counts(n: int) -> Tuple[int, int, int]:
    """Floor rule: train = floor(0.70 n), val = floor(0.15 n), test = remainder."""
    # integer arithmetic avoids 0.7 * n landing just below an integer
    train = (n * 70) // 100
    val = (n * 15) // 100
    return train, val, n - train - val


@dataclass
class Sample:
    path: str
    class_id: int


@dataclass
class DatasetIndex:
    """
    Label-tagged image paths with an optional split assignment.
    class_id is the position of the class directory in lexicographic order.
    """
    root: str
    classes: List[str]
    samples: List[Sample]
    split_assignment: List[Optional[str]] = field(default_factory=list)
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.split_assignment:
            self.split_assignment = [None] * len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_sizes(self) -> List[int]:
        sizes = [0] * self.num_classes
        for sample in self.samples:
            sizes[sample.class_id] += 1
        return sizes

    def is_split(self) -> bool:
        return all(tag is not None for tag in self.split_assignment)

    def split_samples(self, split: str) -> List[Sample]:
        return [s for s, tag in zip(self.samples, self.split_assignment) if tag == split]

    def counts_table(self) -> Dict[str, Dict[str, int]]:
        """Per-class train/val/test/total counts (the layout of the dataset distribution tables)."""
        table = {name: {'train': 0, 'val': 0, 'test': 0, 'total': 0} for name in self.classes}
        for sample, tag in zip(self.samples, self.split_assignment):
            row = table[self.classes[sample.class_id]]
            row['total'] += 1
            if tag is not None:
                row[tag] += 1
        return table

    def imbalance_ratio(self) -> float:
        sizes = [s for s in self.class_sizes() if s > 0]
        return max(sizes) / min(sizes) if sizes else math.nan


@dataclass
class Batch:
    """images: [B,3,H,W] float array in [0,1] (or standardized); labels: int vector of length B."""
    images: np.ndarray
    labels: np.ndarray
    paths: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class DatasetProfile:
    """Published class sizes and split counts of a PlantVillage crop subset."""
    name: str
    classes: Tuple[str, ...]
    counts: Tuple[Tuple[int, int, int, int], ...]  # (train, val, test, total) per class

    def totals(self) -> Tuple[int, int, int, int]:
        return tuple(sum(row[i] for row in self.counts) for i in range(4))

    def class_totals(self) -> List[int]:
        return [row[3] for row in self.counts]


DATASET_PROFILES: Dict[str, DatasetProfile] = {
    'apple': DatasetProfile(
        'apple',
        ('Apple Scab', 'Black Rot', 'Cedar Apple Rust', 'Healthy'),
        ((441, 94, 95, 630), (434, 93, 94, 621), (192, 41, 42, 275), (1151, 246, 248, 1645)),
    ),
    'corn': DatasetProfile(
        'corn',
        ('Cercospora Leaf Spot', 'Common Rust', 'Northern Leaf Blight', 'Healthy'),
        ((359, 76, 78, 513), (834, 178, 180, 1192), (689, 147, 149, 985), (813, 174, 175, 1162)),
    ),
    'potato': DatasetProfile(
        'potato',
        ('Early Blight', 'Late Blight', 'Healthy'),
        ((700, 150, 150, 1000), (700, 150, 150, 1000), (106, 22, 24, 152)),
    ),
}
