"""
Evaluation result models
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted classes."""
    counts: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    def false_positives(self) -> np.ndarray:
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def false_negatives(self) -> np.ndarray:
        return self.counts.sum(axis=1) - np.diag(self.counts)

    def to_list(self) -> List[List[int]]:
        return self.counts.tolist()


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False
    f1_undefined: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'class': self.name,
            'p': self.precision,
            'r': self.recall,
            'f1': self.f1,
            'support': self.support,
            'undefined': [k for k, flag in (('p', self.precision_undefined), ('r', self.recall_undefined),
                                            ('f1', self.f1_undefined)) if flag],
        }


@dataclass
class AveragedMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, float]:
        return {'p': self.precision, 'r': self.recall, 'f1': self.f1}


@dataclass
class EvalReport:
    """
    accuracy is trace/total. table_accuracy is the literal sum(TP) / sum(TP + FP + FN),
    which double-counts errors and is reported alongside, not substituted.
    """
    confusion: ConfusionMatrix
    accuracy: float
    table_accuracy: float
    micro: AveragedMetrics
    macro: AveragedMetrics
    per_class: List[ClassMetrics]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'table_accuracy': self.table_accuracy,
            'micro': self.micro.to_dict(),
            'macro': self.macro.to_dict(),
            'per_class': [c.to_dict() for c in self.per_class],
            'confusion': self.confusion.to_list(),
            'class_names': list(self.confusion.class_names),
        }


@dataclass
class PCAProjection:
    """components: [d, m] with orthonormal columns ordered by descending eigenvalue."""
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    coordinates: np.ndarray
    labels: List[str] = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return int(self.components.shape[1])

    def project(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) @ self.components

    def reconstruct(self, coordinates: np.ndarray) -> np.ndarray:
        """Map coordinates back to centered feature space."""
        return coordinates @ self.components.T
