"""
Optimizer state and training log models
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

TRAIN_LOG_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'val_acc', 'seconds']


@dataclass
class OptimizerState:
    """AdamW moments per parameter name plus the shared step counter."""
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainLog:
    """One record per completed epoch."""
    seed: int
    config_hash: str
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.epoch, r.train_loss, r.val_loss, r.val_acc, r.seconds] for r in self.records],
            columns=TRAIN_LOG_COLUMNS,
        )

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.8g')

    def deterministic_view(self) -> List[Tuple[int, float, float, float]]:
        """Every column except wall time."""
        return [(r.epoch, r.train_loss, r.val_loss, r.val_acc) for r in self.records]

    def summary(self) -> Dict[str, object]:
        best = next((r for r in self.records if r.epoch == self.best_epoch), None)
        return {
            'seed': self.seed,
            'config_hash': self.config_hash,
            'epochs_completed': len(self.records),
            'best_epoch': self.best_epoch,
            'best_val_acc': best.val_acc if best else None,
            'best_val_loss': best.val_loss if best else None,
            'final_train_loss': self.records[-1].train_loss if self.records else None,
        }
