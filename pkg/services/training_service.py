"""
Training service: label-smoothed loss, AdamW and the epoch loop with validation-based selection
"""
import json
import logging
import math
import os
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.config import MamAppConfig
from models.dataset import Batch, DatasetIndex
from models.mam_app import MamAppModel, build
from models.training import EpochRecord, OptimizerState, TrainLog
from nn import functional as F
from nn.layers import Parameter
from nn.tensor import GradTape, Tensor, no_grad
from services.data_service import DataService
from services.model_service import ModelService
from utils.errors import DimensionError, EvaluationError, LabelError, NonFiniteLossError
from utils.run_logger import get_run_logger

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'
TRAIN_LOG_CSV = 'train_log.csv'
TRAIN_SUMMARY_JSON = 'train_summary.json'


def smoothing_targets(labels: Sequence[int], num_classes: int, smoothing: float, dtype=np.float32) -> np.ndarray:
    """q[correct] = 1 - s, q[other] = s / (K - 1)."""
    labels = np.asarray(labels, dtype=np.int64)
    for i, label in enumerate(labels):
        if not 0 <= label < num_classes:
            raise LabelError(i, int(label), num_classes)
    q = np.full((labels.shape[0], num_classes), smoothing / (num_classes - 1), dtype=dtype)
    q[np.arange(labels.shape[0]), labels] = 1.0 - smoothing
    return q


def smoothing_floor(num_classes: int, smoothing: float) -> float:
    """Entropy of the smoothed target, the smallest achievable loss."""
    other = smoothing / (num_classes - 1)
    terms = [1.0 - smoothing] + [other] * (num_classes - 1)
    return -sum(p * math.log(p) for p in terms if p > 0)


def smoothed_cross_entropy(logits: Tensor, labels: Sequence[int], smoothing: float = 0.1) -> Tensor:
    """Batch mean of -sum_k q_k log softmax(logits)_k."""
    if logits.ndim != 2:
        raise DimensionError('smoothed_cross_entropy', f"logits must be [B,K], got {logits.shape}")
    batch, num_classes = logits.shape
    if len(labels) != batch:
        raise DimensionError('smoothed_cross_entropy', f"{len(labels)} labels for batch axis of {batch}")
    q = smoothing_targets(labels, num_classes, smoothing, dtype=logits.dtype)
    log_probs = F.log_softmax(logits, axis=-1)
    return F.mul(F.sum_all(F.mul(log_probs, q)), -1.0 / batch)


def adamw_step(params: Sequence[Tuple[str, Parameter]], grads: Mapping[str, np.ndarray],
               state: OptimizerState) -> OptimizerState:
    """
    One bias-corrected Adam update with decoupled weight decay, in place.
    Decay (theta -= lr * wd * theta) is applied first and only to parameters flagged ``decay``.
    """
    beta1, beta2 = state.betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError('adamw_step', f"gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            v = state.exp_avg_sq[name] = np.zeros_like(p.data)
        if p.decay and state.weight_decay:
            p.data -= (state.lr * state.weight_decay) * p.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state


def optimizer_for(config: MamAppConfig) -> OptimizerState:
    return OptimizerState(lr=config.lr, betas=tuple(config.betas), eps=config.adam_eps,
                          weight_decay=config.weight_decay)


def evaluate_epoch(model: MamAppModel, batches: Iterable[Batch], smoothing: float = 0.0) -> Tuple[float, float]:
    """
    Mean loss and top-1 accuracy in eval mode.

    :raises EvaluationError: when the batches contain no samples
    """
    model.eval()
    total_loss = 0.0
    correct = 0
    count = 0
    with no_grad():
        for batch in batches:
            logits = model(Tensor(batch.images))
            loss = smoothed_cross_entropy(logits, batch.labels, smoothing)
            total_loss += loss.item() * len(batch)
            correct += int((logits.data.argmax(axis=-1) == batch.labels).sum())
            count += len(batch)
    if count == 0:
        raise EvaluationError("Cannot evaluate an empty split")
    return total_loss / count, correct / count


def _is_better(val_acc: float, val_loss: float, best: Optional[Tuple[float, float]]) -> bool:
    """Higher accuracy wins, then lower loss; equal scores keep the earlier epoch."""
    if best is None:
        return True
    best_acc, best_loss = best
    if val_acc != best_acc:
        return val_acc > best_acc
    return val_loss < best_loss


def _snapshot(model: MamAppModel) -> 'OrderedDict[str, np.ndarray]':
    return OrderedDict((name, array.copy()) for name, array in model.state_dict().items())


@dataclass
class TrainResult:
    best_model: MamAppModel
    final_model: MamAppModel
    log: TrainLog
    optimizer: OptimizerState


class TrainingService:
    """
    Service class running the training loop
    One optimizer owns the parameters; updates are applied serially per batch
    """

    def __init__(self, data_service: DataService, model_service: ModelService):
        """
        :param data_service: provides split batches
        :param model_service: builds models and reads/writes checkpoints
        """
        self.data_service = data_service
        self.model_service = model_service

    def _train_batches(self, config: MamAppConfig, index: DatasetIndex, epoch: int, augment: bool):
        return self.data_service.make_batches(
            index, 'train', config.batch_size, config.seed, epoch=epoch, image_size=config.image_hw[0],
            augment_train=augment, norm=(config.norm_mean, config.norm_std),
        )

    def _val_batches(self, config: MamAppConfig, index: DatasetIndex):
        return self.data_service.make_batches(
            index, 'val', config.batch_size, config.seed, image_size=config.image_hw[0],
            norm=(config.norm_mean, config.norm_std),
        )

    def train_epoch(self, model: MamAppModel, batches: Iterable[Batch], optimizer: OptimizerState,
                    smoothing: float, epoch: int) -> float:
        """One pass over the train batches; returns the sample-weighted mean loss."""
        model.train()
        named = list(model.named_parameters())
        total = 0.0
        count = 0
        for batch_index, batch in enumerate(batches):
            model.zero_grad()
            with GradTape() as tape:
                logits = model(Tensor(batch.images))
                loss = smoothed_cross_entropy(logits, batch.labels, smoothing)
            value = loss.item()
            if not math.isfinite(value):
                get_run_logger().log_numeric_failure('non-finite loss', epoch=epoch, batch=batch_index)
                raise NonFiniteLossError(epoch, batch_index, value)
            tape.backward(loss)
            adamw_step(named, {name: p.grad for name, p in named}, optimizer)
            total += value * len(batch)
            count += len(batch)
        if count == 0:
            raise EvaluationError("Train split produced no batches")
        return total / count

    def train(
        self,
        config: MamAppConfig,
        index: DatasetIndex,
        out_dir: Optional[str] = None,
        resume: Optional[str] = None,
        augment: bool = True,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    ) -> TrainResult:
        """
        Train with constant learning rate and keep the best validation checkpoint.

        :param config: validated model/training configuration
        :param index: split dataset index
        :param out_dir: where best/last checkpoints and the train log are written (nothing written when None)
        :param resume: last checkpoint of an earlier run to continue from
        :param augment: apply training augmentation
        :param on_epoch: callback receiving each epoch record
        """
        run_logger = get_run_logger()
        start_epoch = 0
        best: Optional[Tuple[float, float]] = None
        log = TrainLog(seed=config.seed, config_hash=config.config_hash())

        if resume:
            loaded = self.model_service.load_checkpoint(resume)
            model = loaded.model
            optimizer = loaded.optimizer or optimizer_for(loaded.config)
            start_epoch = int(loaded.state.get('epoch', -1)) + 1
            config = loaded.config.with_overrides(epochs=config.epochs)
            log = TrainLog(seed=config.seed, config_hash=config.config_hash())
            best_state, best, log = self._restore_history(resume, model, loaded.state, log)
            logger.info("Resuming from %s at epoch %d (optimizer step %d)", resume, start_epoch, optimizer.step)
        else:
            model = build(config)
            optimizer = optimizer_for(config)
            best_state = _snapshot(model)

        for epoch in range(start_epoch, config.epochs):
            started = time.perf_counter()
            train_loss = self.train_epoch(
                model, self._train_batches(config, index, epoch, augment), optimizer, config.label_smoothing, epoch
            )
            val_loss, val_acc = evaluate_epoch(model, self._val_batches(config, index), config.label_smoothing)
            record = EpochRecord(epoch, train_loss, val_loss, val_acc, time.perf_counter() - started)
            log.append(record)
            run_logger.log_epoch(epoch, train_loss, val_loss, val_acc, record.seconds)
            if on_epoch:
                on_epoch(record)

            if _is_better(val_acc, val_loss, best):
                best = (val_acc, val_loss)
                log.best_epoch = epoch
                best_state = _snapshot(model)
                if out_dir:
                    self._save(model, config, os.path.join(out_dir, BEST_CHECKPOINT), epoch, optimizer, best, log)
            if out_dir:
                self._save(model, config, os.path.join(out_dir, LAST_CHECKPOINT), epoch, optimizer, best, log,
                           with_optimizer=True)
                log.to_csv(os.path.join(out_dir, TRAIN_LOG_CSV))

        final_model = model
        best_model = build(config)
        best_model.load_state_dict(best_state)
        best_model.eval()

        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            if not log.records:
                self._save(best_model, config, os.path.join(out_dir, BEST_CHECKPOINT), -1, optimizer, best, log)
                self._save(final_model, config, os.path.join(out_dir, LAST_CHECKPOINT), -1, optimizer, best, log,
                           with_optimizer=True)
            log.to_csv(os.path.join(out_dir, TRAIN_LOG_CSV))
            self._write_summary(log, os.path.join(out_dir, TRAIN_SUMMARY_JSON))

        return TrainResult(best_model=best_model, final_model=final_model, log=log, optimizer=optimizer)

    def _save(self, model, config, path, epoch, optimizer, best, log, with_optimizer: bool = False) -> None:
        state = {
            'epoch': epoch,
            'optimizer_step': optimizer.step,
            'best_epoch': log.best_epoch,
            'best_val_acc': best[0] if best else None,
            'best_val_loss': best[1] if best else None,
        }
        self.model_service.save_checkpoint(model, config, path, state=state,
                                           optimizer=optimizer if with_optimizer else None)

    def _restore_history(self, resume: str, model: MamAppModel, state: Dict, log: TrainLog):
        directory = os.path.dirname(os.path.abspath(resume))
        best_path = os.path.join(directory, BEST_CHECKPOINT)
        best_state = _snapshot(model)
        best = None
        if state.get('best_val_acc') is not None:
            best = (float(state['best_val_acc']), float(state['best_val_loss']))
            log.best_epoch = state.get('best_epoch')
        if os.path.exists(best_path):
            best_state = _snapshot(self.model_service.load_checkpoint(best_path).model)
        log_path = os.path.join(directory, TRAIN_LOG_CSV)
        if os.path.exists(log_path):
            frame = pd.read_csv(log_path)
            for row in frame.itertuples(index=False):
                if int(row.epoch) <= int(state.get('epoch', -1)):
                    log.append(EpochRecord(int(row.epoch), float(row.train_loss), float(row.val_loss),
                                           float(row.val_acc), float(row.seconds)))
        return best_state, best, log

    def _write_summary(self, log: TrainLog, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(log.summary(), fh, indent=2, sort_keys=True)
