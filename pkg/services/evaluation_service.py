"""
Evaluation service: confusion matrix, micro/macro metrics, feature export and PCA
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.decomposition import PCA
from sklearn.metrics import confusion_matrix

from models.dataset import Batch
from models.mam_app import MamAppModel
from models.reports import AveragedMetrics, ClassMetrics, ConfusionMatrix, EvalReport, PCAProjection
from nn import functional as F
from nn.tensor import Tensor, no_grad
from utils.errors import EvaluationError, LabelError

logger = logging.getLogger(__name__)


def confusion(true: Sequence[int], pred: Sequence[int], num_classes: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise EvaluationError(f"true has {true.shape[0]} entries, pred has {pred.shape[0]}")
    for i, (t, p) in enumerate(zip(true, pred)):
        if not 0 <= t < num_classes:
            raise LabelError(i, int(t), num_classes)
        if not 0 <= p < num_classes:
            raise LabelError(i, int(p), num_classes)
    if true.size == 0:
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    else:
        counts = confusion_matrix(true, pred, labels=list(range(num_classes)))
    return ConfusionMatrix(counts=counts, class_names=list(class_names or []))


def _ratio(numerator: int, denominator: int):
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


def metrics(cm: ConfusionMatrix) -> EvalReport:
    """
    Accuracy as trace/total, micro and macro precision/recall/F1, per-class values.
    Per-class divisions by zero give 0 with an ``undefined`` flag.

    :raises EvaluationError: on an all-zero matrix
    """
    total = cm.total
    if total == 0:
        raise EvaluationError("Confusion matrix is empty")
    tp = [int(x) for x in cm.true_positives()]
    fp = [int(x) for x in cm.false_positives()]
    fn = [int(x) for x in cm.false_negatives()]
    sum_tp, sum_fp, sum_fn = sum(tp), sum(fp), sum(fn)

    micro = AveragedMetrics(
        precision=sum_tp / (sum_tp + sum_fp),
        recall=sum_tp / (sum_tp + sum_fn),
        f1=(2 * sum_tp) / (2 * sum_tp + sum_fp + sum_fn),
    )

    per_class: List[ClassMetrics] = []
    for i, name in enumerate(cm.class_names):
        precision, p_undefined = _ratio(tp[i], tp[i] + fp[i])
        recall, r_undefined = _ratio(tp[i], tp[i] + fn[i])
        f1, f_undefined = _ratio(2 * tp[i], 2 * tp[i] + fp[i] + fn[i])
        per_class.append(ClassMetrics(name, precision, recall, f1, tp[i] + fn[i], p_undefined, r_undefined,
                                      f_undefined))

    macro = AveragedMetrics(
        precision=float(np.mean([c.precision for c in per_class])),
        recall=float(np.mean([c.recall for c in per_class])),
        f1=float(np.mean([c.f1 for c in per_class])),
    )
    return EvalReport(
        confusion=cm,
        accuracy=sum_tp / total,
        table_accuracy=sum_tp / (sum_tp + sum_fp + sum_fn),
        micro=micro,
        macro=macro,
        per_class=per_class,
    )


def _orient(components: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude coordinate is positive."""
    pivots = np.abs(components).argmax(axis=0)
    signs = np.sign(components[pivots, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def pca(features: np.ndarray, m: int = 2, labels: Optional[Sequence[str]] = None) -> PCAProjection:
    """
    Project centered features onto the top-m covariance eigenvectors.

    :param features: [M, d] with M > m
    :param m: number of components, at most d
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise EvaluationError(f"features must be [M, d], got shape {x.shape}")
    samples, dims = x.shape
    if not 1 <= m <= dims:
        raise EvaluationError(f"m must lie in [1, {dims}], got {m}")
    if samples <= m:
        raise EvaluationError(f"PCA with {m} components needs more than {m} samples, got {samples}")

    model = PCA(n_components=m, svd_solver='full')
    model.fit(x)
    components = _orient(model.components_.T)
    mean = model.mean_
    coordinates = (x - mean) @ components
    if float(model.explained_variance_.sum()) == 0.0:
        logger.info("PCA input has zero variance; every explained variance ratio is 0")
        ratio = np.zeros(m, dtype=np.float64)
    else:
        if np.any(model.explained_variance_ < 1e-12 * max(1.0, float(model.explained_variance_[0]))):
            logger.info("PCA input is rank-deficient; trailing components carry no variance")
        ratio = np.asarray(model.explained_variance_ratio_, dtype=np.float64)
    return PCAProjection(
        components=components,
        explained_variance_ratio=ratio,
        mean=mean,
        coordinates=coordinates,
        labels=list(labels or []),
    )


@dataclass
class SplitPredictions:
    paths: List[str]
    labels: np.ndarray
    predictions: np.ndarray
    probabilities: np.ndarray
    features: np.ndarray


class EvaluationService:
    """
    Service class running a model over split batches and writing evaluation artifacts
    """

    def predict_batches(self, model: MamAppModel, batches: Iterable[Batch]) -> SplitPredictions:
        model.eval()
        paths: List[str] = []
        labels, preds, probs, feats = [], [], [], []
        with no_grad():
            for batch in batches:
                features = model.features(Tensor(batch.images))
                logits = model.head(features)
                paths.extend(batch.paths)
                labels.append(batch.labels)
                preds.append(logits.data.argmax(axis=-1))
                probs.append(F.softmax(logits, axis=-1).data)
                feats.append(features.data)
        if not paths:
            raise EvaluationError("Cannot evaluate an empty split")
        return SplitPredictions(
            paths=paths,
            labels=np.concatenate(labels),
            predictions=np.concatenate(preds),
            probabilities=np.concatenate(probs),
            features=np.concatenate(feats),
        )

    def evaluate(self, model: MamAppModel, batches: Iterable[Batch], class_names: Sequence[str]) -> EvalReport:
        result = self.predict_batches(model, batches)
        cm = confusion(result.labels, result.predictions, len(class_names), class_names)
        return metrics(cm)

    def feature_frame(self, result: SplitPredictions, class_names: Sequence[str]) -> pd.DataFrame:
        frame = pd.DataFrame(result.features, columns=[f"f{i}" for i in range(result.features.shape[1])])
        frame.insert(0, 'class_name', [class_names[int(label)] for label in result.labels])
        frame.insert(0, 'path', result.paths)
        return frame

    def export_features(self, model: MamAppModel, batches: Iterable[Batch], class_names: Sequence[str],
                        out_path: str) -> SplitPredictions:
        """
        Write penultimate features as ``path,class_name,f0..f{d-1}``.

        :return: the predictions the file was written from
        """
        result = self.predict_batches(model, batches)
        _ensure_parent(out_path)
        self.feature_frame(result, class_names).to_csv(out_path, index=False, float_format='%.9g')
        logger.info("Wrote %d feature rows to %s", len(result.paths), out_path)
        return result

    def write_pca(self, projection: PCAProjection, paths: Sequence[str], out_path: str) -> str:
        """Write ``path,class_name,pc1..pcm`` plus a sidecar JSON of explained-variance ratios."""
        _ensure_parent(out_path)
        frame = pd.DataFrame(projection.coordinates,
                             columns=[f"pc{i + 1}" for i in range(projection.num_components)])
        frame.insert(0, 'class_name', projection.labels)
        frame.insert(0, 'path', list(paths))
        frame.to_csv(out_path, index=False, float_format='%.9g')
        sidecar = os.path.splitext(out_path)[0] + '.json'
        with open(sidecar, 'w', encoding='utf-8') as fh:
            json.dump({'explained_variance_ratio': projection.explained_variance_ratio.tolist(),
                       'components': projection.num_components}, fh, indent=2, allow_nan=False)
        return sidecar

    def write_metrics(self, report: EvalReport, out_path: str) -> None:
        _ensure_parent(out_path)
        with open(out_path, 'w', encoding='utf-8') as fh:
            json.dump(report.to_dict(), fh, indent=2)

    def write_confusion(self, cm: ConfusionMatrix, out_path: str) -> None:
        _ensure_parent(out_path)
        pd.DataFrame(cm.counts, index=cm.class_names, columns=cm.class_names).to_csv(out_path, index_label='true')

    def read_confusion(self, path: str) -> ConfusionMatrix:
        frame = pd.read_csv(path, index_col=0)
        return ConfusionMatrix(counts=frame.to_numpy(dtype=np.int64), class_names=[str(c) for c in frame.columns])


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
