"""Training objectives and the competition metric.

Expression classification uses class-weighted cross-entropy over softmax
probabilities; landmark regression uses mean squared error; the two are
combined as ``expr + lambda * land``.  Evaluation is macro F1: the
unweighted mean of per-class F1 over the six expression classes.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .constants import EXPRESSIONS, NUM_CLASSES
from .errors import ConfigurationError, DimensionError


@dataclass
class ClassWeights:
    """Positive per-class loss multipliers, normalized to mean 1."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (NUM_CLASSES,):
            raise DimensionError(f"class weights must have shape ({NUM_CLASSES},), got {self.w.shape}")
        if not np.all(self.w > 0):
            raise ConfigurationError("class weights must all be positive")

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls(np.ones(NUM_CLASSES))


def class_weights_from_frequencies(counts) -> ClassWeights:
    """Inverse-frequency weights, scaled so mean(w) == 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (NUM_CLASSES,):
        raise DimensionError(f"expected {NUM_CLASSES} class counts, got shape {counts.shape}")
    zero = np.nonzero(counts <= 0)[0]
    if zero.size:
        names = ", ".join(EXPRESSIONS[i] for i in zero)
        raise ConfigurationError(
            f"class count is zero for: {names}; merge or drop these classes before weighting"
        )
    inv = 1.0 / counts
    return ClassWeights(inv / inv.mean())


def weighted_cross_entropy(logits: ag.Tensor, targets, weights: ClassWeights) -> ag.Tensor:
    """Mean over the batch of -sum_c w_c * t_c * log softmax(logits)_c.

    ``targets`` are rows on the class simplex (one-hot or mixed); the loss is
    linear in the target distribution.
    """
    t = np.asarray(targets, dtype=np.float64)
    if logits.data.ndim != 2 or logits.data.shape[1] != NUM_CLASSES:
        raise DimensionError(f"logits must be N x {NUM_CLASSES}, got {logits.data.shape}")
    if t.shape != logits.data.shape:
        raise DimensionError(f"targets shape {t.shape} does not match logits {logits.data.shape}")
    row_sums = t.sum(axis=1)
    bad = np.nonzero(np.abs(row_sums - 1.0) > 1e-4)[0]
    if bad.size:
        raise ValueError(
            f"target row {bad[0]} sums to {row_sums[bad[0]]:.6f}; rows must sum to 1 within 1e-4"
        )
    w = weights.w if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    n = t.shape[0]
    coeff = (w[None, :] * t).astype(logits.data.dtype)
    log_probs = ag.log_softmax(logits)
    return ag.scale(ag.sum_all(ag.mul(log_probs, ag.Tensor(coeff))), -1.0 / n)


def mse_landmark_loss(pred: ag.Tensor, target) -> ag.Tensor:
    """Mean squared error over every coordinate of the batch."""
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise DimensionError(f"landmark target shape {t.shape} does not match prediction {pred.data.shape}")
    diff = ag.sub(pred, ag.Tensor(t))
    return ag.mean_all(ag.mul(diff, diff))


def joint_loss(expr_loss: ag.Tensor, land_loss: ag.Tensor, lam: float) -> ag.Tensor:
    """expr_loss + lam * land_loss."""
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    return ag.add(expr_loss, ag.scale(land_loss, lam))


# ---------------------------------------------------------------------------
# metric


@dataclass
class ConfusionMatrix:
    """counts[t][p] = number of samples with true class t predicted as p."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise DimensionError(
                f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {self.counts.shape}"
            )

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError(f"label vectors must be equal-length 1-D, got {t.shape} and {p.shape}")
    for name, v in (("true", t), ("pred", p)):
        if v.size and (v.min() < 0 or v.max() >= NUM_CLASSES):
            bad = v[(v < 0) | (v >= NUM_CLASSES)][0]
            raise ValueError(f"{name} labels contain class id {bad}, outside 0..{NUM_CLASSES - 1}")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (t.astype(np.int64), p.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


@dataclass
class MetricsReport:
    per_class_f1: np.ndarray
    macro_f1: float
    support: np.ndarray

    def to_text(self) -> str:
        lines = [
            f"f1[{name}]={self.per_class_f1[i]:.4f}" for i, name in enumerate(EXPRESSIONS)
        ]
        lines.append(f"macro_f1={self.macro_f1:.4f}")
        return "\n".join(lines) + "\n"


def macro_f1(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class F1 with the 0/0 := 0 convention, plus their unweighted mean."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return MetricsReport(
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        support=cm.counts.sum(axis=1),
    )
