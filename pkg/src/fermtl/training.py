"""Single-model training and the bagged soft-voting ensemble.

Every ensemble member trains on its own random subsample of the training
set (20% by default) with its own seed and backbone variant; at prediction
time member class-probability vectors are averaged and the argmax taken.
All randomness is drawn from named substreams of the member seed, so
members train identically whether they run sequentially or in parallel.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .augment import AugmentConfig, apply_branch_pipelines, mix_augment
from .constants import NUM_CLASSES
from .data import LoadedDataset
from .errors import ConfigurationError, TrainingDiverged
from .losses import (
    class_weights_from_frequencies,
    confusion_matrix,
    joint_loss,
    macro_f1,
    mse_landmark_loss,
    weighted_cross_entropy,
    MetricsReport,
)
from .model import BackboneConfig, MTLNetwork, build_model, predict_probs
from .rng import derive_seed, substream


@dataclass
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    landmark_weight: float = 1.0  # "lambda" in run configs
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    seed: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.landmark_weight < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.landmark_weight}")
        self.augment.validate()
        self.backbone.validate()


@dataclass
class EpochStats:
    epoch: int
    expr_loss: float
    land_loss: float
    joint_loss: float
    val_macro_f1: float


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    CSV_HEADER = "epoch,expr_loss,land_loss,joint_loss,val_macro_f1"

    def append(self, row: EpochStats):
        self.rows.append(row)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.expr_loss:.6f},{r.land_loss:.6f},{r.joint_loss:.6f},{r.val_macro_f1:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


@dataclass
class TrainedMember:
    model: MTLNetwork
    config: TrainConfig
    bag: np.ndarray  # training-set indices this member saw (None for the full set)
    final_metrics: dict
    checkpoint_path: str = None


@dataclass
class EnsembleConfig:
    members: list  # one TrainConfig per member
    subsample_fraction: float = 0.2
    seed: int = 0
    workers: int = 1

    def validate(self):
        if not self.members:
            raise ConfigurationError("ensemble needs at least one member config")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ConfigurationError(
                f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}"
            )
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        for m in self.members:
            m.validate()


def _one_hot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((labels.shape[0], NUM_CLASSES), dtype=np.float32)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _augmented_views(images, indices, cfg: TrainConfig, epoch: int):
    emotion = np.empty_like(images)
    appearance = np.empty_like(images)
    for j, ds_index in enumerate(indices):
        rng = substream(cfg.seed, "augment", epoch, int(ds_index))
        emotion[j], appearance[j] = apply_branch_pipelines(images[j], cfg.augment, rng)
    return emotion, appearance


def train_step(model, emotion_views, appearance_views, targets, landmarks, weights, cfg, mix_rng=None):
    """One forward/backward pass; returns (joint, expr, land) losses as floats.

    Gradients are left in the parameter tensors for the optimizer.  When
    mixing is enabled, the expression loss is the cross-entropy of the mixed
    batch against the lam-mixed targets, plus the cross-entropy of the real
    batch when the real-sample term is on; the landmark loss always reads
    the forward pass whose emotion view is closest to the real sample.
    """
    aug = cfg.augment
    with ag.Tape() as tape:
        if aug.enable_mix and mix_rng is not None:
            perm = mix_rng.permutation(emotion_views.shape[0])
            mixed = mix_augment(
                emotion_views, emotion_views[perm], targets, targets[perm], aug.mix_alpha, mix_rng
            )
            logits_mix, land_mix = model.forward_full(
                ag.Tensor(mixed.images), ag.Tensor(appearance_views)
            )
            expr = weighted_cross_entropy(logits_mix, mixed.mixed_targets(), weights)
            if aug.mix_real_term:
                logits_real, land_real = model.forward_full(
                    ag.Tensor(emotion_views), ag.Tensor(appearance_views)
                )
                expr = ag.add(expr, weighted_cross_entropy(logits_real, targets, weights))
                land = mse_landmark_loss(land_real, landmarks)
            else:
                land = mse_landmark_loss(land_mix, landmarks)
        else:
            logits, land_pred = model.forward_full(
                ag.Tensor(emotion_views), ag.Tensor(appearance_views)
            )
            expr = weighted_cross_entropy(logits, targets, weights)
            land = mse_landmark_loss(land_pred, landmarks)
        joint = joint_loss(expr, land, cfg.landmark_weight)
    values = (joint.item(), expr.item(), land.item())
    if not all(np.isfinite(v) for v in values):
        raise TrainingDiverged(f"non-finite loss {values}")
    ag.backward(tape, joint)
    return values


def validation_report(model, dataset: LoadedDataset, batch_size: int = 64) -> MetricsReport:
    preds = predict_classes(model, dataset, batch_size)
    return macro_f1(confusion_matrix(dataset.labels, preds))


def predict_classes(model, dataset: LoadedDataset, batch_size: int = 64) -> np.ndarray:
    probs = predict_dataset_probs(model, dataset, batch_size)
    return probs.argmax(axis=1)


def predict_dataset_probs(model, dataset: LoadedDataset, batch_size: int = 64) -> np.ndarray:
    chunks = []
    for start in range(0, len(dataset), batch_size):
        probs, _ = predict_probs(model, dataset.images[start : start + batch_size])
        chunks.append(probs)
    return np.concatenate(chunks, axis=0)


def validation_landmark_mse(model, dataset: LoadedDataset, batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        _, land = predict_probs(model, dataset.images[start : start + batch_size])
        diff = land - dataset.landmarks[start : start + batch_size]
        total += float((diff * diff).sum())
    return total / (len(dataset) * dataset.landmarks.shape[1])


def train_single(train_set: LoadedDataset, val_set: LoadedDataset, cfg: TrainConfig, bag=None):
    """Train one model; deterministic given cfg (and independent of thread schedule)."""
    cfg.validate()
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    counts = np.bincount(train_set.labels, minlength=NUM_CLASSES)
    weights = class_weights_from_frequencies(counts)

    model = build_model(cfg.backbone, cfg.seed)
    params = [p for _, p in model.parameters()]
    opt = ag.AdamState(
        params,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
    )

    log = TrainingLog()
    n = len(train_set)
    targets_all = _one_hot(train_set.labels)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        sums = np.zeros(3)
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            images = train_set.images[idx]
            emotion_views, appearance_views = _augmented_views(images, idx, cfg, epoch)
            mix_rng = (
                substream(cfg.seed, "mix", epoch, batch_no) if cfg.augment.enable_mix else None
            )
            try:
                values = train_step(
                    model,
                    emotion_views,
                    appearance_views,
                    targets_all[idx],
                    train_set.landmarks[idx],
                    weights,
                    cfg,
                    mix_rng,
                )
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"{exc} at epoch {epoch}, batch {batch_no}; last finite epoch {epoch - 1}"
                ) from None
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            ag.adam_step(params, grads, opt)
            for p in params:
                p.grad = None
            sums += np.array(values) * len(idx)
        joint_mean, expr_mean, land_mean = sums / n
        val_f1 = validation_report(model, val_set).macro_f1 if len(val_set) else float("nan")
        log.append(EpochStats(epoch, expr_mean, land_mean, joint_mean, val_f1))

    final = {
        "expr_loss": log.rows[-1].expr_loss,
        "land_loss": log.rows[-1].land_loss,
        "joint_loss": log.rows[-1].joint_loss,
        "val_macro_f1": log.rows[-1].val_macro_f1,
    }
    member = TrainedMember(model=model, config=cfg, bag=bag, final_metrics=final)
    return member, log


# ---------------------------------------------------------------------------
# bagging


def bag_subsample(n: int, fraction: float, seed: int) -> np.ndarray:
    """round(fraction * n) unique indices, drawn uniformly without replacement."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    k = int(np.floor(fraction * n + 0.5))
    if k == 0:
        raise ValueError(f"round({fraction} * {n}) selects no samples")
    idx = np.random.default_rng(seed).choice(n, size=k, replace=False)
    return np.sort(idx)


def train_ensemble(train_set: LoadedDataset, val_set: LoadedDataset, ecfg: EnsembleConfig):
    """Train every member on its own bag; returns surviving members with logs.

    Diverged members are excluded with a warning.  Results are identical for
    any worker count because each member derives all randomness from its own
    seeds.
    """
    ecfg.validate()
    n = len(train_set)

    def run(i):
        mcfg = ecfg.members[i]
        bag = bag_subsample(n, ecfg.subsample_fraction, derive_seed(ecfg.seed, "bag", i))
        member, log = train_single(train_set.subset(bag), val_set, mcfg, bag=bag)
        return member, log

    results = [None] * len(ecfg.members)
    if ecfg.workers == 1:
        for i in range(len(ecfg.members)):
            try:
                results[i] = run(i)
            except TrainingDiverged as exc:
                warnings.warn(f"ensemble member {i} diverged and was excluded: {exc}")
    else:
        with ThreadPoolExecutor(max_workers=ecfg.workers) as pool:
            futures = {i: pool.submit(run, i) for i in range(len(ecfg.members))}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except TrainingDiverged as exc:
                warnings.warn(f"ensemble member {i} diverged and was excluded: {exc}")

    survivors = [r for r in results if r is not None]
    if not survivors:
        raise RuntimeError("every ensemble member diverged; nothing to aggregate")
    return survivors


def soft_vote(member_probs):
    """(mean probability vector, argmax class with lowest-index tie-break).

    Members are summed in a canonical order (sorted by buffer bytes) so the
    result is exactly independent of member ordering.
    """
    vectors = [np.asarray(p) for p in member_probs]
    if not vectors:
        raise ValueError("soft_vote needs at least one member")
    for i, v in enumerate(vectors):
        if v.shape != (NUM_CLASSES,):
            raise ValueError(f"member {i} has shape {v.shape}, expected ({NUM_CLASSES},)")
        if abs(float(v.sum()) - 1.0) > 1e-5 or float(v.min()) < -1e-5:
            raise ValueError(f"member {i} is not on the probability simplex (sum={v.sum()})")
    ordered = sorted(vectors, key=lambda v: v.tobytes())
    total = ordered[0].copy()
    for v in ordered[1:]:
        total += v
    probs = total / len(vectors)
    return probs, int(np.argmax(probs))


def ensemble_predictions(members, dataset: LoadedDataset, batch_size: int = 64):
    """(probs (n, 6), classes (n,)) from soft-voting the member models."""
    member_probs = [
        predict_dataset_probs(m.model, dataset, batch_size) for m in members
    ]
    n = len(dataset)
    probs = np.empty((n, NUM_CLASSES), dtype=member_probs[0].dtype)
    classes = np.empty(n, dtype=np.int64)
    for i in range(n):
        probs[i], classes[i] = soft_vote([mp[i] for mp in member_probs])
    return probs, classes


def evaluate(members, dataset: LoadedDataset, batch_size: int = 64) -> MetricsReport:
    """Soft-voted ensemble predictions scored as macro F1."""
    if not members:
        raise ValueError("evaluate needs at least one trained member")
    _, classes = ensemble_predictions(members, dataset, batch_size)
    return macro_f1(confusion_matrix(dataset.labels, classes))
