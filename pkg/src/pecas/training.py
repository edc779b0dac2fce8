"""Mini-batch SGD training with dip-triggered learning-rate decay and rollback.

The loop keeps the best-validation checkpoint.  After every validation pass
the latest accuracy is compared with the best seen so far; a drop of more
than ``dip_threshold`` multiplies the learning rate by ``lr_drop_factor`` and
restores the checkpoint, which recovers training after a minimum was
overshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import DatasetSplit, LabeledImage
from .errors import DimensionError
from .models import ModelSpec, ModelWeights, init_weights, loss_and_grads, predict
from .rng import SplitMix64


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 16
    initial_lr: float = 0.01
    lr_drop_factor: float = 0.1
    dip_threshold: float = 0.15
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.initial_lr < 0:
            raise ValueError(f"initial_lr must be >= 0, got {self.initial_lr}")
        if not 0 < self.lr_drop_factor < 1:
            raise ValueError(f"lr_drop_factor must be in (0,1), got {self.lr_drop_factor}")
        if self.dip_threshold <= 0:
            raise ValueError(f"dip_threshold must be > 0, got {self.dip_threshold}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    lr_in_effect: float


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def evaluate(weights: ModelWeights, images: list[LabeledImage]) -> tuple[float, ConfusionMatrix]:
    """Accuracy plus TP/FP/FN/TN counts under argmax prediction."""
    if not images:
        raise ValueError("evaluate needs a non-empty image list")
    cm = ConfusionMatrix()
    for img in images:
        predicted = int(np.argmax(predict(weights, img.pixels)))
        if img.label == 1:
            if predicted == 1:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if predicted == 1:
                cm.fp += 1
            else:
                cm.tn += 1
    return (cm.tp + cm.tn) / cm.total, cm


def precision_recall(cm: ConfusionMatrix) -> tuple[float | None, float | None]:
    """Precision TP/(TP+FP) and recall TP/(TP+FN); None when a denominator is 0."""
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    return precision, recall


def adaptive_lr(records: list[EpochRecord], current_lr: float,
                config: TrainConfig) -> tuple[float, bool]:
    """Drop the learning rate and request a rollback after a validation dip.

    Triggers only when the latest validation accuracy fell strictly more than
    ``dip_threshold`` below the best recorded so far.
    """
    if not records:
        raise ValueError("adaptive_lr needs at least one epoch record")
    best = max(r.val_accuracy for r in records)
    latest = records[-1].val_accuracy
    if latest < best - config.dip_threshold:
        return current_lr * config.lr_drop_factor, True
    return current_lr, False


def train(spec: ModelSpec, split: DatasetSplit,
          config: TrainConfig) -> tuple[ModelWeights, list[EpochRecord]]:
    """Train from a fresh seeded initialization; returns the best-validation weights.

    Per epoch: seeded shuffle of the training set, mean-gradient SGD over
    mini-batches (the trailing partial batch included), then a validation
    pass, checkpointing, and the adaptive learning-rate rule.
    """
    if not split.train:
        raise ValueError("training set is empty")
    for img in split.train:
        if img.pixels.shape != spec.input_shape:
            raise DimensionError(
                f"training image shape {img.pixels.shape} != spec input {spec.input_shape}"
            )

    weights = init_weights(spec, config.seed)
    shuffle_rng = SplitMix64(config.seed)
    best_weights = weights.copy()
    best_val = -1.0
    lr = config.initial_lr
    records: list[EpochRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = list(range(len(split.train)))
        shuffle_rng.shuffle(order)
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            grad_sum = [np.zeros_like(p) for p in weights.parameters]
            for i in batch:
                img = split.train[i]
                loss, scores, _, param_grads = loss_and_grads(weights, img.pixels, img.label)
                loss_sum += loss
                correct += int(np.argmax(scores)) == img.label
                for acc, g in zip(grad_sum, param_grads):
                    acc += g
            mean_grads = [g / len(batch) for g in grad_sum]
            weights.parameters = nn.sgd_step(weights.parameters, mean_grads, lr)

        if split.validation:
            val_acc, _ = evaluate(weights, split.validation)
        else:
            val_acc = 0.0
        records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / len(order),
                train_accuracy=correct / len(order),
                val_accuracy=val_acc,
                lr_in_effect=lr,
            )
        )
        if val_acc > best_val:
            best_val = val_acc
            best_weights = weights.copy()
        lr, rollback = adaptive_lr(records, lr, config)
        if rollback:
            weights = best_weights.copy()

    return best_weights, records
