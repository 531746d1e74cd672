"""
Inverse-frequency class weights and weighted cross-entropy losses.

    w_i = N / n_i
    eq1:          L = - sum_i w_i * y_i * log(p_i)
    weighted-bce: L = - sum_i [ w_i * y_i * log(p_i) + (1 - y_i) * log(1 - p_i) ]

Both losses average over the batch and are built from tensor ops, so their
gradients flow through `backward`.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from dataset import BINARY_CLASSES, LABELS, DatasetManifest
from errors import ClassWeightError, ConfigError, DomainError
from tensor import Tensor, as_tensor, clip, log, mul, reduce_mean, reduce_sum, sub

PROB_FLOOR = 1e-12
PROB_CEIL = 1.0 - 1e-12

LOSS_KINDS = ("eq1-softmax", "weighted-bce")


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError(f"class weights must be a non-empty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError(f"class weights must be positive and finite, got {w}")
        if self.names is not None and len(self.names) != w.size:
            raise ValueError(f"{len(self.names)} class names for {w.size} weights")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, count: int, names: Optional[Sequence[str]] = None) -> "ClassWeights":
        return cls(np.ones(count), names)

    def to_frame(self) -> pd.DataFrame:
        names = self.names or [str(i) for i in range(len(self))]
        return pd.DataFrame({"label": list(names), "weight": self.weights})


def compute_class_weights(counts, total: int, names: Optional[Sequence[str]] = None) -> ClassWeights:
    counts = np.asarray(counts, dtype=np.float64)
    if total <= 0:
        raise DomainError(f"total sample count must be positive, got {total}")
    zero = np.nonzero(counts <= 0)[0]
    if zero.size:
        index = int(zero[0])
        label = names[index] if names is not None else None
        shown = f"class {index}" + (f" ({label})" if label else "")
        raise ClassWeightError(
            f"cannot weight a class with zero samples: {shown}", index, label
        )
    return ClassWeights(float(total) / counts, names)


def binary_class_weights(manifest: DatasetManifest) -> ClassWeights:
    return compute_class_weights(manifest.binary_counts, manifest.total, BINARY_CLASSES)


def multilabel_class_weights(manifest: DatasetManifest) -> ClassWeights:
    return compute_class_weights(manifest.label_counts, manifest.total, LABELS)


def write_weights_csv(weights: ClassWeights, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights.to_frame().to_csv(path, index=False)
    return path


def _prepare(probs, target, weights: ClassWeights):
    probs = as_tensor(probs)
    y = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    if probs.shape != y.shape:
        raise ValueError(f"probs {probs.shape} and targets {y.shape} differ in shape")
    if probs.shape[-1] != len(weights):
        raise ValueError(
            f"{probs.shape[-1]} classes in probs but {len(weights)} class weights"
        )
    return probs, y


def weighted_cross_entropy(probs, target, weights: ClassWeights) -> Tensor:
    """Positive-label-only weighted cross-entropy, mean over the batch"""
    probs, y = _prepare(probs, target, weights)
    log_p = log(clip(probs, PROB_FLOOR, PROB_CEIL))
    per_class = mul(log_p, Tensor(-weights.weights * y))
    return reduce_mean(reduce_sum(per_class, axis=1))


def weighted_bce_multilabel(probs, target, weights: ClassWeights) -> Tensor:
    """Weighted positive term plus unit-weight negative term, mean over the batch"""
    probs, y = _prepare(probs, target, weights)
    p = clip(probs, PROB_FLOOR, PROB_CEIL)
    positive = mul(log(p), Tensor(weights.weights * y))
    negative = mul(log(sub(Tensor(1.0), p)), Tensor(1.0 - y))
    return reduce_mean(-reduce_sum(positive + negative, axis=1))


def loss_for(kind: str):
    if kind == "eq1-softmax":
        return weighted_cross_entropy
    if kind == "weighted-bce":
        return weighted_bce_multilabel
    raise ConfigError(f"unknown loss kind '{kind}', expected one of {list(LOSS_KINDS)}")
