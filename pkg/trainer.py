"""
Adam training loop, evaluation and checkpointing.

Every epoch draws its mini-batch order from a generator seeded with
(seed, epoch), so a run resumed from a checkpoint replays exactly the
batches an uninterrupted run would have seen.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dataset import BINARY_CLASSES, LABELS, ArrayDataset
from errors import CheckpointError, ConfigError, NpyFormatError, RocUndefinedError
from losses import LOSS_KINDS, ClassWeights, compute_class_weights, loss_for
from metrics import DEFAULT_THRESHOLD, MetricsReport, auc, classification_report, roc_curve
from models import Model, ModelConfig, build_model
from npy_io import read_npy, write_npy
from tensor import Tensor, backward

CHECKPOINT_VERSION = "1"
TASK_LOSSES = {
    "binary": ("eq1-softmax",),
    "multilabel": ("weighted-bce", "eq1-softmax"),
}
DEFAULT_LOSS = {"binary": "eq1-softmax", "multilabel": "weighted-bce"}

PathLike = Union[str, Path]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    loss_kind: str = "eq1-softmax"
    use_class_weights: bool = False
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps_hat <= 0:
            raise ConfigError(f"eps_hat must be > 0, got {self.eps_hat}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind '{self.loss_kind}', expected one of {list(LOSS_KINDS)}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    epoch: int = 0  # completed epochs

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_auc: float


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [asdict(r) for r in self.epochs],
            columns=["epoch", "train_loss", "val_loss", "val_accuracy", "val_auc"],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> Tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update; parameters and state are updated in place"""
    if not len(params) == len(grads) == len(state.m) == len(state.v):
        raise ValueError(
            f"adam_step got {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)}/{len(state.v)} moments"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape or state.v[i].shape != p.shape:
            raise ValueError(
                f"adam_step shape mismatch at parameter {i}: param {p.shape}, grad {g.shape}, "
                f"moments {state.m[i].shape}/{state.v[i].shape}"
            )

    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_hat)
    return params, state


def task_targets(task: str, probs: np.ndarray, targets: np.ndarray):
    """Columns scored by the metrics: Disease Present for binary, all 14 for multilabel"""
    if task == "binary":
        return probs[:, 1:2], targets[:, 1:2], [BINARY_CLASSES[1]]
    return probs, targets, list(LABELS)


def train_class_weights(task: str, dataset: ArrayDataset, enabled: bool) -> ClassWeights:
    targets = dataset.targets(task)
    names = BINARY_CLASSES if task == "binary" else LABELS
    if not enabled:
        return ClassWeights.uniform(targets.shape[1], names)
    return compute_class_weights(targets.sum(axis=0), len(dataset), names)


def _check_task(task: str, config: TrainConfig):
    if config.loss_kind not in TASK_LOSSES[task]:
        raise ConfigError(
            f"loss '{config.loss_kind}' does not fit a {task} model; "
            f"use one of {list(TASK_LOSSES[task])}"
        )


def predict(model, dataset: ArrayDataset, batch_size: int = 64) -> np.ndarray:
    """Inference-mode probabilities for every sample, in dataset order"""
    chunks = [
        model.forward(Tensor(dataset.images[start : start + batch_size]), training=False).data
        for start in range(0, len(dataset), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def _validate(model, val_set, task, weights, config):
    if val_set is None or len(val_set) == 0:
        return np.nan, np.nan, np.nan
    probs = predict(model, val_set, config.batch_size)
    targets = val_set.targets(task)
    val_loss = loss_for(config.loss_kind)(probs, targets, weights).item()
    scored, truth, _ = task_targets(task, probs, targets)
    accuracy = float(np.mean((scored >= config.threshold) == (truth == 1)))
    aucs = []
    for j in range(truth.shape[1]):
        try:
            aucs.append(auc(roc_curve(scored[:, j], truth[:, j])))
        except RocUndefinedError:
            continue
    return val_loss, accuracy, float(np.mean(aucs)) if aucs else np.nan


def train(
    model: Model,
    train_set: ArrayDataset,
    val_set: Optional[ArrayDataset],
    config: TrainConfig,
    state: Optional[AdamState] = None,
    verbose: bool = False,
) -> Tuple[Model, TrainHistory]:
    """
    Train for `config.epochs` more epochs, continuing from `state` when given.

    Class weights come from the training split only. The last partial batch
    is trained. `state` is updated in place.
    """
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    task = model.config.task
    _check_task(task, config)
    weights = train_class_weights(task, train_set, config.use_class_weights)
    loss_fn = loss_for(config.loss_kind)
    targets = train_set.targets(task)

    params = model.parameters()
    if state is None:
        state = AdamState.for_params(params)
    history = TrainHistory()
    started = time.perf_counter()

    first = state.epoch
    for epoch in range(first, first + config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            probs = model.forward(Tensor(train_set.images[idx]), training=True)
            loss = loss_fn(probs, targets[idx], weights)
            for p in params:
                p.grad = None
            backward(loss)
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, state, config)
            loss_sum += loss.item() * len(idx)
        state.epoch = epoch + 1

        val_loss, val_acc, val_auc = _validate(model, val_set, task, weights, config)
        record = EpochRecord(epoch + 1, loss_sum / len(order), val_loss, val_acc, val_auc)
        history.epochs.append(record)
        if verbose:
            print(
                f"Epoch {record.epoch}/{first + config.epochs}: "
                f"train_loss={record.train_loss:.4f} val_loss={record.val_loss:.4f} "
                f"val_acc={record.val_accuracy:.4f} val_auc={record.val_auc:.4f}"
            )

    history.wall_time = time.perf_counter() - started
    return model, history


def evaluate(
    model,
    dataset: ArrayDataset,
    config: TrainConfig,
    task: Optional[str] = None,
) -> MetricsReport:
    """Inference-mode forward over `dataset`, scored by the metrics module"""
    if len(dataset) == 0:
        raise ConfigError("evaluation set is empty")
    task = task or model.config.task
    probs = predict(model, dataset, config.batch_size)
    scored, truth, names = task_targets(task, probs, dataset.targets(task))
    return classification_report(scored, truth, config.threshold, names)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, state: AdamState, config: TrainConfig, path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = model.named_parameters()
    if len(state.m) != len(named):
        raise CheckpointError(
            f"Adam state tracks {len(state.m)} tensors but the model has {len(named)} parameters"
        )
    for i, (name, p) in enumerate(named):
        write_npy(p.data, path / f"params_{name}.npy")
        write_npy(state.m[i], path / f"adam_m_{name}.npy")
        write_npy(state.v[i], path / f"adam_v_{name}.npy")
    buffers = {}
    for name, stats in model.named_buffers():
        write_npy(stats.mean, path / f"buffer_{name}.mean.npy")
        write_npy(stats.var, path / f"buffer_{name}.var.npy")
        buffers[name] = stats.batches_seen

    sidecar = {
        "model": model.config.to_dict(),
        "train": config.to_dict(),
        "adam": {"t": state.t, "epoch": state.epoch},
        "parameters": [name for name, _ in named],
        "buffers": buffers,
    }
    (path / "config.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    (path / "version").write_text(CHECKPOINT_VERSION + "\n")
    return path


def _read(path: Path) -> np.ndarray:
    if not path.exists():
        raise CheckpointError(f"checkpoint is missing {path.name}")
    try:
        return read_npy(path)
    except NpyFormatError as e:
        raise CheckpointError(f"checkpoint file {path.name} is corrupt: {e}") from e


def load_checkpoint(path: PathLike) -> Tuple[Model, AdamState, TrainConfig]:
    """Rebuild model, optimizer state and config; nothing is returned on any error"""
    path = Path(path)
    if not path.is_dir():
        raise CheckpointError(f"checkpoint directory not found: {path}")
    version_file = path / "version"
    if not version_file.exists():
        raise CheckpointError(f"{path} has no version file")
    version = version_file.read_text().strip()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version!r} is not supported (expected {CHECKPOINT_VERSION!r})"
        )
    try:
        sidecar = json.loads((path / "config.json").read_text())
        model_config = ModelConfig.from_dict(sidecar["model"])
        train_config = TrainConfig.from_dict(sidecar["train"])
        names = sidecar["parameters"]
        adam = sidecar["adam"]
        buffers = sidecar.get("buffers", {})
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}/config.json is unreadable: {e}") from e

    state_arrays = {name: _read(path / f"params_{name}.npy") for name in names}
    m = [_read(path / f"adam_m_{name}.npy") for name in names]
    v = [_read(path / f"adam_v_{name}.npy") for name in names]
    for name in buffers:
        state_arrays[f"{name}.mean"] = _read(path / f"buffer_{name}.mean.npy")
        state_arrays[f"{name}.var"] = _read(path / f"buffer_{name}.var.npy")

    model = build_model(model_config)
    if [name for name, _ in model.named_parameters()] != names:
        raise CheckpointError("checkpoint parameter list does not match the stored architecture")
    try:
        model.load_state_arrays(state_arrays)
    except ConfigError as e:
        raise CheckpointError(str(e)) from e
    for name, stats in model.named_buffers():
        stats.batches_seen = int(buffers.get(name, 0))
    for i, (_, p) in enumerate(model.named_parameters()):
        if m[i].shape != p.shape or v[i].shape != p.shape:
            raise CheckpointError(f"Adam moments for parameter {i} do not match its shape {p.shape}")
    return model, AdamState(m, v, int(adam["t"]), int(adam["epoch"])), train_config


def write_history_csv(history: TrainHistory, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_frame().to_csv(path, index=False)
    return path
