"""Training loop, evaluation reports, baselines and the row-order ablation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import LABELS
from .datapipe import BATCH_SIZE, Dataset, batches
from .errors import ConfigurationError, InputError, TrainingDiverged
from .models import ModelSpec, TrailModel
from .nn import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    spec: ModelSpec
    epochs: int = 50
    batch_size: int = BATCH_SIZE
    lr: float = 0.001
    seed: int = 0
    checkpoint_interval: int = 0  # epochs between periodic checkpoints, 0 = off
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.checkpoint_interval < 0:
            raise ConfigurationError("checkpoint interval must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    seconds: float = 0.0


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def val_accuracy(self) -> list[float]:
        return [r.val_accuracy for r in self.records]

    @property
    def train_loss(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tval_accuracy"]
        lines += [f"{r.epoch}\t{r.train_loss:.6f}\t{r.val_accuracy:.6f}" for r in self.records]
        return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows true, cols predicted

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def baseline(self) -> float:
        return float(self.confusion.sum(axis=1).max() / self.total) if self.total else 0.0

    @property
    def recall(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), rows, out=np.zeros(3), where=rows > 0)

    @property
    def beats_baseline(self) -> bool:
        return self.accuracy > self.baseline

    def to_tsv(self) -> str:
        lines = ["true\\pred\t" + "\t".join(LABELS)]
        for name, row in zip(LABELS, self.confusion):
            lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
        recall = ",".join(f"{r:.4f}" for r in self.recall)
        lines.append(
            f"summary\taccuracy={self.accuracy:.4f}\tbaseline={self.baseline:.4f}"
            f"\trecall={recall}\tn={self.total}"
        )
        return "\n".join(lines) + "\n"


def confusion_matrix(labels: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    m = np.zeros((3, 3), dtype=np.int64)
    np.add.at(m, (np.asarray(labels), np.asarray(predicted)), 1)
    return m


def majority_baseline(data: Dataset | np.ndarray) -> float:
    labels = data.labels if isinstance(data, Dataset) else np.asarray(data)
    if len(labels) == 0:
        raise InputError("baseline of an empty dataset is undefined")
    return float(np.bincount(labels, minlength=3).max() / len(labels))


def evaluate(model: TrailModel, data: Dataset, batch_size: int = 256) -> EvalReport:
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    images = data.images.astype(model.dtype, copy=False)
    probs = model.predict_proba(images, batch_size)
    return EvalReport(confusion_matrix(data.labels, probs.argmax(axis=1)))


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    model: TrailModel | None = None,
) -> tuple[TrailModel, History]:
    """Adam on mean cross-entropy; returns the weights of the best validation epoch."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("training and validation sets must be non-empty")
    if model is None:
        model = TrailModel.create(config.spec, config.seed)
    graph = model.graph
    opt = Adam(lr=config.lr)
    history = History()
    best_acc, best_params = -1.0, None
    images = train_set.images.astype(model.dtype, copy=False)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, seen = 0.0, 0
        for b, idx in enumerate(batches(train_set, config.batch_size, [config.seed, epoch])):
            loss = graph.loss_and_backward(images[idx], train_set.labels[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b} (seed {config.seed})"
                )
            opt.step(graph)
            total += loss * len(idx)
            seen += len(idx)
        graph.clear()
        val_acc = evaluate(model, val_set).accuracy
        rec = EpochRecord(epoch, total / seen, val_acc, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d loss %.4f val %.4f (%.1fs)", epoch, rec.train_loss, val_acc, rec.seconds)
        if val_acc > best_acc:
            best_acc, best_params = val_acc, model.copy_params()
            history.best_epoch = epoch
        if config.checkpoint_interval and config.checkpoint_dir and epoch % config.checkpoint_interval == 0:
            out = Path(config.checkpoint_dir)
            out.mkdir(parents=True, exist_ok=True)
            model.save(out / f"epoch{epoch:03d}.tnnw")
    model.set_params(best_params)
    return model, history


def save_checkpoint(model: TrailModel, path):
    model.save(path)


def load_checkpoint(path) -> TrailModel:
    return TrailModel.load(path)


@dataclass
class AblationResult:
    top_to_bottom: EvalReport
    bottom_to_top: EvalReport
    param_counts: tuple[int, int]

    @property
    def gap(self) -> float:
        return self.top_to_bottom.accuracy - self.bottom_to_top.accuracy


def ablate_row_order(
    config: TrainConfig, train_set: Dataset, val_set: Dataset, test_set: Dataset
) -> AblationResult:
    """Train two RNNs that differ only in row order and evaluate both."""
    if config.spec.kind != "rnn":
        raise ConfigurationError(f"row-order ablation needs an rnn config, got {config.spec.kind}")
    reports, counts = [], []
    for order in ("top-to-bottom", "bottom-to-top"):
        cfg = replace(config, spec=replace(config.spec, row_order=order))
        model, _ = train(cfg, train_set, val_set)
        reports.append(evaluate(model, test_set))
        counts.append(model.param_count())
    return AblationResult(reports[0], reports[1], tuple(counts))
