"""Mini-batch training, evaluation and single-trajectory prediction."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .dataset import (DIMS, HEAVY, LIGHT, DatasetManifest, NormalizationStats,
                      compute_normalization, prepare_batch)
from .records import Trajectory

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "train_acc", "val_acc", "seconds")


class TrainingError(RuntimeError):
    pass


class DimsMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    truncation_window: int | None = 64  # None -> full BPTT
    target_len: int = 120
    dims: str = "xyz"
    seed: int = 0
    early_stop_patience: int = 15
    hidden_size: int = 64
    n_layers: int = 2
    dropout_rate: float = 0.8
    clip_norm: float | None = 5.0
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.08
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.target_len < 1:
            raise ValueError("target_len must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.dims not in DIMS:
            raise ValueError(f"dims must be one of {sorted(DIMS)}")
        if self.truncation_window is not None and self.truncation_window < 0:
            raise ValueError("truncation_window must be >= 0 or None")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    @property
    def input_size(self) -> int:
        return len(DIMS[self.dims])

    def hyperparameters(self) -> dict:
        """Everything except the input dimensionality."""
        d = asdict(self)
        d.pop("dims")
        return d


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float

    def model_values(self) -> tuple:
        """The deterministic part of the row (wall time excluded)."""
        return (self.epoch, self.train_loss, self.train_acc, self.val_acc)


@dataclass
class Checkpoint:
    params: nn.ModelParams
    stats: NormalizationStats
    dims: str
    target_len: int
    config: dict = field(default_factory=dict)
    epoch: int = 0
    val_acc: float = float("nan")

    def save(self, path) -> None:
        meta = {"dims": self.dims, "target_len": self.target_len, "config": self.config,
                "epoch": self.epoch, "val_acc": self.val_acc}
        nn.save_checkpoint(path, self.params, self.stats, meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, std, meta = nn.load_checkpoint(path)
        if std is None:
            raise ValueError(f"{path}: checkpoint carries no normalization stats")
        return cls(params, NormalizationStats(std), meta["dims"], int(meta["target_len"]),
                   meta.get("config", {}), int(meta.get("epoch", 0)),
                   float(meta.get("val_acc", float("nan"))))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    seconds: float

    @property
    def best_val_acc(self) -> float:
        return self.checkpoint.val_acc


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true label, cols: predicted
    n: int


def split_validation(trajectories, fraction: float, seed: int):
    """Seeded, class-stratified hold-out; returns (train, val)."""
    rng = np.random.default_rng([int(seed), 7])
    train_idx, val_idx = [], []
    for label in (HEAVY, LIGHT):
        idx = np.array([i for i, t in enumerate(trajectories) if t.label == label], dtype=np.int64)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(np.floor(fraction * len(idx)))
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    train_idx.sort()
    val_idx.sort()
    return [trajectories[i] for i in train_idx], [trajectories[i] for i in val_idx]


def _length_bucketed_batches(lengths, batch_size, rng, bucket=8):
    """Shuffled batches of similar-length sequences (less padding per batch)."""
    n = len(lengths)
    perm = rng.permutation(n)
    keys = (lengths[perm] // bucket) + rng.random(n)
    order = perm[np.argsort(keys, kind="stable")]
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def _predict_logits(params, X, L, batch_size):
    if len(L) == 0:
        return np.zeros((0, nn.N_CLASSES))
    out = np.empty((len(L), nn.N_CLASSES))
    order = np.argsort(L, kind="stable")
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        out[idx], _ = nn.forward(X[idx], L[idx], params, mode="eval")
    return out


def _accuracy(params, X, L, y, batch_size) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(_predict_logits(params, X, L, batch_size).argmax(axis=1) == y))


def train_on(train_trajs, config: TrainConfig, val_trajs=None) -> TrainResult:
    """Train on explicit trajectory lists.

    Normalization stats come from ``train_trajs`` only.  If ``val_trajs`` is
    None the validation set is carved out of ``train_trajs``.  Model selection
    uses validation accuracy, or training accuracy when no validation data
    remain.
    """
    t_start = time.perf_counter()
    train_trajs = list(train_trajs)
    if val_trajs is None:
        train_trajs, val_trajs = split_validation(train_trajs, config.val_fraction, config.seed)
    if not train_trajs:
        raise TrainingError("empty training split")
    stats = compute_normalization(train_trajs)
    X, L, y = prepare_batch(train_trajs, stats, config.target_len, config.dims)
    if np.any(y < 0):
        raise TrainingError("training trajectories must be labeled")
    if val_trajs:
        Xv, Lv, yv = prepare_batch(val_trajs, stats, config.target_len, config.dims)
    else:
        Xv, Lv, yv = X[:0], L[:0], y[:0]

    params = nn.init_params(config.input_size, config.hidden_size, config.n_layers,
                            config.dropout_rate, seed=config.seed, scale=config.init_scale)
    adam = nn.AdamState.for_params(params)
    shuffle_rng = np.random.default_rng([int(config.seed), 1])
    dropout_rng = np.random.default_rng([int(config.seed), 2])

    def selection_score(train_acc, val_acc):
        return val_acc if len(yv) else train_acc

    history: list[EpochMetrics] = []
    best = None
    best_score, best_epoch = -np.inf, 0
    stale = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total_loss = 0.0
        for b, idx in enumerate(_length_bucketed_batches(L, config.batch_size, shuffle_rng)):
            logits, tape = nn.forward(X[idx], L[idx], params, mode="train", rng=dropout_rng)
            batch_loss = nn.loss(logits, y[idx])
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            total_loss += batch_loss * len(idx)
            grads = nn.backward(tape, y[idx], params, config.truncation_window)
            if config.clip_norm is not None:
                nn.clip_gradients(grads, config.clip_norm)
            try:
                nn.adam_update(params, grads, adam, config.learning_rate, config.beta1,
                               config.beta2, config.adam_eps)
            except nn.NonFiniteGradientError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
        train_acc = _accuracy(params, X, L, y, config.eval_batch_size)
        val_acc = _accuracy(params, Xv, Lv, yv, config.eval_batch_size)
        history.append(EpochMetrics(epoch, total_loss / len(y), train_acc, val_acc,
                                    time.perf_counter() - t0))
        log.debug("epoch %d loss %.4f train %.3f val %.3f", epoch, total_loss / len(y),
                  train_acc, val_acc)
        score = selection_score(train_acc, val_acc)
        if score > best_score:
            best_score, best_epoch, best = score, epoch, params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break

    if best is None:  # zero epochs
        best = params.copy()
        best_score = selection_score(_accuracy(params, X, L, y, config.eval_batch_size),
                                     _accuracy(params, Xv, Lv, yv, config.eval_batch_size))
    ckpt = Checkpoint(best, stats, config.dims, config.target_len, asdict(config), best_epoch,
                      float(history[best_epoch - 1].val_acc) if history else float(best_score))
    return TrainResult(ckpt, history, time.perf_counter() - t_start)


def train(manifest: DatasetManifest, config: TrainConfig) -> TrainResult:
    trajs = manifest.load_split("train")
    if not trajs:
        raise TrainingError("manifest has no training trajectories")
    return train_on(trajs, config)


def _check_dims(checkpoint: Checkpoint, dims: str | None):
    if dims is not None and dims != checkpoint.dims:
        raise DimsMismatchError(f"checkpoint was trained on '{checkpoint.dims}', not '{dims}'")
    if checkpoint.params.input_size != len(DIMS[checkpoint.dims]):
        raise DimsMismatchError("checkpoint input size does not match its dims")


def evaluate_trajectories(checkpoint: Checkpoint, trajectories, dims: str | None = None,
                          batch_size: int = 256) -> EvalResult:
    """Eval-mode accuracy using the checkpoint's own normalization stats."""
    _check_dims(checkpoint, dims)
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("nothing to evaluate")
    X, L, y = prepare_batch(trajectories, checkpoint.stats, checkpoint.target_len, checkpoint.dims)
    pred = _predict_logits(checkpoint.params, X, L, batch_size).argmax(axis=1)
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return EvalResult(float(np.mean(pred == y)), confusion, len(y))


def evaluate(checkpoint: Checkpoint, manifest: DatasetManifest, split: str = "test",
             dims: str | None = None) -> EvalResult:
    return evaluate_trajectories(checkpoint, manifest.load_split(split), dims)


def predict(checkpoint: Checkpoint, trajectory: Trajectory):
    """Return ``(label, probabilities)`` for one trajectory."""
    if len(trajectory.samples) == 0:
        raise ValueError("empty trajectory")
    if trajectory.z_only and checkpoint.dims != "z":
        raise DimsMismatchError("z-only trajectory needs a checkpoint trained on 'z'")
    X, L, _ = prepare_batch([trajectory], checkpoint.stats, checkpoint.target_len, checkpoint.dims)
    logits, _ = nn.forward(X, L, checkpoint.params, mode="eval")
    probs = nn.softmax(logits[0])
    return int(np.argmax(probs)), probs


def write_metrics_csv(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for m in history:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.train_acc), repr(m.val_acc),
                        f"{m.seconds:.3f}"])


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochMetrics(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                         float(r["val_acc"]), float(r["seconds"])) for r in rows]


def config_with(config: TrainConfig, **overrides) -> TrainConfig:
    return replace(config, **overrides)
