"""Mini-batch Adam training and evaluation over a dataset manifest."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .metrics import MetricsReport, classification_report
from .nn import Network, TrainConfig, adam_step, l2_penalty, softmax_cross_entropy
from .preprocess import frame_to_tensor, flip_batch
from .synth import DatasetManifest, read_frame

log = logging.getLogger(__name__)

# stream tags keep the shuffle / augmentation / dropout draws independent
_SHUFFLE, _FLIP, _DROPOUT = 0x5F, 0xF1, 0xD0


class NumericError(RuntimeError):
    """Loss became NaN or infinite."""


def load_split(manifest: DatasetManifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Preprocessed tensors ``[n, 1, 227, 227]`` and 0-based labels for one split."""
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no {split!r} entries")
    x = np.empty((len(entries), 1, 227, 227), dtype=np.float32)
    for i, e in enumerate(entries):
        x[i] = frame_to_tensor(read_frame(manifest.resolve(e)))
    return x, np.array([e.level - 1 for e in entries], dtype=np.int64)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float  # data loss + L2 penalty, averaged over the epoch's batches
    data_loss: float
    penalty: float
    val_accuracy: float


@dataclass
class TrainResult:
    network: Network
    best_network: Network
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)

    def log_text(self) -> str:
        rows = ["epoch\ttrain_loss\tdata_loss\tl2_penalty\tval_accuracy"]
        rows += [f"{r.epoch}\t{r.train_loss:.6f}\t{r.data_loss:.6f}\t{r.penalty:.6f}\t{r.val_accuracy:.4f}"
                 for r in self.history]
        return "\n".join(rows) + "\n"


def predict(network: Network, x: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class indices (ties to the lower index) and probability rows."""
    probs = network.predict_proba(x, batch_size)
    return probs.argmax(axis=1), probs


def accuracy(network: Network, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(network, x)[0] == y))


def evaluate(network: Network, x: np.ndarray, y: np.ndarray) -> MetricsReport:
    pred, _ = predict(network, x)
    return classification_report((pred + 1).tolist(), (y + 1).tolist())


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def train(network: Network, train_data, val_data, config: TrainConfig,
          augment: bool = True, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``network`` in place for ``config.epochs`` epochs.

    Epoch 0 records the untrained network's validation accuracy. The best
    network is the one with the highest validation accuracy, earliest epoch
    on ties.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    n = len(x_train)
    seed = config.seed
    dtype = network.dtype

    first = EpochRecord(0, float("nan"), float("nan"), float("nan"), accuracy(network, x_val, y_val))
    history = [first]
    if on_epoch:
        on_epoch(first)
    best = copy.deepcopy(network.states)
    best_epoch, best_acc = 0, first.val_accuracy

    for epoch in range(1, config.epochs + 1):
        order = _rng(seed, _SHUFFLE, epoch).permutation(n)
        totals = np.zeros(2)
        batches = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb = x_train[idx]
            if augment:
                xb = flip_batch(xb, [_rng(seed, _FLIP, epoch, int(i)) for i in idx])
            # divergence is caught by the finiteness check below
            with np.errstate(over="ignore", invalid="ignore"):
                logits, caches = network.forward(xb, rng=_rng(seed, _DROPOUT, epoch, b))
                data_loss, _, grad = softmax_cross_entropy(logits.astype(np.float64), y_train[idx])
            penalty, l2_grads = l2_penalty(network.states, config.l2_lambda)
            if not np.isfinite(data_loss + penalty):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = network.backward(grad.astype(dtype), caches)
            for state, g, g2 in zip(network.states, grads, l2_grads):
                if config.l2_lambda:
                    g[0] = g[0] + g2
                adam_step(state, g, config)
            totals += (data_loss, penalty)
            batches += 1
        data_loss, penalty = (float(v) for v in totals / batches)
        rec = EpochRecord(epoch, data_loss + penalty, data_loss, penalty, accuracy(network, x_val, y_val))
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if rec.val_accuracy > best_acc:
            best, best_epoch, best_acc = copy.deepcopy(network.states), epoch, rec.val_accuracy

    best_net = Network(network.layers, network.input_shape, best)
    return TrainResult(network, best_net, best_epoch, history)
