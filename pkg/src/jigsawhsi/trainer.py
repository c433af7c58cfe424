"""Optimizers, the epoch loop with patience-based early stopping, and evaluation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import Model
from .metrics import ConfusionMatrix
from .tiler import TileSet, batch_iter, split_indices

_MODULE = "trainer"
log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam", "adadelta")
MONITORS = ("val_accuracy", "val_loss", "train_loss")
MIN_DELTA = 1e-6


# ---------------------------------------------------------------- optimizers

class SGD:
    def __init__(self, learning_rate):
        self.learning_rate = learning_rate

    def init_state(self, params):
        return {}

    def update(self, params, grads, state):
        lr = self.learning_rate
        for p, g in zip(params, grads):
            p -= p.dtype.type(lr) * g


class Adam:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-7):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon

    def init_state(self, params):
        return {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}

    def update(self, params, grads, state):
        state["t"] += 1
        t = state["t"]
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**t, 1.0 - b2**t
        for p, g, m, v in zip(params, grads, state["m"], state["v"]):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            step = self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            p -= step.astype(p.dtype, copy=False)


class Adadelta:
    """Adadelta with the learning rate applied as a multiplier on the update."""

    def __init__(self, learning_rate, rho=0.95, epsilon=1e-7):
        self.learning_rate = learning_rate
        self.rho, self.epsilon = rho, epsilon

    def init_state(self, params):
        return {"acc_grad": [np.zeros_like(p) for p in params], "acc_delta": [np.zeros_like(p) for p in params]}

    def update(self, params, grads, state):
        rho, eps = self.rho, self.epsilon
        for p, g, ag, ad in zip(params, grads, state["acc_grad"], state["acc_delta"]):
            ag *= rho
            ag += (1.0 - rho) * g * g
            delta = -np.sqrt(ad + eps) / np.sqrt(ag + eps) * g
            ad *= rho
            ad += (1.0 - rho) * delta * delta
            p += (self.learning_rate * delta).astype(p.dtype, copy=False)


def make_optimizer(kind: str, learning_rate: float):
    kind = kind.strip().lower()
    if kind not in OPTIMIZERS:
        raise ValidationError(f"unknown optimizer {kind!r}; expected one of SGD, Adam, Adadelta", _MODULE)
    if not learning_rate > 0:
        raise ValidationError(f"learning_rate must be > 0, got {learning_rate}", _MODULE)
    return {"sgd": SGD, "adam": Adam, "adadelta": Adadelta}[kind](learning_rate)


def optimizer_step(kind, state, params, grads, lr):
    """Functional single step: updates ``params`` in place and returns (params, state).

    Pass ``state=None`` on the first call.
    """
    opt = make_optimizer(kind, lr)
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValidationError("parameter and gradient shapes differ", _MODULE)
    if state is None:
        state = opt.init_state(params)
    opt.update(params, grads, state)
    return params, state


# ---------------------------------------------------------------- config / history

@dataclass
class TrainConfig:
    optimizer: str = "adadelta"
    learning_rate: float = 0.1
    batch_size: int = 106
    max_epochs: int = 500
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 1337
    monitor: str = "val_accuracy"
    eval_batch_size: int = 256

    def __post_init__(self):
        self.optimizer = self.optimizer.strip().lower()
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}", _MODULE)
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}", _MODULE)
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1", _MODULE)
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1", _MODULE)
        if self.patience < 1:
            raise ValidationError("patience must be >= 1", _MODULE)
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction must lie in [0, 1), got {self.val_fraction}", _MODULE)
        if self.monitor not in MONITORS:
            raise ValidationError(f"monitor must be one of {', '.join(MONITORS)}", _MODULE)
        if self.monitor.startswith("val_") and self.val_fraction == 0.0:
            raise ValidationError(f"monitor={self.monitor} needs val_fraction > 0", _MODULE)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list, compare=False)
    best_epoch: int = 0
    stopped_epoch: int = 0
    monitor: str = "val_accuracy"

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def monitor_values(self) -> list:
        return getattr(self, {"val_accuracy": "val_accuracy", "val_loss": "val_loss", "train_loss": "train_loss"}[self.monitor])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for i in range(self.epochs):
                writer.writerow([i + 1, repr(self.train_loss[i]), repr(self.train_accuracy[i]),
                                 repr(self.val_loss[i]), repr(self.val_accuracy[i])])


class EarlyStopping:
    """Tracks the monitored value; ``update`` returns True once patience runs out.

    Epochs are 1-based.  Improvement means beating the best value by more than
    ``min_delta``; on ties the earliest epoch stays best.
    """

    def __init__(self, patience: int, mode: str = "max", min_delta: float = MIN_DELTA):
        if patience < 1:
            raise ValidationError("patience must be >= 1", _MODULE)
        self.patience = patience
        self.mode = mode
        self.min_delta = min_delta
        self.best = -np.inf if mode == "max" else np.inf
        self.best_epoch = 0
        self.stopped_epoch = 0

    def improved(self, value) -> bool:
        if self.mode == "max":
            return value > self.best + self.min_delta
        return value < self.best - self.min_delta

    def update(self, epoch: int, value: float) -> bool:
        if self.improved(value):
            self.best = value
            self.best_epoch = epoch
        if epoch - self.best_epoch >= self.patience:
            self.stopped_epoch = epoch
            return True
        return False


# ---------------------------------------------------------------- evaluation

def _inference(model: Model, ts: TileSet, batch_size: int):
    """Return (mean cross-entropy, predicted 1-based labels)."""
    preds = np.empty(len(ts), dtype=np.int64)
    total = 0.0
    for start in range(0, len(ts), batch_size):
        x = ts.data[start:start + batch_size]
        y = ts.labels[start:start + batch_size]
        probs = model.forward(x, training=False)
        picked = probs[np.arange(len(y)), y - 1].astype(np.float64)
        total += float(-np.sum(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))
        preds[start:start + len(y)] = np.argmax(probs, axis=1) + 1
    return total / max(len(ts), 1), preds


def evaluate(model: Model, ts: TileSet, batch_size: int = 256, class_names=None) -> tuple[ConfusionMatrix, float]:
    if len(ts) == 0:
        raise ValidationError("cannot evaluate on an empty tile set", _MODULE)
    loss, preds = _inference(model, ts, batch_size)
    cm = ConfusionMatrix.from_labels(ts.labels, preds, model.spec.num_classes, class_names)
    return cm, loss


# ---------------------------------------------------------------- training loop

def split_validation(ts: TileSet, val_fraction: float, seed: int) -> tuple[TileSet, TileSet | None]:
    if val_fraction == 0.0:
        return ts, None
    fit_idx, val_idx = split_indices(ts.labels, 1.0 - val_fraction, seed, ts.num_classes)
    return ts.subset(fit_idx), ts.subset(val_idx)


def train(model: Model, tiles: TileSet, cfg: TrainConfig, progress=None, optimizer=None) -> tuple[Model, TrainHistory]:
    """Fit ``model`` in place and return it with the best-epoch parameters restored.

    ``optimizer`` overrides the one named in ``cfg`` (any object with
    ``init_state`` and ``update``).  ``progress(epoch, history)`` is called after
    every epoch.
    """
    if len(tiles) == 0:
        raise ValidationError("no training tiles", _MODULE)
    k = model.spec.num_classes
    if tiles.num_classes != k:
        raise ValidationError(f"tiles have {tiles.num_classes} classes, network has {k}", _MODULE)
    counts = tiles.class_counts
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise ValidationError(f"classes {empty} have no training tiles", _MODULE)

    fit_set, val_set = split_validation(tiles, cfg.val_fraction, cfg.seed)
    if val_set is not None and len(val_set) == 0:
        raise ValidationError("validation split is empty; raise val_fraction or add samples", _MODULE)
    opt = optimizer if optimizer is not None else make_optimizer(cfg.optimizer, cfg.learning_rate)
    params = model.params()
    state = opt.init_state(params)
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    stopper = EarlyStopping(cfg.patience, mode="max" if cfg.monitor == "val_accuracy" else "min")
    history = TrainHistory(monitor=cfg.monitor)
    best_state = model.get_state()

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss_sum, correct = 0.0, 0
        for x, y in batch_iter(fit_set, cfg.batch_size, shuffle_seed=cfg.seed, epoch=epoch, dtype=model.dtype):
            model.zero_grad()
            model.logits(x, training=True, rng=dropout_rng)
            loss, probs = model.backward(y)
            opt.update(params, model.grads(), state)
            loss_sum += loss * len(x)
            correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(y, axis=1)))
        history.train_loss.append(loss_sum / len(fit_set))
        history.train_accuracy.append(100.0 * correct / len(fit_set))
        if val_set is not None:
            cm, vloss = evaluate(model, val_set, cfg.eval_batch_size)
            history.val_loss.append(vloss)
            history.val_accuracy.append(100.0 * np.trace(cm.counts) / cm.total)
        else:
            history.val_loss.append(float("nan"))
            history.val_accuracy.append(float("nan"))
        history.epoch_seconds.append(time.perf_counter() - t0)

        value = history.monitor_values()[-1]
        if not np.isfinite(value):
            raise ValidationError(f"monitored value became non-finite at epoch {epoch}", _MODULE)
        if stopper.improved(value):
            best_state = model.get_state()
        stop = stopper.update(epoch, value)
        if progress is not None:
            progress(epoch, history)
        log.debug("epoch %d loss %.4f acc %.2f val_acc %.2f", epoch, history.train_loss[-1],
                  history.train_accuracy[-1], history.val_accuracy[-1])
        if stop:
            break

    history.best_epoch = stopper.best_epoch
    history.stopped_epoch = stopper.stopped_epoch or history.epochs
    model.set_state(best_state)
    return model, history


def write_history(history: TrainHistory, path) -> None:
    history.write_csv(Path(path))
