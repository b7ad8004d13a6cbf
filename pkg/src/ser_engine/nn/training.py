"""Mini-batch training loop and prediction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeError, TrainingError
from . import layers as L
from .model import Model
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self):
        return asdict(self)

    def __len__(self):
        return len(self.train_loss)


def evaluate_model(model: Model, x, targets):
    """Inference-mode ``(loss, accuracy)`` on a labelled set."""
    probs = model.predict_proba(x)
    loss = L.cross_entropy(probs, targets)
    acc = float(np.mean(np.argmax(probs, axis=1) == np.argmax(targets, axis=1)))
    return loss, acc


def train(model: Model, x_train, y_train, x_val=None, y_val=None, dropout=True,
          epochs=None, progress=None):
    """Fit ``model`` with Adam and categorical cross-entropy.

    Inputs are already-scaled feature rows and one-hot targets. Batches are
    reshuffled every epoch from a generator seeded by ``config.seed``.
    With a validation set, the parameters of the epoch with the best
    validation accuracy are returned (earliest on ties); otherwise those of
    the last epoch. Per-epoch train loss/accuracy are averages over the
    epoch's batches, in train mode. Returns ``(model, history)``; the model
    passed in is left in its final state.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    x_train = np.asarray(x_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=model.dtype)
    if x_train.shape[0] != y_train.shape[0]:
        raise ShapeError(f"{x_train.shape[0]} inputs but {y_train.shape[0]} targets")
    if x_train.shape[0] == 0:
        raise ShapeError("empty training set")
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = np.asarray(x_val, dtype=model.dtype)
        y_val = np.asarray(y_val, dtype=model.dtype)

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(model.params)
    history = TrainHistory()
    best, best_acc = None, -1.0
    n = x_train.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, probs, grads = model.loss_and_grads(x_train[idx], y_train[idx], rng=rng, dropout=dropout)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            adam_step(model.params, grads, state, cfg.learning_rate,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            loss_sum += loss * idx.size
            correct += int(np.sum(np.argmax(probs, axis=1) == np.argmax(y_train[idx], axis=1)))
        history.train_loss.append(loss_sum / n)
        history.train_accuracy.append(correct / n)
        if has_val:
            vloss, vacc = evaluate_model(model, x_val, y_val)
            history.val_loss.append(vloss)
            history.val_accuracy.append(vacc)
            if vacc > best_acc:
                best_acc, best = vacc, model.copy()
                history.best_epoch = epoch + 1
        msg = (f"epoch {epoch + 1}/{epochs} loss {history.train_loss[-1]:.4f} "
               f"acc {history.train_accuracy[-1]:.3f}")
        if has_val:
            msg += f" val_loss {history.val_loss[-1]:.4f} val_acc {history.val_accuracy[-1]:.3f}"
        log.info(msg)
        if progress is not None:
            progress(epoch, history)
    if best is None:
        best = model.copy()
        history.best_epoch = epochs if epochs else None
    return best, history


def predict(model: Model, features):
    """Class index and probability vector for one feature row.

    Ties go to the lowest class index.
    """
    probs = model.predict_proba(np.asarray(features)[None, :])[0]
    return int(np.argmax(probs)), probs
