"""Losses, the Adagrad update and the epoch loop."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteLoss
from .model import TRAINABLE_KEYS, backward, forward, predict
from .regularizer import filter_matrix, scatter_filter_grad, similarity_regularizer
from .spec import Conv

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ADAGRAD_EPS = 1e-8
INITIAL_LR = 1e-2
DECAY_FACTOR = math.sqrt(0.1)
LR_FLOOR = 1e-5


def one_hot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def weighted_cross_entropy(probs, labels_onehot, weights):
    """Batch mean of sum_k w_k * (-y_k log p_k)."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels_onehot, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if probs.shape != y.shape or w.shape != (probs.shape[1],):
        raise ValueError(f"shapes {probs.shape}, {y.shape}, {w.shape} disagree")
    logp = np.log(np.clip(probs, PROB_FLOOR, 1.0))
    return float(-(y * w * logp).sum(axis=1).mean())


def weighted_cross_entropy_grad(probs, labels_onehot, weights):
    """d loss / d logits for a softmax output."""
    yw = labels_onehot * weights
    return (yw.sum(axis=1, keepdims=True) * probs - yw) / probs.shape[0]


def regularizer_terms(model, pairs):
    """Regularizer value and per-conv-layer weight gradients for ``pairs``."""
    keys = sorted({p.layers for p in pairs})
    filters = {key: filter_matrix(model, key) for key in keys}
    r, g = similarity_regularizer(filters, pairs)
    layer_grads = {}
    for key in keys:
        for idx, gw in scatter_filter_grad(g[key], model, key).items():
            layer_grads[idx] = layer_grads.get(idx, 0.0) + gw
    return r, layer_grads


def loss_and_grads(model, spec, x, y, weights, reg_pairs=None, rng=None):
    """Total objective (weighted CE + regularizer) and gradients, train mode."""
    probs, caches = forward(model, spec, x, train_mode=True, rng=rng, return_cache=True)
    ce = weighted_cross_entropy(probs, y, weights)
    grads, _ = backward(model, spec, caches,
                        weighted_cross_entropy_grad(probs, y, weights))
    reg = 0.0
    if reg_pairs:
        reg, reg_grads = regularizer_terms(model, reg_pairs)
        for idx, gw in reg_grads.items():
            grads[idx]["W"] = grads[idx]["W"] + gw
    return ce, reg, grads


def adagrad_update(model, spec, grads, lr):
    for layer, p, acc, g in zip(spec.layers, model.params, model.accum, grads):
        if not getattr(layer, "trainable", False):
            continue
        for key in TRAINABLE_KEYS:
            if key not in g:
                continue
            acc[key] += g[key] * g[key]
            p[key] -= lr * g[key] / (np.sqrt(acc[key]) + ADAGRAD_EPS)


def train_step(model, spec, x, y, weights, reg_pairs=None, lr=INITIAL_LR, rng=None):
    """One Adagrad step on a batch; updates ``model`` in place.

    Returns ``(model, {"ce", "reg", "total"})``.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    ce, reg, grads = loss_and_grads(model, spec, x, y, weights, reg_pairs, rng)
    total = ce + reg
    if not np.isfinite(total):
        raise NonFiniteLoss(f"loss became {total} (ce={ce}, reg={reg})")
    adagrad_update(model, spec, grads, lr)
    return model, {"ce": ce, "reg": reg, "total": total}


class PlateauDecay:
    """Multiply the rate by sqrt(0.1) after any epoch whose validation loss
    exceeds the previous epoch's, never going below ``floor``."""

    def __init__(self, lr=INITIAL_LR, factor=DECAY_FACTOR, floor=LR_FLOOR):
        self.lr = lr
        self.factor = factor
        self.floor = floor
        self.previous = None

    def step(self, val_loss):
        if self.previous is not None and val_loss > self.previous:
            self.lr = max(self.lr * self.factor, self.floor)
        self.previous = val_loss
        return self.lr


@dataclass
class SnapshotStore:
    """Copies of eligible conv weights taken at the end of every epoch."""

    threshold: int = 16
    layers: list = None
    snapshots: dict = field(default_factory=dict)

    def eligible(self, spec):
        """Conv layers to record: the explicit ``layers`` list, else by threshold."""
        if self.layers is not None:
            return list(self.layers)
        return eligible_conv_layers(spec, self.threshold)

    def record(self, model, spec):
        for idx in self.eligible(spec):
            self.snapshots.setdefault(idx, []).append(model.params[idx]["W"].copy())

    def epochs(self, layer):
        return len(self.snapshots.get(layer, []))

    def clear(self):
        self.snapshots.clear()


def evaluate(model, spec, data, weights=None):
    """(accuracy, weighted loss) in eval mode."""
    probs = predict(model, spec, data.images)
    acc = float(np.mean(probs.argmax(axis=1) == data.labels))
    if weights is None:
        weights = np.ones(spec.classes)
    loss = weighted_cross_entropy(probs, one_hot(data.labels, spec.classes), weights)
    return acc, loss


def evaluate_accuracy(model, spec, data):
    return evaluate(model, spec, data)[0]


def train(model, spec, train_data, val_data, epochs, weights, reg_pairs=None,
          snapshot_store=None, rng=None, lr=INITIAL_LR, batch_size=32,
          restore_best=True):
    """Train for ``epochs`` epochs with plateau decay.

    After each epoch the eligible conv filters are copied into
    ``snapshot_store`` (when given).  With ``restore_best`` the returned model
    holds the weights of the epoch with the highest validation accuracy
    (earliest on ties), so the returned accuracy describes the returned model.

    Returns ``(model, best_val_accuracy, epoch_log)``.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    weights = np.asarray(weights, dtype=np.float64)
    y_all = one_hot(train_data.labels, spec.classes)
    sched = PlateauDecay(lr)
    best_acc, best_state = -1.0, None
    history = []
    n = len(train_data.labels)
    for epoch in range(epochs):
        lr_used = sched.lr
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, parts = train_step(model, spec, train_data.images[idx], y_all[idx],
                                  weights, reg_pairs, lr_used, rng)
            losses.append(parts["total"])
        val_acc, val_loss = evaluate(model, spec, val_data, weights)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss became {val_loss} at epoch {epoch}")
        sched.step(val_loss)
        if snapshot_store is not None:
            snapshot_store.record(model, spec)
        if val_acc > best_acc:
            best_acc = val_acc
            if restore_best:
                best_state = model.copy()
        history.append({"epoch": epoch, "lr": lr_used, "train_loss": float(np.mean(losses)),
                        "val_loss": val_loss, "val_accuracy": val_acc})
        log.debug("epoch %d lr=%.3g train=%.4g val_loss=%.4g val_acc=%.4f",
                  epoch, lr_used, history[-1]["train_loss"], val_loss, val_acc)
    if restore_best and best_state is not None:
        model.params, model.accum = best_state.params, best_state.accum
    return model, best_acc, history


def eligible_conv_layers(spec, threshold):
    return [i for i, layer in enumerate(spec.layers)
            if isinstance(layer, Conv) and layer.filters >= max(threshold, 2)]
