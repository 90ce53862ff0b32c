"""Mean-absolute-error loss and SGD with momentum for the conv regressor."""

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def _stack(pairs):
    images = np.stack([p.image for p in pairs])
    targets = np.stack([p.response for p in pairs])
    return images, targets


def loss_and_gradients(model, pairs):
    """MAE over the batch and the gradient of every parameter (same order as ``parameters()``)."""
    if len(pairs) == 0:
        raise ValueError("empty batch")
    images, targets = _stack(pairs)
    model.zero_grad()
    pred = model.forward(images)
    diff = pred - targets.astype(pred.dtype)
    loss = float(np.abs(diff).mean())
    model.backward(np.sign(diff) / diff.size)
    return loss, [g.copy() for _, _, g in model.parameters()]


def train(model, pairs, config, on_epoch=None):
    """SGD with momentum; returns the per-epoch mean loss.

    ``pairs`` is a sequence of projection pairs, or a callable ``(epoch, model)``
    returning the pairs of that epoch (used to regenerate rollouts under a
    curriculum). Deterministic given ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(v) for _, v, _ in model.parameters()]
    curve = []
    for epoch in range(config.epochs):
        data = pairs(epoch, model) if callable(pairs) else pairs
        if len(data) == 0:
            raise ValueError("no training pairs")
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[s:s + config.batch_size]]
            loss, grads = loss_and_gradients(model, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            for (_, value, _), grad, vel in zip(model.parameters(), grads, velocity):
                vel *= config.momentum
                vel -= config.learning_rate * grad
                value += vel
            total += loss * len(batch)
            count += len(batch)
        mean = total / count
        if not np.isfinite(mean):
            raise TrainingDiverged(epoch, mean)
        curve.append(mean)
        log.info("epoch %d: mean loss %.5f over %d pairs", epoch, mean, count)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return curve


def mean_abs_error(model, pairs, batch=16):
    total, n = 0.0, 0
    for s in range(0, len(pairs), batch):
        images, targets = _stack(pairs[s:s + batch])
        total += float(np.abs(model.forward(images) - targets).sum())
        n += targets.size
    return total / n


def write_loss_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "meanLoss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])
