"""SGD-with-momentum training loop, step-decay schedule and evaluation."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AugmentConfig, augment
from .errors import ConfigurationError, TrainingDivergedError
from .nn.init import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    base_lr: float = 0.01
    momentum: float = 0.9
    lr_drop_epochs: tuple = (75, 120, 170)
    lr_drop_factor: float = 0.1
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(self.lr_drop_epochs))
        if isinstance(self.augmentation, dict):
            object.__setattr__(self, "augmentation", AugmentConfig(**self.augmentation))
        if self.epochs < 1 or self.batch_size < 1 or self.base_lr <= 0 or self.lr_drop_factor <= 0:
            raise ConfigurationError("epochs, batch_size, base_lr and lr_drop_factor must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])) or any(not 0 < d < self.epochs for d in drops):
            raise ConfigurationError(f"lr drop epochs must be strictly increasing within (0, {self.epochs}), "
                                     f"got {drops}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lr_at_epoch(cfg, epoch):
    """Learning rate for 0-indexed ``epoch``; a drop listed at epoch e applies from e onwards."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.base_lr * cfg.lr_drop_factor ** drops


def sgd_momentum_step(params, grads, velocity, lr, momentum):
    """Classical momentum, in place: ``v = momentum * v + g; p = p - lr * v``."""
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch {p.shape}, {g.shape}, {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params, velocity


class Optimizer:
    """Momentum state bound to a network's parameter list."""

    def __init__(self, network, momentum):
        self.network = network
        self.momentum = momentum
        self.velocity = {(layer.name, key): np.zeros_like(layer.params[key]) for layer, key in network.trainable()}

    def step(self, lr):
        params, grads, vel = [], [], []
        for layer, key in self.network.trainable():
            params.append(layer.params[key])
            grads.append(layer.grads[key].astype(layer.params[key].dtype, copy=False))
            vel.append(self.velocity[(layer.name, key)])
        sgd_momentum_step(params, grads, vel, np.float32(lr) if params[0].dtype == np.float32 else lr,
                          self.momentum)


def evaluate(network, data, batch_size=256):
    """Top-1 accuracy with infer-mode forward passes."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for i in range(0, len(data), batch_size):
        logits = network.forward(data.images[i:i + batch_size])
        correct += int(np.sum(logits.argmax(axis=1) == data.labels[i:i + batch_size]))
    return correct / len(data)


def train(network, train_data, cfg, test_data=None, rng=None, on_epoch=None):
    """Train in place. Returns ``(network, history)`` with one dict per epoch."""
    rng = make_rng(cfg.seed) if rng is None else rng
    opt = Optimizer(network, cfg.momentum)
    history = []
    n = len(train_data)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = augment(train_data.images[idx], cfg.augmentation, rng)
            y = train_data.labels[idx]
            loss, _ = network.loss_and_grad(x, y)
            if not np.isfinite(loss):
                layer = network.first_nonfinite(x, train=False)
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch starting {start}", layer)
            opt.step(lr)
            total += loss * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "lr": lr, "train_loss": total / seen,
               "test_acc": evaluate(network, test_data) if test_data is not None else float("nan")}
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f test_acc %.4f", epoch, lr, row["train_loss"], row["test_acc"])
        if on_epoch is not None:
            on_epoch(row)
    return network, history


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "test_acc")


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
