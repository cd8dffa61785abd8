"""Minibatch training loop and the two optimizers (SGD+momentum, Adam).

Training never mutates the caller's network: it clones, trains the clone,
and returns it with per-epoch mean losses recorded. A non-finite loss
aborts with the last epoch that still had a finite loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, NumericError, ParameterError, TrainingDiverged
from ..tensor import Rng
from .network import (
    STREAM_SHUFFLE,
    STREAM_TRAIN_DROPOUT,
    Network,
    backward,
    predict_proba,
)


@dataclass
class TrainConfig:
    optimizer: str = "adam"          # "sgd" | "adam"
    lr: float = 1e-3
    momentum: float = 0.9            # sgd only
    epochs: int = 10
    batch_size: int = 64
    shuffle_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "lr": self.lr,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "shuffle_seed": self.shuffle_seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**{k: d[k] for k in TrainConfig().to_dict() if k in d})


class Sgd:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v *= self.momentum
            v -= self.lr * grads[name]
            self._velocity[name] = v
            p += v


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.lr, config.momentum)
    if config.optimizer == "adam":
        return Adam(config.lr)
    raise ParameterError(f"unknown optimizer {config.optimizer!r}")


def train(net: Network, dataset, config: TrainConfig) -> Network:
    """Train a private copy of `net` on a LabeledDataset; returns the copy."""
    if config.epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {config.epochs}")
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")

    net = net.clone()
    optimizer = make_optimizer(config)
    shuffle_rng = Rng(config.shuffle_seed, STREAM_SHUFFLE)
    dropout_rng = Rng(net.spec.seed, STREAM_TRAIN_DROPOUT)
    images, labels = dataset.images, dataset.labels
    n = len(dataset)

    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = backward(
                    net, images[idx], labels[idx], mode="train", rng=dropout_rng
                )
            except NumericError as err:
                raise TrainingDiverged(
                    f"loss went non-finite after epoch {net.epochs_completed} "
                    f"({err})",
                    last_finite_epoch=net.epochs_completed,
                ) from err
            optimizer.step(net.parameters(), grads)
            total += loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(
                f"mean epoch loss non-finite after epoch {net.epochs_completed}",
                last_finite_epoch=net.epochs_completed,
            )
        net.epoch_losses.append(epoch_loss)
        net.epochs_completed += 1
    return net


def accuracy(net: Network, dataset) -> float:
    probs = predict_proba(net, dataset.images)
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))
