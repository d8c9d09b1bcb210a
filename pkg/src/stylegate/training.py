"""The three training procedures: baseline/feature classifiers, the style
generator, and the license model.

All of them run plain or momentum SGD over seeded minibatch streams and are
deterministic functions of (initial checkpoint, data, config).  Gradients are
accumulated in float64; checkpoints are emitted in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, softmax
from .datasets import Dataset, StylePatchSet, TripletSource, derive_seed
from .losses import (GeneratorLossConfig, LicenseLossConfig,
                     combined_license_loss, cross_entropy,
                     generator_perceptual_loss)
from .nets import (Network, NetworkCheckpoint, classifier_forward,
                   generator_forward)


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    optimizer: str = "momentum"  # "momentum" | "sgd"
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.optimizer not in ("momentum", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise TrainingError("momentum must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    parts: dict[str, float]
    metrics: dict[str, float]


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def totals(self) -> list[float]:
        return [r.loss_total for r in self.records]


class SGD:
    """Momentum SGD: v <- m*v + g, p <- p - lr*v (plain SGD when m = 0)."""

    def __init__(self, params: list[Tensor], learning_rate: float, momentum: float):
        self.params = params
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.learning_rate * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _make_optimizer(net: Network, cfg: TrainConfig) -> SGD:
    momentum = cfg.momentum if cfg.optimizer == "momentum" else 0.0
    return SGD(net.parameters(), cfg.learning_rate, momentum)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """The canonical per-epoch shuffle; shared with the triplet source so a
    degenerate license run replays a plain classifier run batch for batch."""
    return np.random.default_rng(derive_seed(seed, epoch)).permutation(n)


def _dataset_accuracy(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.images[start:start + batch_size]
        logits, _, _ = classifier_forward(net, chunk.astype(np.float64))
        correct += int((logits.data.argmax(axis=1)
                        == dataset.labels[start:start + batch_size]).sum())
    return correct / len(dataset)


def train_classifier(data: Dataset, cfg: TrainConfig,
                     init: NetworkCheckpoint) -> tuple[NetworkCheckpoint, TrainHistory]:
    """Standard minibatch cross-entropy training of a classifier network."""
    cfg.validate()
    if cfg.epochs > 0 and len(data) == 0:
        raise TrainingError("cannot train on an empty dataset")
    history = TrainHistory()
    if cfg.epochs == 0:
        return init, history
    net = Network.from_checkpoint(init, trainable=True)
    optimizer = _make_optimizer(net, cfg)
    for epoch in range(cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, len(data))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, _, _ = classifier_forward(net, data.images[idx].astype(np.float64))
            loss = cross_entropy(softmax(logits, axis=1), data.labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)
        mean_loss = loss_sum / len(data)
        history.records.append(EpochRecord(
            epoch=epoch, loss_total=mean_loss, parts={"ce": mean_loss},
            metrics={"train_accuracy": _dataset_accuracy(net, data)}))
    return net.to_checkpoint(seed=init.seed, fingerprint=init.fingerprint), history


def train_generator(content: Dataset, style: StylePatchSet,
                    featnet: NetworkCheckpoint, cfg: TrainConfig,
                    gcfg: GeneratorLossConfig,
                    init: NetworkCheckpoint) -> tuple[NetworkCheckpoint, TrainHistory]:
    """Optimize the style generator against the frozen feature network."""
    cfg.validate()
    gcfg.validate()
    if cfg.epochs > 0 and len(content) == 0:
        raise TrainingError("cannot train on an empty dataset")
    history = TrainHistory()
    if cfg.epochs == 0:
        return init, history
    frozen = Network.from_checkpoint(featnet, trainable=False)
    net = Network.from_checkpoint(init, trainable=True)
    optimizer = _make_optimizer(net, cfg)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, epoch))
        order = rng.permutation(len(content))
        loss_sum = 0.0
        part_sums = {"content": 0.0, "style": 0.0, "tv": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = content.images[idx].astype(np.float64)
            patches = style.sample(len(idx), rng).astype(np.float64)
            output = generator_forward(net, batch)
            loss, parts = generator_perceptual_loss(batch, output, patches,
                                                    frozen, gcfg)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)
            for key, value in parts.items():
                part_sums[key] += value * len(idx)
        history.records.append(EpochRecord(
            epoch=epoch, loss_total=loss_sum / len(content),
            parts={k: v / len(content) for k, v in part_sums.items()},
            metrics={}))
    return net.to_checkpoint(seed=init.seed, fingerprint=init.fingerprint), history


def train_license_model(triplets: TripletSource, cfg: TrainConfig,
                        lcfg: LicenseLossConfig,
                        init: NetworkCheckpoint) -> tuple[NetworkCheckpoint, TrainHistory]:
    """Train the license classifier on aligned triplet batches.

    The per-epoch history carries the unweighted part values plus accuracy
    snapshots on the licensed and original corpora backing the source.
    """
    cfg.validate()
    lcfg.validate()
    if cfg.epochs > 0 and len(triplets.original) == 0:
        raise TrainingError("cannot train on an empty triplet source")
    history = TrainHistory()
    if cfg.epochs == 0:
        return init, history
    net = Network.from_checkpoint(init, trainable=True)
    optimizer = _make_optimizer(net, cfg)
    total_items = len(triplets.original)
    for epoch in range(cfg.epochs):
        loss_sum = 0.0
        part_sums = {"ce": 0.0, "contrastive": 0.0, "style": 0.0}
        for batch in triplets.epoch_batches(epoch):
            loss, parts = combined_license_loss(batch, net, lcfg)
            optimizer.zero_grad()
            if loss.requires_grad:
                loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(batch)
            for key, value in parts.items():
                part_sums[key] += value * len(batch)
        history.records.append(EpochRecord(
            epoch=epoch, loss_total=loss_sum / total_items,
            parts={k: v / total_items for k, v in part_sums.items()},
            metrics={
                "license_accuracy": _dataset_accuracy(net, triplets.licensed),
                "original_accuracy": _dataset_accuracy(net, triplets.original),
            }))
    return net.to_checkpoint(seed=init.seed, fingerprint=init.fingerprint), history
