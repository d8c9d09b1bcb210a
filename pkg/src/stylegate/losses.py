"""Differentiable objectives for license training and generator training.

License training minimizes a weighted combination

    total = alpha * ce  +  beta * contrastive  +  gamma * style

where ``ce`` is cross-entropy on the licensed (stylized) images,
``contrastive`` is a hinge that pushes the model's features of original and
licensed versions of the same image at least ``margin`` apart, and ``style``
matches texture statistics (Gram matrices of conv taps) between licensed
images and style patches.  The generator is trained with the classic
perceptual recipe: feature reconstruction + Gram style matching + total
variation.

Every loss is non-negative, reduces over the batch by arithmetic mean, and is
differentiable through the autodiff engine.  Parts with zero weight are
excluded from the total so they contribute exactly nothing to updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (Tensor, as_tensor, clamp_min, log, pick, relu, softmax,
                       sqrt, square)
from .datasets import TripletBatch
from .nets import Network, classifier_forward, featurenet_forward

PROBABILITY_FLOOR = 1e-12
ROW_SUM_TOLERANCE = 1e-4


class LossInputError(ValueError):
    """Raised when loss inputs violate a shape or value precondition."""


@dataclass
class LicenseLossConfig:
    """Weights and knobs of the composite license objective."""

    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.25
    margin: float = 1.0
    phi: float = 1.0
    cosine_epsilon: float = 1e-8
    gram_layers: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise LossInputError("loss weights must be non-negative")
        if self.margin <= 0:
            raise LossInputError("margin must be positive")
        if self.phi < 0:
            raise LossInputError("phi must be non-negative")
        if self.cosine_epsilon <= 0:
            raise LossInputError("cosine_epsilon must be positive")


@dataclass
class GeneratorLossConfig:
    """Weights for the perceptual generator objective."""

    content_weight: float = 1.0
    style_weight: float = 40.0
    tv_weight: float = 0.5
    content_layer: int = 1
    style_layers: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        if self.content_weight < 0 or self.style_weight < 0 or self.tv_weight < 0:
            raise LossInputError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# elementary losses


def cross_entropy(probabilities, labels) -> Tensor:
    """Mean over the batch of -log p(true class).

    ``probabilities`` must be (B, K) with rows summing to 1 within 1e-4;
    probabilities are floored at 1e-12 before the log.
    """
    probabilities = as_tensor(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim != 2:
        raise LossInputError(f"probabilities must be (B, K), got {probabilities.shape}")
    b, k = probabilities.shape
    if labels.shape != (b,):
        raise LossInputError(f"labels must be ({b},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LossInputError("label out of range")
    row_sums = probabilities.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE):
        raise LossInputError("probability rows must sum to 1")
    picked = clamp_min(pick(probabilities, labels), PROBABILITY_FLOOR)
    return -log(picked).mean()


def _row_distances(x: Tensor, y: Tensor, phi: float, eps: float) -> Tensor:
    """Per-row combined Euclidean/cosine distance for (B, n) inputs."""
    diff = x - y
    squared = square(diff).sum(axis=1)
    dot = (x * y).sum(axis=1)
    nx = clamp_min(sqrt(square(x).sum(axis=1)), eps)
    ny = clamp_min(sqrt(square(y).sum(axis=1)), eps)
    cosine = dot / (nx * ny)
    radicand = clamp_min(squared + float(phi) * (1.0 - cosine), 0.0)
    return sqrt(radicand)


def feature_distance(x, y, phi: float, eps: float = 1e-8) -> Tensor:
    """Distance between two feature vectors:

        d(x, y) = sqrt( sum_i (x_i - y_i)^2 + phi * (1 - cos(x, y)) )

    with norms floored at ``eps`` so the cosine term is defined everywhere and
    the radicand clamped at 0 against round-off.  Symmetric; d(x, x) = 0.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 1 or y.ndim != 1:
        raise LossInputError("feature_distance expects 1-D vectors")
    if x.shape != y.shape:
        raise LossInputError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if x.size < 1:
        raise LossInputError("vectors must have dimension >= 1")
    return _row_distances(x.reshape(1, -1), y.reshape(1, -1), phi, eps).sum()


def contrastive_loss(f_origin, f_gen, cfg: LicenseLossConfig) -> Tensor:
    """Mean hinge max(margin - d(f_origin[i], f_gen[i]), 0); value in [0, margin]."""
    cfg.validate()
    f_origin, f_gen = as_tensor(f_origin), as_tensor(f_gen)
    if f_origin.shape != f_gen.shape or f_origin.ndim != 2:
        raise LossInputError(
            f"feature batches must share shape (B, n), got {f_origin.shape} vs {f_gen.shape}")
    distances = _row_distances(f_origin, f_gen, cfg.phi, cfg.cosine_epsilon)
    return relu(cfg.margin - distances).mean()


def gram_matrix(feature_map) -> Tensor:
    """Per-item Gram matrix G = F F^T / (C*H*W) of a (B, C, H, W) map.

    F is the (C, H*W) flattening; the normalization makes the statistic
    comparable across layer sizes.  Symmetric positive semidefinite.
    """
    feature_map = as_tensor(feature_map)
    if feature_map.ndim != 4:
        raise LossInputError(f"feature map must be (B, C, H, W), got {feature_map.shape}")
    b, c, h, w = feature_map.shape
    if h * w < 1:
        raise LossInputError("feature map needs at least one spatial element")
    flat = feature_map.reshape(b, c, h * w)
    return (flat @ flat.transpose(0, 2, 1)) * (1.0 / (c * h * w))


def style_loss(style_taps: Sequence, gen_taps: Sequence) -> Tensor:
    """Mean over layers of the squared difference of batch-averaged Grams.

    Spatial sizes may differ between the two sides (the Gram normalization
    absorbs them); channel counts must match per layer.
    """
    if len(style_taps) != len(gen_taps) or len(style_taps) == 0:
        raise LossInputError(
            f"tap lists must align: {len(style_taps)} vs {len(gen_taps)} layers")
    total = None
    for layer, (s_tap, g_tap) in enumerate(zip(style_taps, gen_taps)):
        s_tap, g_tap = as_tensor(s_tap), as_tensor(g_tap)
        if s_tap.shape[1] != g_tap.shape[1]:
            raise LossInputError(
                f"channel mismatch at layer {layer}: {s_tap.shape[1]} vs {g_tap.shape[1]}")
        s_gram = gram_matrix(s_tap).mean(axis=0)
        g_gram = gram_matrix(g_tap).mean(axis=0)
        part = square(s_gram - g_gram).mean()
        total = part if total is None else total + part
    return total * (1.0 / len(style_taps))


def total_variation(image) -> Tensor:
    """Mean squared difference over all horizontally and vertically adjacent
    pixel pairs of a (B, C, H, W) image batch."""
    image = as_tensor(image)
    if image.ndim != 4:
        raise LossInputError(f"image batch must be (B, C, H, W), got {image.shape}")
    b, c, h, w = image.shape
    pairs = b * c * (h * (w - 1) + (h - 1) * w)
    if pairs == 0:
        return Tensor(0.0)
    dh = image[:, :, :, 1:] - image[:, :, :, :-1]
    dv = image[:, :, 1:, :] - image[:, :, :-1, :]
    return (square(dh).sum() + square(dv).sum()) * (1.0 / pairs)


# ---------------------------------------------------------------------------
# composite objectives


def _weighted_total(parts: list[tuple[float, Tensor]]) -> Tensor:
    """Sum weight*part over parts with nonzero weight; exact zero otherwise."""
    total = None
    for weight, part in parts:
        if weight == 0.0:
            continue
        term = part * float(weight)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def combined_license_loss(batch: TripletBatch, model: Network,
                          cfg: LicenseLossConfig) -> tuple[Tensor, dict[str, float]]:
    """The composite license objective on one triplet batch.

    Runs the classifier on the licensed images (cross-entropy + features +
    texture taps), the originals (features for the contrastive hinge), and
    the style patches (texture taps for the style term).  Returns the
    weighted total plus the unweighted part values.
    """
    cfg.validate()
    logits_gen, feat_gen, taps_gen = classifier_forward(model, batch.licensed)
    ce = cross_entropy(softmax(logits_gen, axis=1), batch.labels)
    _, feat_origin, _ = classifier_forward(model, batch.original)
    contrastive = contrastive_loss(feat_origin, feat_gen, cfg)
    _, _, taps_style = classifier_forward(model, batch.style)
    layers = tuple(cfg.gram_layers)
    style = style_loss([taps_style[i] for i in layers],
                       [taps_gen[i] for i in layers])
    parts = {"ce": ce.item(), "contrastive": contrastive.item(),
             "style": style.item()}
    total = _weighted_total([(cfg.alpha, ce), (cfg.beta, contrastive),
                             (cfg.gamma, style)])
    return total, parts


def generator_perceptual_loss(content, output, style_patches,
                              featnet: Network, cfg: GeneratorLossConfig,
                              ) -> tuple[Tensor, dict[str, float]]:
    """Perceptual objective for the style generator.

    content: mean squared feature difference at ``content_layer`` between the
    generator output and the content image; style: Gram matching over
    ``style_layers`` against the style patches; tv: total variation of the
    output.  All features come from the frozen feature network.
    """
    cfg.validate()
    output = as_tensor(output)
    taps_out = featurenet_forward(featnet, output)
    taps_content = featurenet_forward(featnet, as_tensor(content))
    content_part = square(taps_out[cfg.content_layer]
                          - taps_content[cfg.content_layer]).mean()
    layers = tuple(cfg.style_layers)
    taps_style = featurenet_forward(featnet, as_tensor(style_patches))
    style_part = style_loss([taps_style[i] for i in layers],
                            [taps_out[i] for i in layers])
    tv_part = total_variation(output)
    parts = {"content": content_part.item(), "style": style_part.item(),
             "tv": tv_part.item()}
    total = _weighted_total([(cfg.content_weight, content_part),
                             (cfg.style_weight, style_part),
                             (cfg.tv_weight, tv_part)])
    return total, parts
