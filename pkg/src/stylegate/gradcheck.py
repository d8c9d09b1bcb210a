"""Central finite-difference validation of every analytic gradient.

Each suite item owns a set of float32 "stores" (parameters or loss inputs)
and a builder that evaluates a scalar objective from them in float64 -
optionally with analytic gradients from the autodiff engine.  A probe picks
one scalar, nudges its float32 value by +-step, and compares the centered
difference quotient against the analytic derivative.  The comparison uses

    rel_error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)

so probes whose true gradient is zero do not divide by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, record_branch_masks, softmax
from .datasets import TripletBatch, derive_seed
from .losses import (GeneratorLossConfig, LicenseLossConfig, contrastive_loss,
                     cross_entropy, feature_distance,
                     generator_perceptual_loss, gram_matrix, style_loss,
                     total_variation)
from .nets import Network, classifier_forward, generator_forward, init_network

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-3
ERROR_FLOOR = 1e-6

Stores = dict[str, np.ndarray]
Builder = Callable[[Stores, bool], tuple[float, dict[str, np.ndarray]]]


@dataclass
class ProbeReport:
    name: str
    probes: int
    max_rel_error: float
    tolerance: float
    skipped: int = 0

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def _signature(masks: list[np.ndarray]) -> np.ndarray:
    if not masks:
        return np.zeros(0, dtype=bool)
    return np.concatenate([m.ravel() for m in masks])


def run_probe_check(name: str, builder: Builder, stores: Stores, probes: int,
                    seed: int, step: float = DEFAULT_STEP,
                    tolerance: float = DEFAULT_TOLERANCE) -> ProbeReport:
    """Compare analytic against centered-difference gradients on random probes.

    A probe whose perturbation flips any piecewise branch (relu/clamp/hinge)
    inside the +-step interval is resampled: the difference quotient is not a
    derivative estimate across a kink.
    """
    stores = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in stores.items()}
    _, grads = builder(stores, True)
    rng = np.random.default_rng(seed)
    names = sorted(stores)
    worst = 0.0
    done = 0
    skipped = 0
    attempts = 0
    while done < probes and attempts < probes * 40:
        attempts += 1
        target = names[int(rng.integers(len(names)))]
        index = int(rng.integers(stores[target].size))
        base = stores[target].flat[index]
        plus = np.float32(base + step)
        minus = np.float32(base - step)
        h = float(np.float64(plus) - np.float64(minus))
        bumped = dict(stores)
        bumped[target] = stores[target].copy()
        bumped[target].flat[index] = plus
        with record_branch_masks([]) as masks_plus:
            f_plus, _ = builder(bumped, False)
        bumped[target].flat[index] = minus
        with record_branch_masks([]) as masks_minus:
            f_minus, _ = builder(bumped, False)
        if not np.array_equal(_signature(masks_plus), _signature(masks_minus)):
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / h
        analytic = float(grads[target].flat[index])
        worst = max(worst, _rel_error(analytic, numeric))
        done += 1
    if done < probes:
        raise RuntimeError(f"{name}: could not find {probes} kink-free probes")
    return ProbeReport(name=name, probes=done, max_rel_error=worst,
                       tolerance=tolerance, skipped=skipped)


def _tensorize(stores: Stores, need_grad: bool) -> dict[str, Tensor]:
    return {k: Tensor(v.astype(np.float64), requires_grad=need_grad)
            for k, v in stores.items()}


def _finish(loss: Tensor, leaves: dict[str, Tensor],
            need_grad: bool) -> tuple[float, dict[str, np.ndarray]]:
    if not need_grad:
        return loss.item(), {}
    loss.backward()
    return loss.item(), {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                         for k, t in leaves.items()}


# ---------------------------------------------------------------------------
# suite items


def _network_item(kind: str, seed: int) -> tuple[str, Builder, Stores]:
    shape, classes, batch = (2, 8, 8), 3, 2
    ckpt = init_network(kind, shape, classes, seed=seed)
    rng = np.random.default_rng(derive_seed(seed, 1))
    x = rng.uniform(0.0, 1.0, size=(batch, *shape))
    if kind == "generator":
        coeff = [rng.normal(size=(batch, *shape))]
    else:
        probe_net = Network.from_checkpoint(ckpt)
        logits, feature, taps = classifier_forward(probe_net, x)
        coeff = [rng.normal(size=logits.shape), rng.normal(size=feature.shape)]
        coeff += [rng.normal(size=t.shape) for t in taps]

    def builder(stores: Stores, need_grad: bool):
        params = _tensorize(stores, need_grad)
        net = Network(kind=kind, params=params)
        if kind == "generator":
            out = generator_forward(net, x)
            loss = (out * coeff[0]).sum()
        else:
            logits, feature, taps = classifier_forward(net, x)
            loss = (logits * coeff[0]).sum() + (feature * coeff[1]).sum()
            for tap, c in zip(taps, coeff[2:]):
                loss = loss + (tap * c).sum()
        return _finish(loss, params, need_grad)

    return f"network-{kind}", builder, dict(ckpt.tensors)


def _suite_items(seed: int) -> list[tuple[str, Builder, Stores, float]]:
    items: list[tuple[str, Builder, Stores, float]] = []
    for offset, kind in enumerate(("classifier", "generator", "featurenet")):
        name, builder, stores = _network_item(kind, derive_seed(seed, 10 + offset))
        items.append((name, builder, stores, DEFAULT_STEP))

    rng = np.random.default_rng(derive_seed(seed, 2))

    # cross-entropy through softmax (the training path), probed at the logits
    logits0 = rng.normal(size=(4, 5))
    labels = rng.integers(0, 5, size=4)

    def build_ce_logits(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = cross_entropy(softmax(leaves["logits"], axis=1), labels)
        return _finish(loss, leaves, need_grad)

    items.append(("loss-cross-entropy-logits", build_ce_logits,
                  {"logits": logits0}, DEFAULT_STEP))

    # cross-entropy straight from probabilities; the smaller step keeps the
    # perturbed rows inside the row-sum tolerance
    raw = rng.uniform(0.1, 1.0, size=(4, 5))
    probs0 = raw / raw.sum(axis=1, keepdims=True)

    def build_ce_probs(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = cross_entropy(leaves["probs"], labels)
        return _finish(loss, leaves, need_grad)

    items.append(("loss-cross-entropy-probs", build_ce_probs,
                  {"probs": probs0}, 1e-5))

    vec_x = rng.normal(size=8)
    vec_y = rng.normal(size=8)

    def build_distance(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = feature_distance(leaves["x"], leaves["y"], phi=1.0)
        return _finish(loss, leaves, need_grad)

    items.append(("loss-feature-distance", build_distance,
                  {"x": vec_x, "y": vec_y}, DEFAULT_STEP))

    cfg = LicenseLossConfig(margin=2.0)
    f_origin = rng.normal(size=(3, 6))
    f_gen = f_origin + 0.3 * rng.normal(size=(3, 6))

    def build_contrastive(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = contrastive_loss(leaves["origin"], leaves["gen"], cfg)
        return _finish(loss, leaves, need_grad)

    items.append(("loss-contrastive", build_contrastive,
                  {"origin": f_origin, "gen": f_gen}, DEFAULT_STEP))

    fmap = rng.normal(size=(2, 3, 4, 4))
    gram_coeff = rng.normal(size=(2, 3, 3))

    def build_gram(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = (gram_matrix(leaves["map"]) * gram_coeff).sum()
        return _finish(loss, leaves, need_grad)

    items.append(("loss-gram-matrix", build_gram, {"map": fmap}, DEFAULT_STEP))

    s_taps = {f"s{l}": rng.normal(size=(2, 3, 4, 4)) for l in range(2)}
    g_taps = {f"g{l}": rng.normal(size=(2, 3, 5, 5)) for l in range(2)}

    def build_style(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = style_loss([leaves["s0"], leaves["s1"]],
                          [leaves["g0"], leaves["g1"]])
        return _finish(loss, leaves, need_grad)

    items.append(("loss-style", build_style, {**s_taps, **g_taps}, DEFAULT_STEP))

    image = rng.uniform(0.0, 1.0, size=(2, 1, 5, 5))

    def build_tv(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss = total_variation(leaves["image"])
        return _finish(loss, leaves, need_grad)

    items.append(("loss-total-variation", build_tv, {"image": image}, DEFAULT_STEP))

    # full composite license loss, probed at the classifier parameters
    shape, classes, batch = (1, 8, 8), 3, 2
    model_ckpt = init_network("classifier", shape, classes, seed=derive_seed(seed, 3))
    trip_rng = np.random.default_rng(derive_seed(seed, 4))
    triplet = TripletBatch(
        style=trip_rng.uniform(0, 1, size=(batch, *shape)).astype(np.float32),
        original=trip_rng.uniform(0, 1, size=(batch, *shape)).astype(np.float32),
        licensed=trip_rng.uniform(0, 1, size=(batch, *shape)).astype(np.float32),
        labels=trip_rng.integers(0, classes, size=batch),
    )
    license_cfg = LicenseLossConfig()

    def build_combined(stores: Stores, need_grad: bool):
        from .losses import combined_license_loss

        params = _tensorize(stores, need_grad)
        net = Network(kind="classifier", params=params)
        loss, _ = combined_license_loss(triplet, net, license_cfg)
        return _finish(loss, params, need_grad)

    items.append(("loss-combined-license", build_combined,
                  dict(model_ckpt.tensors), DEFAULT_STEP))

    # perceptual generator loss, probed at the generated image
    featnet_ckpt = init_network("featurenet", shape, classes, seed=derive_seed(seed, 5))
    frozen = Network.from_checkpoint(featnet_ckpt)
    content = trip_rng.uniform(0, 1, size=(batch, *shape))
    patches = trip_rng.uniform(0, 1, size=(4, *shape))
    output0 = trip_rng.uniform(0.2, 0.8, size=(batch, *shape))
    gen_cfg = GeneratorLossConfig()

    def build_perceptual(stores: Stores, need_grad: bool):
        leaves = _tensorize(stores, need_grad)
        loss, _ = generator_perceptual_loss(content, leaves["output"], patches,
                                            frozen, gen_cfg)
        return _finish(loss, leaves, need_grad)

    items.append(("loss-generator-perceptual", build_perceptual,
                  {"output": output0}, DEFAULT_STEP))

    return items


def run_gradient_suite(seed: int = 0, probes: int = 24) -> list[ProbeReport]:
    """Run every gradient check; one report per loss and per network kind."""
    reports = []
    for index, (name, builder, stores, step) in enumerate(_suite_items(seed)):
        reports.append(run_probe_check(name, builder, stores, probes=probes,
                                       seed=derive_seed(seed, 100 + index),
                                       step=step))
    return reports
