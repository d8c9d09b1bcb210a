"""Accuracy measurements, usability/privacy reports, and attack harnesses.

Accuracies are rounded to 4 decimal places when they enter a report; every
gap or advantage is computed from the rounded accuracies, in percentage
points, so a report is self-consistent: each derived field can be recomputed
exactly from the accuracy fields it cites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, stylize_dataset
from .nets import Network, NetworkCheckpoint, classifier_forward
from .training import SGD, TrainConfig, _epoch_order


class EvaluationError(ValueError):
    pass


@dataclass
class MetricsReport:
    """Named scalar metrics plus the provenance needed to reproduce them."""

    run_id: str
    seed: int
    config_fingerprint: str
    metrics: dict[str, float] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)


def _acc(value: float) -> float:
    return round(float(value), 4)


def _gap_points(a: float, b: float) -> float:
    """Percentage-point difference of two already-rounded accuracies."""
    return round((a - b) * 100.0, 4)


def eval_accuracy(model: NetworkCheckpoint | Network, data: Dataset,
                  batch_size: int = 256) -> float:
    """Fraction of argmax(logits) == label; order-independent."""
    if len(data) == 0:
        raise EvaluationError("cannot evaluate on an empty dataset")
    if isinstance(model, NetworkCheckpoint):
        model = Network.from_checkpoint(model, trainable=False)
    correct = 0
    for start in range(0, len(data), batch_size):
        chunk = data.images[start:start + batch_size].astype(np.float64)
        logits, _, _ = classifier_forward(model, chunk)
        correct += int((logits.data.argmax(axis=1)
                        == data.labels[start:start + batch_size]).sum())
    return correct / len(data)


def usability_report(baseline: NetworkCheckpoint, license_model: NetworkCheckpoint,
                     original_test: Dataset, licensed_test: Dataset,
                     run_id: str = "usability", seed: int = 0,
                     config_fingerprint: str = "") -> MetricsReport:
    """How much accuracy licensing costs, and how hard it locks out originals.

    usability_gap = baseline accuracy on originals - license accuracy on
    licensed data (small is good); lockout_gap = license accuracy on licensed
    data - license accuracy on originals (large is good).
    """
    baseline_acc = _acc(eval_accuracy(baseline, original_test))
    license_acc = _acc(eval_accuracy(license_model, licensed_test))
    license_acc_original = _acc(eval_accuracy(license_model, original_test))
    metrics = {
        "baseline_acc_original": baseline_acc,
        "license_acc_licensed": license_acc,
        "license_acc_original": license_acc_original,
        "usability_gap": _gap_points(baseline_acc, license_acc),
        "lockout_gap": _gap_points(license_acc, license_acc_original),
    }
    sizes = {"original_test": len(original_test), "licensed_test": len(licensed_test)}
    return MetricsReport(run_id, seed, config_fingerprint, metrics, sizes)


def privacy_report(baseline: NetworkCheckpoint, original_test: Dataset,
                   stylized_test: Dataset, run_id: str = "privacy", seed: int = 0,
                   config_fingerprint: str = "") -> MetricsReport:
    """Accuracy a conventionally trained model loses on stylized inputs.

    ``stylized_test`` must be the stylization of ``original_test`` (same
    generator the license pipeline deploys).
    """
    acc_original = _acc(eval_accuracy(baseline, original_test))
    acc_stylized = _acc(eval_accuracy(baseline, stylized_test))
    metrics = {
        "baseline_acc_original": acc_original,
        "baseline_acc_stylized": acc_stylized,
        "privacy_drop": _gap_points(acc_original, acc_stylized),
    }
    sizes = {"original_test": len(original_test), "stylized_test": len(stylized_test)}
    return MetricsReport(run_id, seed, config_fingerprint, metrics, sizes)


def forged_style_attack(license_model: NetworkCheckpoint, original_test: Dataset,
                        forged_generator: NetworkCheckpoint,
                        true_generator: NetworkCheckpoint,
                        run_id: str = "attack-forge", seed: int = 0,
                        config_fingerprint: str = "") -> MetricsReport:
    """Accuracy an attacker gains by stylizing with a wrong-style generator.

    forgery_advantage = license accuracy under the forged generator minus its
    accuracy on raw originals, in points.
    """
    if forged_generator is None or true_generator is None:
        raise EvaluationError("both the true and the forged generator are required")
    true_licensed = stylize_dataset(original_test, true_generator)
    forged_licensed = stylize_dataset(original_test, forged_generator)
    acc_true = _acc(eval_accuracy(license_model, true_licensed))
    acc_forged = _acc(eval_accuracy(license_model, forged_licensed))
    acc_original = _acc(eval_accuracy(license_model, original_test))
    metrics = {
        "acc_true_license": acc_true,
        "acc_forged_license": acc_forged,
        "acc_original": acc_original,
        "forgery_advantage": _gap_points(acc_forged, acc_original),
    }
    sizes = {"original_test": len(original_test)}
    return MetricsReport(run_id, seed, config_fingerprint, metrics, sizes)


def finetune_attack(license_model: NetworkCheckpoint, leak: Dataset, budget: int,
                    cfg: TrainConfig, original_test: Dataset, licensed_test: Dataset,
                    run_id: str = "attack-finetune", seed: int = 0,
                    config_fingerprint: str = "") -> MetricsReport:
    """Fine-tune a copy of the license model on leaked original-domain data.

    Runs ``budget`` plain cross-entropy SGD steps over the leak and reports
    accuracy before and after on both test sets; recovery is the gain on the
    original test set, in points.
    """
    from .autodiff import softmax
    from .losses import cross_entropy

    if budget < 0:
        raise EvaluationError("budget must be >= 0")
    if budget > 0 and len(leak) == 0:
        raise EvaluationError("cannot fine-tune on an empty leak")
    cfg.validate()
    pre_original = _acc(eval_accuracy(license_model, original_test))
    pre_licensed = _acc(eval_accuracy(license_model, licensed_test))

    net = Network.from_checkpoint(license_model, trainable=True)
    optimizer = SGD(net.parameters(), cfg.learning_rate,
                    cfg.momentum if cfg.optimizer == "momentum" else 0.0)
    steps_done = 0
    epoch = 0
    while steps_done < budget:
        order = _epoch_order(cfg.seed, epoch, len(leak))
        for start in range(0, len(order), cfg.batch_size):
            if steps_done >= budget:
                break
            idx = order[start:start + cfg.batch_size]
            logits, _, _ = classifier_forward(net, leak.images[idx].astype(np.float64))
            loss = cross_entropy(softmax(logits, axis=1), leak.labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            steps_done += 1
        epoch += 1

    post_original = _acc(eval_accuracy(net, original_test))
    post_licensed = _acc(eval_accuracy(net, licensed_test))
    metrics = {
        "pre_acc_original": pre_original,
        "pre_acc_licensed": pre_licensed,
        "post_acc_original": post_original,
        "post_acc_licensed": post_licensed,
        "recovery": _gap_points(post_original, pre_original),
    }
    sizes = {"leak": len(leak), "budget": budget}
    return MetricsReport(run_id, seed, config_fingerprint, metrics, sizes)
