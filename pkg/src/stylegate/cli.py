"""Command-line front end: one pipeline stage per invocation.

    stylegate <command> --config <path> [--out <dir>] [--seed <u64>]
                        [--set key=value ...]

Commands: train-featurenet, train-generator, stylize, train-baseline,
train-license, eval-usability, eval-privacy, attack-forge, attack-finetune,
gradcheck.  Each invocation resolves its configuration, derives a run id
from the config fingerprint, writes all artifacts into a fresh run
directory, and exits nonzero with a diagnostic on any error.  Re-running a
command with the same config, seed, and inputs reproduces byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datasets, evaluation, nets, reports, training
from .config import (ConfigError, RunConfig, apply_override, config_fingerprint,
                     config_text, parse_config)
from .gradcheck import run_gradient_suite
from .losses import GeneratorLossConfig, LicenseLossConfig

COMMANDS = ("train-featurenet", "train-generator", "stylize", "train-baseline",
            "train-license", "eval-usability", "eval-privacy", "attack-forge",
            "attack-finetune", "gradcheck")

# fixed offsets so every pipeline stage draws from its own seed stream
_PHASE = {"corpus-train": 0, "corpus-test": 1, "style-patches": 2,
          "featurenet": 3, "generator": 4, "baseline": 5, "license": 6,
          "leak": 7, "finetune": 8, "forged-patches": 9}


class CliError(RuntimeError):
    pass


def _phase_seed(cfg: RunConfig, phase: str) -> int:
    return datasets.derive_seed(cfg.seed, _PHASE[phase])


def _load_corpus(cfg: RunConfig) -> tuple[datasets.Dataset, datasets.Dataset]:
    if cfg.corpus == "idx":
        for key in ("idx_train_images", "idx_train_labels",
                    "idx_test_images", "idx_test_labels"):
            if not getattr(cfg, key):
                raise CliError(f"corpus=idx requires {key}")
        train = datasets.load_idx(cfg.idx_train_images, cfg.idx_train_labels)
        test = datasets.load_idx(cfg.idx_test_images, cfg.idx_test_labels)
        return train, test
    train = datasets.generate_synthetic(_phase_seed(cfg, "corpus-train"),
                                        cfg.train_per_class, cfg.classes,
                                        cfg.image_shape)
    test = datasets.generate_synthetic(_phase_seed(cfg, "corpus-test"),
                                       cfg.test_per_class, cfg.classes,
                                       cfg.image_shape)
    return train, test


def _style_patches(cfg: RunConfig, forged: bool = False) -> datasets.StylePatchSet:
    shape = cfg.image_shape
    if forged:
        path, kind, seed = (cfg.forged_style_image, cfg.forged_style_kind,
                            cfg.forged_style_seed)
        patch_seed = _phase_seed(cfg, "forged-patches")
    else:
        path, kind, seed = cfg.style_image, cfg.style_kind, cfg.style_seed
        patch_seed = _phase_seed(cfg, "style-patches")
    if path:
        image = datasets.load_style_image(path, shape[0])
    else:
        image = datasets.synthetic_style_image(
            kind, (shape[0], cfg.style_size, cfg.style_size), seed)
    return datasets.make_style_patches(image, shape, cfg.style_patch_count,
                                       patch_seed)


def _train_config(cfg: RunConfig, epochs: int, phase: str,
                  learning_rate: float | None = None) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate if learning_rate is None else learning_rate,
        optimizer=cfg.optimizer, momentum=cfg.momentum,
        seed=_phase_seed(cfg, phase))


def _license_loss_config(cfg: RunConfig) -> LicenseLossConfig:
    return LicenseLossConfig(alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
                             margin=cfg.margin, phi=cfg.phi,
                             cosine_epsilon=cfg.cosine_epsilon,
                             gram_layers=tuple(cfg.gram_layers))


def _generator_loss_config(cfg: RunConfig) -> GeneratorLossConfig:
    return GeneratorLossConfig(content_weight=cfg.content_weight,
                               style_weight=cfg.style_weight,
                               tv_weight=cfg.tv_weight,
                               content_layer=cfg.content_layer,
                               style_layers=tuple(cfg.style_layers))


def _require_checkpoint(cfg: RunConfig, key: str) -> nets.NetworkCheckpoint:
    path = getattr(cfg, key)
    if not path:
        raise CliError(f"this command requires the {key} config key")
    return nets.load_checkpoint(path)


def _require_dataset(cfg: RunConfig, key: str, prefix: str) -> datasets.Dataset:
    directory = getattr(cfg, key)
    if not directory:
        raise CliError(f"this command requires the {key} config key")
    return datasets.load_dataset(directory, prefix)


class _Run:
    """Resolved invocation: effective config, fingerprint, run directory."""

    def __init__(self, command: str, cfg: RunConfig, out: str | None):
        self.command = command
        self.cfg = cfg
        self.fingerprint = config_fingerprint(cfg)
        self.run_id = f"{command}-{self.fingerprint[:12]}"
        self.dir = Path(out) if out else Path("runs") / self.run_id
        if self.dir.exists() and any(self.dir.iterdir()):
            raise CliError(f"run directory {self.dir} already exists and is not "
                           "empty; run directories are never overwritten")
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.txt").write_text(
            f"# fingerprint: {self.fingerprint}\n" + config_text(cfg))

    def save_checkpoint(self, ckpt: nets.NetworkCheckpoint, name: str) -> Path:
        path = self.dir / name
        nets.save_checkpoint(ckpt, path)
        return path

    def save_history(self, history: training.TrainHistory, name: str) -> Path:
        path = self.dir / name
        reports.write_report(history, path, run_id=self.run_id,
                             seed=self.cfg.seed,
                             config_fingerprint=self.fingerprint)
        return path

    def save_report(self, report: evaluation.MetricsReport, name: str) -> Path:
        path = self.dir / name
        reports.write_report(report, path)
        return path

    def report(self, report_fn, *args, run_id_suffix: str, **kwargs):
        return report_fn(*args, run_id=self.run_id, seed=self.cfg.seed,
                         config_fingerprint=self.fingerprint, **kwargs)


def _cmd_train_featurenet(run: _Run) -> int:
    cfg = run.cfg
    train, _ = _load_corpus(cfg)
    init = nets.init_network("featurenet", cfg.image_shape, train.class_count,
                             seed=_phase_seed(cfg, "featurenet"),
                             fingerprint=run.fingerprint)
    ckpt, history = training.train_classifier(
        train, _train_config(cfg, cfg.epochs_featurenet, "featurenet"), init)
    run.save_checkpoint(ckpt, "featurenet.ckpt")
    run.save_history(history, "history.json")
    last = history.records[-1].metrics["train_accuracy"] if len(history) else 0.0
    print(f"featurenet trained: {len(history)} epochs, train accuracy {last:.4f}")
    return 0


def _cmd_train_generator(run: _Run) -> int:
    cfg = run.cfg
    train, _ = _load_corpus(cfg)
    featnet = _require_checkpoint(cfg, "featurenet_checkpoint")
    style = _style_patches(cfg)
    init = nets.init_network("generator", cfg.image_shape, 0,
                             seed=_phase_seed(cfg, "generator"),
                             fingerprint=run.fingerprint)
    ckpt, history = training.train_generator(
        train, style, featnet,
        _train_config(cfg, cfg.epochs_generator, "generator",
                      learning_rate=cfg.learning_rate_generator),
        _generator_loss_config(cfg), init)
    run.save_checkpoint(ckpt, "generator.ckpt")
    run.save_history(history, "history.json")
    print(f"generator trained: {len(history)} epochs")
    return 0


def _cmd_stylize(run: _Run) -> int:
    cfg = run.cfg
    train, test = _load_corpus(cfg)
    generator = _require_checkpoint(cfg, "generator_checkpoint")
    licensed_train = datasets.stylize_dataset(train, generator)
    licensed_test = datasets.stylize_dataset(test, generator)
    datasets.save_dataset(licensed_train, run.dir, "licensed_train")
    datasets.save_dataset(licensed_test, run.dir, "licensed_test")
    print(f"stylized {len(licensed_train)} train and {len(licensed_test)} test images")
    return 0


def _cmd_train_baseline(run: _Run) -> int:
    cfg = run.cfg
    train, test = _load_corpus(cfg)
    init = nets.init_network("classifier", cfg.image_shape, train.class_count,
                             seed=_phase_seed(cfg, "baseline"),
                             fingerprint=run.fingerprint)
    ckpt, history = training.train_classifier(
        train, _train_config(cfg, cfg.epochs_baseline, "baseline"), init)
    run.save_checkpoint(ckpt, "baseline.ckpt")
    run.save_history(history, "history.json")
    acc = evaluation.eval_accuracy(ckpt, test) if len(test) else 0.0
    print(f"baseline trained: test accuracy {acc:.4f}")
    return 0


def _cmd_train_license(run: _Run) -> int:
    cfg = run.cfg
    train, _ = _load_corpus(cfg)
    licensed_train = _require_dataset(cfg, "licensed_train_data", "licensed_train")
    style = _style_patches(cfg)
    source = datasets.TripletSource(original=train, licensed=licensed_train,
                                    style=style, batch_size=cfg.batch_size,
                                    seed=_phase_seed(cfg, "license"))
    init = nets.init_network("classifier", cfg.image_shape, train.class_count,
                             seed=_phase_seed(cfg, "license"),
                             fingerprint=run.fingerprint)
    ckpt, history = training.train_license_model(
        source, _train_config(cfg, cfg.epochs_license, "license"),
        _license_loss_config(cfg), init)
    run.save_checkpoint(ckpt, "license.ckpt")
    run.save_history(history, "history.json")
    if len(history):
        m = history.records[-1].metrics
        print(f"license model trained: licensed accuracy {m['license_accuracy']:.4f}, "
              f"original accuracy {m['original_accuracy']:.4f}")
    return 0


def _cmd_eval_usability(run: _Run) -> int:
    cfg = run.cfg
    _, test = _load_corpus(cfg)
    baseline = _require_checkpoint(cfg, "baseline_checkpoint")
    license_model = _require_checkpoint(cfg, "license_checkpoint")
    licensed_test = _require_dataset(cfg, "licensed_test_data", "licensed_test")
    report = evaluation.usability_report(
        baseline, license_model, test, licensed_test, run_id=run.run_id,
        seed=cfg.seed, config_fingerprint=run.fingerprint)
    run.save_report(report, "usability.json")
    print("usability:", " ".join(f"{k}={v}" for k, v in sorted(report.metrics.items())))
    return 0


def _cmd_eval_privacy(run: _Run) -> int:
    cfg = run.cfg
    _, test = _load_corpus(cfg)
    baseline = _require_checkpoint(cfg, "baseline_checkpoint")
    licensed_test = _require_dataset(cfg, "licensed_test_data", "licensed_test")
    report = evaluation.privacy_report(
        baseline, test, licensed_test, run_id=run.run_id, seed=cfg.seed,
        config_fingerprint=run.fingerprint)
    run.save_report(report, "privacy.json")
    print("privacy:", " ".join(f"{k}={v}" for k, v in sorted(report.metrics.items())))
    return 0


def _cmd_attack_forge(run: _Run) -> int:
    cfg = run.cfg
    _, test = _load_corpus(cfg)
    license_model = _require_checkpoint(cfg, "license_checkpoint")
    true_generator = _require_checkpoint(cfg, "generator_checkpoint")
    forged_generator = _require_checkpoint(cfg, "forged_generator_checkpoint")
    report = evaluation.forged_style_attack(
        license_model, test, forged_generator, true_generator,
        run_id=run.run_id, seed=cfg.seed, config_fingerprint=run.fingerprint)
    run.save_report(report, "forge.json")
    print("forge attack:", " ".join(f"{k}={v}" for k, v in sorted(report.metrics.items())))
    return 0


def _cmd_attack_finetune(run: _Run) -> int:
    cfg = run.cfg
    train, test = _load_corpus(cfg)
    license_model = _require_checkpoint(cfg, "license_checkpoint")
    licensed_test = _require_dataset(cfg, "licensed_test_data", "licensed_test")
    rng = np.random.default_rng(_phase_seed(cfg, "leak"))
    if cfg.leak_size > len(train):
        raise CliError(f"leak_size {cfg.leak_size} exceeds corpus size {len(train)}")
    leak = train.subset(rng.permutation(len(train))[:cfg.leak_size])
    attack_cfg = training.TrainConfig(
        epochs=1, batch_size=min(cfg.batch_size, max(1, cfg.leak_size)),
        learning_rate=cfg.finetune_learning_rate, optimizer=cfg.optimizer,
        momentum=cfg.momentum, seed=_phase_seed(cfg, "finetune"))
    report = evaluation.finetune_attack(
        license_model, leak, cfg.finetune_budget, attack_cfg, test,
        licensed_test, run_id=run.run_id, seed=cfg.seed,
        config_fingerprint=run.fingerprint)
    run.save_report(report, "finetune.json")
    print("finetune attack:", " ".join(f"{k}={v}" for k, v in sorted(report.metrics.items())))
    return 0


def _cmd_gradcheck(run: _Run) -> int:
    results = run_gradient_suite(seed=run.cfg.seed)
    metrics = {}
    all_ok = True
    for result in results:
        status = "pass" if result.ok else "FAIL"
        print(f"{status}  {result.name}: max rel error {result.max_rel_error:.2e} "
              f"over {result.probes} probes (tolerance {result.tolerance:.0e})")
        metrics[result.name] = result.max_rel_error
        all_ok = all_ok and result.ok
    report = evaluation.MetricsReport(
        run_id=run.run_id, seed=run.cfg.seed,
        config_fingerprint=run.fingerprint,
        metrics={k: round(v, 4) for k, v in metrics.items()},
        sizes={"checks": len(results)})
    run.save_report(report, "gradcheck.json")
    return 0 if all_ok else 1


_HANDLERS = {
    "train-featurenet": _cmd_train_featurenet,
    "train-generator": _cmd_train_generator,
    "stylize": _cmd_stylize,
    "train-baseline": _cmd_train_baseline,
    "train-license": _cmd_train_license,
    "eval-usability": _cmd_eval_usability,
    "eval-privacy": _cmd_eval_privacy,
    "attack-forge": _cmd_attack_forge,
    "attack-finetune": _cmd_attack_finetune,
    "gradcheck": _cmd_gradcheck,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylegate",
        description="Style-licensed classifier pipeline: train the license "
                    "generator and the licensed model, then measure usability, "
                    "privacy, and attack resistance.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--out", help="run directory (default runs/<run-id>)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        for override in args.overrides:
            if "=" not in override:
                raise ConfigError(f"--set expects KEY=VALUE, got {override!r}")
            key, value = override.split("=", 1)
            apply_override(cfg, key.strip(), value)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
        run = _Run(args.command, cfg, args.out)
        return _HANDLERS[args.command](run)
    except Exception as exc:  # the CLI contract: diagnostic + nonzero exit
        print(f"stylegate {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
