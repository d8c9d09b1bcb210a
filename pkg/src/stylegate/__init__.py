"""stylegate: style-licensed image classifiers.

A lightweight style-transfer network turns ordinary images into "licensed"
images carrying a specific visual style; a classifier trained with the
composite license objective is accurate on licensed inputs and near-useless
on anything else.  The package ships the data plumbing, the three desk-scale
networks, the differentiable objectives, the training loops, and evaluation
harnesses for usability, privacy gain, and attack resistance.
"""

from .autodiff import Tensor
from .config import ConfigError, RunConfig, config_fingerprint, parse_config
from .datasets import (Dataset, LabeledImage, StylePatchSet, TripletBatch,
                       TripletSource, generate_synthetic, load_idx,
                       make_style_patches, make_triplet_batches,
                       stylize_dataset, synthetic_style_image, write_idx)
from .evaluation import (MetricsReport, eval_accuracy, finetune_attack,
                         forged_style_attack, privacy_report, usability_report)
from .gradcheck import run_gradient_suite
from .losses import (GeneratorLossConfig, LicenseLossConfig,
                     combined_license_loss, contrastive_loss, cross_entropy,
                     feature_distance, generator_perceptual_loss, gram_matrix,
                     style_loss, total_variation)
from .nets import (Network, NetworkCheckpoint, classifier_forward,
                   featurenet_forward, generator_forward, init_network,
                   load_checkpoint, save_checkpoint)
from .reports import write_report
from .training import (TrainConfig, TrainHistory, train_classifier,
                       train_generator, train_license_model)

__all__ = [
    "Tensor",
    "ConfigError", "RunConfig", "config_fingerprint", "parse_config",
    "Dataset", "LabeledImage", "StylePatchSet", "TripletBatch", "TripletSource",
    "generate_synthetic", "load_idx", "make_style_patches",
    "make_triplet_batches", "stylize_dataset", "synthetic_style_image",
    "write_idx",
    "MetricsReport", "eval_accuracy", "finetune_attack", "forged_style_attack",
    "privacy_report", "usability_report",
    "run_gradient_suite",
    "GeneratorLossConfig", "LicenseLossConfig", "combined_license_loss",
    "contrastive_loss", "cross_entropy", "feature_distance",
    "generator_perceptual_loss", "gram_matrix", "style_loss",
    "total_variation",
    "Network", "NetworkCheckpoint", "classifier_forward", "featurenet_forward",
    "generator_forward", "init_network", "load_checkpoint", "save_checkpoint",
    "write_report",
    "TrainConfig", "TrainHistory", "train_classifier", "train_generator",
    "train_license_model",
]

__version__ = "0.1.0"
