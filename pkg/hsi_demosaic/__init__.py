"""hsi_demosaic package.

Self-supervised demosaicking of snapshot hyperspectral mosaics, differentiable
hyperspectral-to-RGB conversion, unpaired adversarial fine-tuning and the
evaluation tools around them.
"""

from .color import (
    ColorMatchingTable,
    FixedRgbConverter,
    RgbConverter,
    fixed_hsi_to_rgb,
    rgb_converter_forward,
    spectral_recovery_forward,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EstimationError,
    HsiDemosaicError,
    IterationLimitError,
    ParseError,
    ShapeError,
    TrainingDivergenceError,
)
from .evaluation import (
    benchmark_inference,
    evaluate_methods,
    frechet_distance,
    ips_metric,
    pixel_diff_stats,
)
from .hypercube import (
    Hypercube,
    MsfaPattern,
    RgbImage,
    SnapshotMosaic,
    linear_demosaic,
    override,
    simulate_mosaic,
)
from .losses import LossWeights, ips_loss, sgc_loss, tv_loss
from .networks import DemosaicGenerator, PatchDiscriminator, demosaic_forward
from .preference import (
    BradleyTerryFit,
    PairwiseVoteTable,
    fit_bradley_terry,
    significance_test,
)
from .synthetic import SyntheticSceneConfig, generate_synthetic_scene
from .training import (
    Checkpoint,
    TrainConfig,
    joint_finetune,
    load_checkpoint,
    pretrain_all,
    save_checkpoint,
)

__all__ = [
    "BradleyTerryFit",
    "Checkpoint",
    "ColorMatchingTable",
    "ConfigurationError",
    "DemosaicGenerator",
    "DivergenceError",
    "EstimationError",
    "FixedRgbConverter",
    "HsiDemosaicError",
    "Hypercube",
    "IterationLimitError",
    "LossWeights",
    "MsfaPattern",
    "PairwiseVoteTable",
    "ParseError",
    "PatchDiscriminator",
    "RgbConverter",
    "RgbImage",
    "ShapeError",
    "SnapshotMosaic",
    "SyntheticSceneConfig",
    "TrainConfig",
    "TrainingDivergenceError",
    "benchmark_inference",
    "demosaic_forward",
    "evaluate_methods",
    "fit_bradley_terry",
    "fixed_hsi_to_rgb",
    "frechet_distance",
    "generate_synthetic_scene",
    "ips_loss",
    "ips_metric",
    "joint_finetune",
    "linear_demosaic",
    "load_checkpoint",
    "override",
    "pixel_diff_stats",
    "pretrain_all",
    "rgb_converter_forward",
    "save_checkpoint",
    "sgc_loss",
    "significance_test",
    "simulate_mosaic",
    "spectral_recovery_forward",
    "tv_loss",
]

__version__ = "0.1.0"
