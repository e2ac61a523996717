import polars as pl
import pytest
import torch

from hsi_demosaic.color import (
    RgbConverter,
    RgbConverterConfig,
    SpectralRecoveryConfig,
    build_spectral_recovery,
)
from hsi_demosaic.hypercube import MsfaPattern, simulate_mosaic
from hsi_demosaic.networks import DemosaicGenerator, GeneratorConfig
from hsi_demosaic.synthetic import SyntheticSceneConfig, generate_scenes
from hsi_demosaic.training import (
    TrainConfig,
    TrainingHistory,
    build_pretrain_pairs,
    pretrain_demosaicker,
    pretrain_rgb_converter,
    pretrain_spectral_recovery,
)

pytestmark = pytest.mark.slow

PAIRS = 16
STEPS = 500


@pytest.fixture(scope="module")
def mosaics():
    pattern = MsfaPattern.default(4)
    scenes = generate_scenes(SyntheticSceneConfig(seed=21, height=80, width=80), PAIRS)
    return [simulate_mosaic(cube, pattern) for cube in scenes]


@pytest.fixture(scope="module")
def pairs(mosaics):
    return build_pretrain_pairs(mosaics)


@pytest.fixture()
def config() -> TrainConfig:
    return TrainConfig(
        batch_size=4,
        crop_size=72,
        pretrain_steps=STEPS,
        seed=0,
        device="cpu",
        log_every=100,
    )


def _summary(history: TrainingHistory, phase: str) -> tuple[float, float]:
    row = history.to_frame().filter(pl.col("phase") == phase).row(0, named=True)
    return row["initial"], row["final"]


def test_rgb_converter_held_out_l1_decreases(pairs, config):
    torch.manual_seed(0)
    history = TrainingHistory()
    pretrain_rgb_converter(pairs, config, RgbConverter(RgbConverterConfig()), history)
    initial, final = _summary(history, "pretrain-rgb-holdout")
    assert final < initial


def test_spectral_recovery_held_out_l1_decreases(pairs, config):
    torch.manual_seed(0)
    model = build_spectral_recovery(SpectralRecoveryConfig(channels=16, blocks=2))
    history = TrainingHistory()
    pretrain_spectral_recovery(pairs, config, model, history)
    initial, final = _summary(history, "pretrain-spectral-holdout")
    assert final < initial


def test_demosaicker_loss_decreases(mosaics, config):
    torch.manual_seed(0)
    generator = DemosaicGenerator(
        GeneratorConfig(base_channels=8, depth=2, scales=2), mosaics[0].pattern
    )
    history = TrainingHistory()
    pretrain_demosaicker(mosaics, config, generator, history)
    initial, final = _summary(history, "pretrain-generator-frames")
    assert final < initial
