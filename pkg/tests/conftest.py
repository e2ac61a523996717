from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from hsi_demosaic.color import RgbConverterConfig, SpectralRecoveryConfig
from hsi_demosaic.hypercube import Hypercube, MsfaPattern, simulate_mosaic
from hsi_demosaic.networks import DiscriminatorConfig, GeneratorConfig
from hsi_demosaic.synthetic import SyntheticSceneConfig, generate_scenes
from hsi_demosaic.training import ModelConfig, TrainConfig

DATA_DIR = Path(__file__).parent / "data"


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "unit: fast offline tests")
    config.addinivalue_line(
        "markers", "slow: desk-scale training runs and end-to-end CLI tests"
    )


@pytest.fixture()
def data_dir() -> Path:
    """Directory of static test fixtures."""
    return DATA_DIR


@pytest.fixture()
def pattern() -> MsfaPattern:
    """The default 4x4, 16-band layout."""
    return MsfaPattern.default(4)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture()
def random_cube(rng: np.random.Generator) -> Hypercube:
    """A 16-band 8x8 cube of uniform noise."""
    return Hypercube(rng.random((16, 8, 8)))


@pytest.fixture()
def tiny_models() -> ModelConfig:
    """Narrow networks so training steps run in milliseconds on CPU."""
    return ModelConfig(
        generator=GeneratorConfig(bands=16, base_channels=8, depth=1, scales=2),
        rgb_converter=RgbConverterConfig(input_bands=16, hidden_width=16),
        spectral_recovery=SpectralRecoveryConfig(bands=16, channels=8, blocks=1),
        discriminator=DiscriminatorConfig(base_channels=4),
    )


@pytest.fixture()
def tiny_train() -> TrainConfig:
    """A few CPU steps with crops just above the discriminator's receptive field."""
    return TrainConfig(
        batch_size=2,
        crop_size=72,
        pretrain_steps=2,
        finetune_steps=2,
        checkpoint_every=1,
        seed=3,
        device="cpu",
        log_every=1,
    )


@pytest.fixture()
def synthetic_mosaics(pattern: MsfaPattern):
    """Three 80x80 synthetic frames, one per scene family."""
    scenes = generate_scenes(SyntheticSceneConfig(seed=11, height=80, width=80), 3)
    return [simulate_mosaic(cube, pattern) for cube in scenes]
