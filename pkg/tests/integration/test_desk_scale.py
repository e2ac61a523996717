import numpy as np
import pytest

from hsi_demosaic.evaluation import ips_metric, psnr
from hsi_demosaic.hypercube import MsfaPattern, linear_demosaic, simulate_mosaic
from hsi_demosaic.networks import DiscriminatorConfig, GeneratorConfig, demosaic_forward
from hsi_demosaic.synthetic import (
    SyntheticSceneConfig,
    generate_rgb_corpus,
    generate_scenes,
)
from hsi_demosaic.training import ModelConfig, TrainConfig, joint_finetune, pretrain_all

pytestmark = pytest.mark.slow

TRAIN_SCENES = 32
HOLDOUT_SCENES = 8


@pytest.fixture(scope="module")
def holdout_scores(tmp_path_factory) -> np.ndarray:
    """Per hold-out scene: linear PSNR, model PSNR, pretrained IPS, model IPS."""
    scene = SyntheticSceneConfig(seed=100, height=96, width=96, noise=0.005)
    pattern = MsfaPattern.default(4)
    mosaics = [
        simulate_mosaic(cube, pattern) for cube in generate_scenes(scene, TRAIN_SCENES)
    ]
    config = TrainConfig(
        batch_size=4,
        crop_size=96,
        pretrain_steps=300,
        finetune_steps=2000,
        checkpoint_every=0,
        seed=0,
        device="cpu",
        log_every=250,
    )
    models = ModelConfig(
        generator=GeneratorConfig(base_channels=16, depth=2, scales=4),
        discriminator=DiscriminatorConfig(base_channels=16),
    )
    init = pretrain_all(mosaics, config, models)
    final = joint_finetune(
        mosaics,
        generate_rgb_corpus(scene, TRAIN_SCENES),
        init,
        config,
        discriminator_config=models.discriminator,
        output_dir=tmp_path_factory.mktemp("desk"),
    )
    pretrained = init.instantiate().generator
    generator = final.instantiate().generator

    holdout = generate_scenes(
        SyntheticSceneConfig(seed=100 + TRAIN_SCENES, height=96, width=96, noise=0.005),
        HOLDOUT_SCENES,
    )
    rows = []
    for cube in holdout:
        mosaic = simulate_mosaic(cube, pattern)
        lin = linear_demosaic(mosaic)
        before = demosaic_forward(lin, mosaic, pretrained)
        out = demosaic_forward(lin, mosaic, generator)
        rows.append(
            (psnr(cube, lin), psnr(cube, out), ips_metric(before, 4), ips_metric(out, 4))
        )
    return np.array(rows)


def test_model_beats_linear_psnr(holdout_scores):
    linear, model = holdout_scores[:, 0].mean(), holdout_scores[:, 1].mean()
    assert model >= linear + 1.0


def test_finetuning_does_not_increase_gridding(holdout_scores):
    assert holdout_scores[:, 3].mean() <= holdout_scores[:, 2].mean()
