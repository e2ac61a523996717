import math

import numpy as np
import pytest
import torch

from hsi_demosaic.errors import ConfigurationError, ShapeError, TrainingDivergenceError
from hsi_demosaic.evaluation import ips_metric
from hsi_demosaic.hypercube import Hypercube
from hsi_demosaic.losses import (
    LossComponents,
    LossWeights,
    cycle_loss,
    discriminator_loss,
    gan_losses,
    generator_adversarial_loss,
    get_sgc,
    ips_loss,
    register_sgc,
    sgc_loss,
    total_loss,
    tv_loss,
)

pytestmark = pytest.mark.unit


def _double(*shape, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=generator, dtype=torch.float64)


class TestIpsLoss:
    def test_crafted_grid(self):
        x = torch.zeros(1, 8, 8)
        x[:, ::4, ::4] = 1.0
        assert ips_loss(x, 4).item() == pytest.approx(15 / 256)

    def test_constant_cube_is_zero(self):
        x = torch.full((3, 8, 8), 0.7)
        assert ips_loss(x, 4).item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_numpy_metric(self):
        x = _double(16, 8, 8)
        assert ips_loss(x, 4).item() == pytest.approx(ips_metric(x.numpy(), 4))

    def test_accepts_hypercube(self):
        cube = Hypercube(np.ones((2, 4, 4)))
        assert ips_loss(cube, 2).item() == pytest.approx(0.0, abs=1e-12)

    def test_not_divisible(self):
        with pytest.raises(ShapeError):
            ips_loss(torch.zeros(1, 6, 8), 4)


class TestTvLoss:
    def test_constant_is_zero(self):
        assert tv_loss(torch.full((2, 5, 5), 0.3)).item() == 0.0

    def test_single_row_and_column(self):
        assert tv_loss(torch.rand(3, 1, 1)).item() == 0.0
        x = torch.tensor([[[0.0, 1.0, 3.0]]])
        assert tv_loss(x).item() == pytest.approx(1.5)

    def test_known_value(self):
        x = torch.tensor([[[0.0, 1.0], [2.0, 4.0]]])
        # dx: |1|, |2| -> 1.5; dy: |2|, |3| -> 2.5
        assert tv_loss(x).item() == pytest.approx(4.0)


class TestSgcLoss:
    def test_identical_bands_are_zero(self):
        band = torch.rand(1, 1, 8, 8)
        assert sgc_loss(band.expand(1, 16, 8, 8)).item() == pytest.approx(0.0, abs=1e-6)

    def test_bands_with_offsets_are_zero(self):
        band = torch.rand(1, 1, 8, 8)
        cube = band + torch.linspace(0, 0.5, 16).view(1, 16, 1, 1)
        assert sgc_loss(cube).item() == pytest.approx(0.0, abs=1e-6)

    def test_inconsistent_gradients_are_penalised(self):
        cube = torch.zeros(1, 2, 4, 4)
        cube[0, 0, :, 2:] = 1.0
        assert sgc_loss(cube).item() > 0.0

    def test_registry(self):
        register_sgc("zero-test", lambda cube: torch.zeros(()))
        assert get_sgc("zero-test") is not None
        assert sgc_loss(torch.rand(1, 2, 4, 4), "zero-test").item() == 0.0
        with pytest.raises(ConfigurationError, match="Unknown SGC"):
            get_sgc("missing")


class TestGanLosses:
    def test_optimal_scores(self):
        real, fake = torch.ones(2, 1, 3, 3), torch.zeros(2, 1, 3, 3)
        g, d = gan_losses(real, fake)
        assert d.item() == 0.0
        assert g.item() == 1.0

    def test_generator_fools_discriminator(self):
        assert generator_adversarial_loss(torch.ones(4)).item() == 0.0

    def test_discriminator_value(self):
        real = torch.tensor([0.5, 1.0])
        fake = torch.tensor([0.5, 0.0])
        assert discriminator_loss(real, fake).item() == pytest.approx(0.125 + 0.125)


class TestCycleLoss:
    def test_identity_is_zero(self):
        x = torch.rand(1, 4, 4, 4)
        assert cycle_loss(x, x.clone()).item() == 0.0

    def test_value(self):
        assert cycle_loss(torch.ones(1, 2, 2, 2), torch.zeros(1, 2, 2, 2)).item() == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cycle_loss(torch.ones(1, 2, 2, 2), torch.ones(1, 3, 2, 2))


@pytest.mark.parametrize(
    ("name", "loss"),
    [
        ("ips", lambda x: ips_loss(x, 4)),
        ("tv", tv_loss),
        ("sgc", sgc_loss),
        ("cyc", lambda x: cycle_loss(x, _double(1, 16, 8, 8, seed=9))),
        ("gan-g", lambda x: generator_adversarial_loss(x)),
        ("gan-d", lambda x: discriminator_loss(x, x.flip(-1) * 0.5)),
    ],
)
def test_gradients_match_finite_differences(name, loss):
    x = _double(1, 16, 8, 8, seed=1).requires_grad_(True)
    assert torch.autograd.gradcheck(loss, (x,), eps=1e-6, atol=1e-8, rtol=1e-4), name


class TestTotalLoss:
    def test_weighted_sum(self):
        parts = LossComponents(
            sgc=torch.tensor(1.0),
            tv=torch.tensor(2.0),
            ips=torch.tensor(3.0),
            gan=torch.tensor(4.0),
            cyc=torch.tensor(5.0),
        )
        expected = 1.0 + 1e-3 * 2 + 3.0 + 0.1 * 4 + 5.0
        assert total_loss(parts, LossWeights()).item() == pytest.approx(expected)

    def test_zero_weight_disables_component(self):
        parts = LossComponents(sgc=torch.tensor(2.0), gan=torch.tensor(7.0))
        weights = LossWeights(lambda_gan=0.0)
        assert total_loss(parts, weights).item() == pytest.approx(2.0)

    def test_non_finite_component(self):
        parts = LossComponents(tv=torch.tensor(math.nan))
        with pytest.raises(TrainingDivergenceError, match="tv"):
            total_loss(parts, LossWeights())

    def test_negative_weight(self):
        with pytest.raises(ConfigurationError):
            LossWeights(lambda_tv=-1.0)

    def test_components_as_dict(self):
        parts = LossComponents(sgc=torch.tensor(0.5))
        assert parts.as_dict() == {
            "sgc": 0.5,
            "tv": 0.0,
            "ips": 0.0,
            "gan": 0.0,
            "cyc": 0.0,
        }
