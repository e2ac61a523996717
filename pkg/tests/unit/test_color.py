import numpy as np
import pytest
import torch

from hsi_demosaic.color import (
    ColorMatchingTable,
    FixedRgbConverter,
    ReferenceSpectralRecovery,
    RgbConverter,
    RgbConverterConfig,
    SpectralRecoveryConfig,
    build_spectral_recovery,
    conversion_matrix,
    fixed_hsi_to_rgb,
    register_spectral_recovery,
    rgb_converter_forward,
    spectral_recovery_forward,
    spectrum_to_xyz,
    srgb_gamma,
    srgb_gamma_tensor,
)
from hsi_demosaic.errors import ConfigurationError, ShapeError
from hsi_demosaic.hypercube import Hypercube, RgbImage

pytestmark = pytest.mark.unit


@pytest.fixture()
def cmf() -> ColorMatchingTable:
    return ColorMatchingTable.default()


class TestColorMatchingTable:
    def test_default_table(self, cmf):
        assert cmf.wavelengths[0] == 380.0
        assert cmf.wavelengths[-1] == 780.0
        # y-bar peaks at 555 nm with unit value.
        assert cmf.wavelengths[np.argmax(cmf.ybar)] == 555.0
        assert cmf.ybar.max() == pytest.approx(1.0, abs=1e-3)

    def test_sample_interpolates(self, cmf):
        sampled = cmf.sample([555.0, 557.5])
        assert sampled.shape == (2, 3)
        i = int(np.searchsorted(cmf.wavelengths, 555.0))
        assert sampled[1, 1] == pytest.approx((cmf.ybar[i] + cmf.ybar[i + 1]) / 2)

    def test_sample_outside_range(self, cmf):
        with pytest.raises(ConfigurationError, match="outside"):
            cmf.sample([300.0, 500.0])

    def test_from_text(self, tmp_path):
        path = tmp_path / "cmf.csv"
        path.write_text("# nm, x, y, z\n400,0.1,0.2,0.3\n500,0.4,0.5,0.6\n")
        table = ColorMatchingTable.from_text(path)
        np.testing.assert_array_equal(table.wavelengths, [400.0, 500.0])
        np.testing.assert_array_equal(table.zbar, [0.3, 0.6])

    def test_from_channel_tables(self, tmp_path):
        for name, values in (("x", "0.1 0.2"), ("y", "0.3 0.4"), ("z", "0.5 0.6")):
            a, b = values.split()
            (tmp_path / f"{name}.txt").write_text(f"400 {a}\n500 {b}\n")
        table = ColorMatchingTable.from_channel_tables(
            tmp_path / "x.txt", tmp_path / "y.txt", tmp_path / "z.txt"
        )
        np.testing.assert_array_equal(table.ybar, [0.3, 0.4])

    def test_channel_tables_must_share_wavelengths(self, tmp_path):
        (tmp_path / "x.txt").write_text("400 0.1\n500 0.2\n")
        (tmp_path / "y.txt").write_text("400 0.1\n510 0.2\n")
        with pytest.raises(ConfigurationError, match="share"):
            ColorMatchingTable.from_channel_tables(
                tmp_path / "x.txt", tmp_path / "y.txt", tmp_path / "x.txt"
            )

    @pytest.mark.parametrize(
        ("wavelengths", "x"),
        [([400.0, 400.0], [0.1, 0.2]), ([400.0, 500.0], [-0.1, 0.2])],
    )
    def test_invalid(self, wavelengths, x):
        with pytest.raises(ConfigurationError):
            ColorMatchingTable(wavelengths, x, [0.1, 0.1], [0.1, 0.1])


class TestFixedConversion:
    def test_flat_unit_spectrum_is_white(self, cmf):
        rgb = fixed_hsi_to_rgb(Hypercube(np.ones((16, 4, 4))), cmf)
        np.testing.assert_allclose(rgb.values, 1.0, atol=1e-9)

    def test_black_is_black(self, cmf):
        rgb = fixed_hsi_to_rgb(Hypercube(np.zeros((16, 2, 2))), cmf)
        np.testing.assert_array_equal(rgb.values, 0.0)

    def test_output_range(self, cmf, rng):
        rgb = fixed_hsi_to_rgb(Hypercube(rng.random((16, 8, 8)) * 2.0), cmf)
        assert rgb.values.min() >= 0.0
        assert rgb.values.max() <= 1.0

    def test_long_wavelengths_look_red(self, cmf):
        values = np.zeros((16, 2, 2))
        values[-4:] = 0.5
        rgb = fixed_hsi_to_rgb(Hypercube(values), cmf)
        r, g, b = rgb.values[:, 0, 0]
        assert r > max(g, b)

    def test_matrix_rows_sum_to_one(self, cmf):
        centers = np.linspace(460.0, 630.0, 16)
        matrix = conversion_matrix(centers, cmf)
        assert matrix.shape == (3, 16)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)

    def test_xyz_is_linear(self, cmf, random_cube):
        doubled = random_cube.with_values(random_cube.values * 2)
        np.testing.assert_allclose(
            spectrum_to_xyz(doubled, cmf), 2 * spectrum_to_xyz(random_cube, cmf)
        )

    def test_centers_outside_table(self, cmf):
        cube = Hypercube(np.ones((2, 2, 2)), (300.0, 500.0))
        with pytest.raises(ConfigurationError):
            fixed_hsi_to_rgb(cube, cmf)


def test_srgb_gamma_segments():
    assert srgb_gamma(0.001) == pytest.approx(0.01292)
    assert srgb_gamma(1.0) == pytest.approx(1.0)
    assert srgb_gamma(0.0031308) == pytest.approx(0.0404499, abs=1e-6)


def test_srgb_gamma_tensor_matches_numpy(rng):
    x = rng.random(50)
    np.testing.assert_allclose(
        srgb_gamma_tensor(torch.as_tensor(x)).numpy(), srgb_gamma(x), atol=1e-12
    )


def test_fixed_module_matches_function(cmf, random_cube):
    module = FixedRgbConverter(random_cube.band_centers, cmf)
    assert list(module.parameters()) == []
    out = module(torch.as_tensor(random_cube.values, dtype=torch.float32)[None])[0]
    expected = fixed_hsi_to_rgb(random_cube, cmf).values
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-4)


class TestRgbConverter:
    def test_config_validation(self):
        with pytest.raises(ConfigurationError, match="hidden_width"):
            RgbConverterConfig(input_bands=16, hidden_width=8)

    def test_shape_and_range(self):
        torch.manual_seed(0)
        model = RgbConverter(RgbConverterConfig(16, 32))
        out = model(torch.rand(2, 16, 5, 7) * 3.0)
        assert out.shape == (2, 3, 5, 7)
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    def test_is_per_pixel(self):
        torch.manual_seed(0)
        model = RgbConverter(RgbConverterConfig(16, 32))
        x = torch.rand(1, 16, 4, 4)
        shifted = torch.roll(x, shifts=1, dims=-1)
        torch.testing.assert_close(
            torch.roll(model(x), shifts=1, dims=-1), model(shifted)
        )

    def test_wrong_band_count(self):
        model = RgbConverter(RgbConverterConfig(16, 16))
        with pytest.raises(ShapeError):
            model(torch.rand(1, 8, 4, 4))

    def test_forward_helper(self, random_cube):
        torch.manual_seed(0)
        model = RgbConverter(RgbConverterConfig(16, 16))
        rgb = rgb_converter_forward(random_cube, model)
        assert isinstance(rgb, RgbImage)
        assert (rgb.height, rgb.width) == (8, 8)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        model = RgbConverter(RgbConverterConfig(16, 16)).double()
        cube = torch.rand(1, 16, 4, 4, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(model, (cube,), eps=1e-6, atol=1e-8, rtol=1e-4)

    def test_forward_helper_accepts_fixed_module(self, cmf, random_cube):
        module = FixedRgbConverter(random_cube.band_centers, cmf)
        rgb = rgb_converter_forward(random_cube, module)
        np.testing.assert_allclose(
            rgb.values, fixed_hsi_to_rgb(random_cube, cmf).values, atol=1e-4
        )


class TestSpectralRecovery:
    def test_reference_shape(self):
        model = build_spectral_recovery(
            SpectralRecoveryConfig(bands=16, channels=8, blocks=2)
        )
        assert isinstance(model, ReferenceSpectralRecovery)
        out = model(torch.rand(1, 3, 12, 10))
        assert out.shape == (1, 16, 12, 10)

    def test_is_differentiable(self):
        model = build_spectral_recovery(SpectralRecoveryConfig(channels=8, blocks=1))
        rgb = torch.rand(1, 3, 8, 8, requires_grad=True)
        model(rgb).abs().mean().backward()
        assert rgb.grad is not None
        assert rgb.grad.abs().sum() > 0

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        model = build_spectral_recovery(SpectralRecoveryConfig(channels=8, blocks=1))
        model = model.double()
        rgb = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(model, (rgb,), eps=1e-6, atol=1e-8, rtol=1e-4)

    def test_forward_helper_accepts_array_centers(self):
        model = build_spectral_recovery(SpectralRecoveryConfig(channels=8, blocks=1))
        centers = np.linspace(450.0, 650.0, 16)
        rgb = RgbImage(np.full((3, 4, 4), 0.5))
        cube = spectral_recovery_forward(rgb, model, centers)
        assert cube.band_centers == tuple(centers)

    def test_rejects_non_rgb(self):
        model = build_spectral_recovery(SpectralRecoveryConfig(channels=8, blocks=1))
        with pytest.raises(ShapeError):
            model(torch.rand(1, 4, 8, 8))

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError, match="registered"):
            build_spectral_recovery(SpectralRecoveryConfig(variant="nope"))

    def test_register_variant(self):
        def factory(config):
            return torch.nn.Conv2d(3, config.bands, kernel_size=1)

        register_spectral_recovery("pointwise-test", factory)
        model = build_spectral_recovery(
            SpectralRecoveryConfig(variant="pointwise-test", bands=5)
        )
        assert model(torch.rand(1, 3, 4, 4)).shape == (1, 5, 4, 4)

    def test_forward_helper(self):
        model = build_spectral_recovery(SpectralRecoveryConfig(channels=8, blocks=1))
        cube = spectral_recovery_forward(RgbImage(np.full((3, 4, 4), 0.5)), model)
        assert cube.values.shape == (16, 4, 4)
