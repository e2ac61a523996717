"""Hyperspectral to RGB conversion and RGB to hyperspectral recovery.

Three converters live here:

- the fixed, physics-based path (`fixed_hsi_to_rgb`): spectra are integrated against
  the CIE 1931 colour matching functions, mapped to linear sRGB with the D65 matrix and
  gamma encoded;
- the trainable per-pixel converter (`RgbConverter`), two 1x1 convolutions that
  expand the spectral signature and reduce it to three channels;
- the spectral recovery network (`ReferenceSpectralRecovery`) that maps RGB back to
  a hypercube for the cycle-consistency term. Alternative recovery architectures
  plug in through `register_spectral_recovery`.
"""

from __future__ import annotations

import io
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import numpy.typing as npt
import torch
from torch import nn

from .errors import ConfigurationError, ShapeError
from .hypercube import Hypercube, RgbImage

logger = logging.getLogger(__name__)

# Linear sRGB primaries, D65 white (IEC 61966-2-1).
XYZ_TO_LINEAR_SRGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)
# The XYZ that the matrix above maps exactly onto (1, 1, 1).
REFERENCE_WHITE_XYZ = np.linalg.solve(XYZ_TO_LINEAR_SRGB, np.ones(3))

SRGB_LINEAR_THRESHOLD = 0.0031308
_CMF_RESOURCE = "cie1931_2deg_5nm.txt"


@dataclass(frozen=True)
class ColorMatchingTable:
    """Tabulated colour matching functions.

    Attributes:
        wavelengths (np.ndarray): Strictly increasing sample wavelengths in nm.
        xbar (np.ndarray): x-bar weights, one per wavelength.
        ybar (np.ndarray): y-bar weights.
        zbar (np.ndarray): z-bar weights.

    """

    wavelengths: np.ndarray
    xbar: np.ndarray
    ybar: np.ndarray
    zbar: np.ndarray

    def __post_init__(self) -> None:  # noqa: D105
        arrays = {}
        for name in ("wavelengths", "xbar", "ybar", "zbar"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True).ravel()
            array.setflags(write=False)
            arrays[name] = array
            object.__setattr__(self, name, array)
        lengths = {a.size for a in arrays.values()}
        if len(lengths) != 1 or lengths == {0}:
            raise ConfigurationError(
                f"Colour matching columns must be non-empty and of equal length, "
                f"got {[a.size for a in arrays.values()]}."
            )
        if np.any(np.diff(arrays["wavelengths"]) <= 0):
            raise ConfigurationError("CMF wavelengths must be strictly increasing.")
        for name in ("xbar", "ybar", "zbar"):
            if np.any(arrays[name] < 0):
                raise ConfigurationError(f"CMF column {name} has negative weights.")

    @classmethod
    def from_text(cls, source: str | Path) -> ColorMatchingTable:
        """Read a ``wavelength xbar ybar zbar`` table (whitespace or comma separated).

        Lines starting with ``#`` are ignored.
        """
        table = _load_table(Path(source).read_text(encoding="utf-8"), columns=4)
        return cls(table[:, 0], table[:, 1], table[:, 2], table[:, 3])

    @classmethod
    def from_channel_tables(
        cls, x_path: str | Path, y_path: str | Path, z_path: str | Path
    ) -> ColorMatchingTable:
        """Read three two-column ``wavelength value`` tables, one per channel."""
        tables = [
            _load_table(Path(p).read_text(encoding="utf-8"), columns=2)
            for p in (x_path, y_path, z_path)
        ]
        wavelengths = tables[0][:, 0]
        for table in tables[1:]:
            if table.shape != tables[0].shape or not np.array_equal(
                table[:, 0], wavelengths
            ):
                raise ConfigurationError("Channel tables must share their wavelengths.")
        return cls(wavelengths, tables[0][:, 1], tables[1][:, 1], tables[2][:, 1])

    @classmethod
    def default(cls) -> ColorMatchingTable:
        """Return the packaged CIE 1931 2-degree observer at 5 nm."""
        text = resources.files("hsi_demosaic").joinpath("data", _CMF_RESOURCE)
        return cls(*_load_table(text.read_text(encoding="utf-8"), columns=4).T)

    def sample(self, band_centers: Sequence[float]) -> np.ndarray:
        """Linearly interpolate the table at ``band_centers``.

        Returns:
            np.ndarray: ``(B, 3)`` array of (xbar, ybar, zbar) weights.

        Raises:
            ConfigurationError: If a band centre lies outside the tabulated range.

        """
        centers = np.asarray(band_centers, dtype=np.float64)
        lo, hi = self.wavelengths[0], self.wavelengths[-1]
        outside = centers[(centers < lo) | (centers > hi)]
        if outside.size:
            raise ConfigurationError(
                f"Band centres {outside.tolist()} nm lie outside the colour matching "
                f"table range [{lo}, {hi}] nm."
            )
        return np.stack(
            [
                np.interp(centers, self.wavelengths, col)
                for col in (self.xbar, self.ybar, self.zbar)
            ],
            axis=1,
        )


def _load_table(text: str, columns: int) -> np.ndarray:
    table = np.loadtxt(io.StringIO(text.replace(",", " ")), comments="#", ndmin=2)
    if table.shape[1] != columns:
        raise ConfigurationError(
            f"Expected a {columns}-column table, got {table.shape[1]} columns."
        )
    return table


def band_widths(band_centers: Sequence[float]) -> np.ndarray:
    """Return the midpoint spacing of band centres, used as integration widths."""
    centers = np.asarray(band_centers, dtype=np.float64)
    if centers.size == 1:
        return np.ones(1)
    return np.gradient(centers)


def xyz_matrix(band_centers: Sequence[float], cmf: ColorMatchingTable) -> np.ndarray:
    """Return the ``(3, B)`` spectrum to XYZ matrix.

    The matrix is normalised per channel so that a flat unit spectrum maps to the
    reference white of the sRGB matrix.
    """
    weights = cmf.sample(band_centers) * band_widths(band_centers)[:, None]
    white = weights.sum(axis=0)
    if np.any(white <= 0):
        raise ConfigurationError(
            "Band centres give zero response in at least one XYZ channel."
        )
    return (weights * (REFERENCE_WHITE_XYZ / white)).T


def conversion_matrix(
    band_centers: Sequence[float], cmf: ColorMatchingTable
) -> np.ndarray:
    """Return the ``(3, B)`` spectrum to linear-sRGB matrix."""
    return XYZ_TO_LINEAR_SRGB @ xyz_matrix(band_centers, cmf)


def spectrum_to_xyz(cube: Hypercube, cmf: ColorMatchingTable) -> np.ndarray:
    """Integrate a cube into CIE XYZ, returning a ``(3, H, W)`` array."""
    return np.einsum("cb,bhw->chw", xyz_matrix(cube.band_centers, cmf), cube.values)


def srgb_gamma(linear: npt.ArrayLike) -> np.ndarray:
    """Apply the sRGB transfer function to linear values in [0, 1]."""
    c = np.asarray(linear, dtype=np.float64)
    return np.where(
        c <= SRGB_LINEAR_THRESHOLD,
        12.92 * c,
        1.055 * np.power(np.maximum(c, SRGB_LINEAR_THRESHOLD), 1.0 / 2.4) - 0.055,
    )


def srgb_gamma_tensor(linear: torch.Tensor) -> torch.Tensor:
    """Differentiable `srgb_gamma`."""
    safe = linear.clamp_min(SRGB_LINEAR_THRESHOLD)
    return torch.where(
        linear <= SRGB_LINEAR_THRESHOLD,
        12.92 * linear,
        1.055 * torch.pow(safe, 1.0 / 2.4) - 0.055,
    )


def fixed_hsi_to_rgb(cube: Hypercube, cmf: ColorMatchingTable | None = None) -> RgbImage:
    """Render a hypercube to sRGB with the CIE 1931 observer.

    Args:
        cube (Hypercube): Spectral image; its band centres must lie in the table.
        cmf (ColorMatchingTable | None): Colour matching functions. Defaults to
            the packaged CIE 1931 2-degree table.

    Returns:
        RgbImage: Gamma-encoded sRGB in [0, 1].

    Raises:
        ConfigurationError: If band centres fall outside the table.

    Example:
        ```python
        >>> rgb = fixed_hsi_to_rgb(Hypercube(np.ones((16, 4, 4))))
        >>> rgb.values[:, 0, 0]
        array([1., 1., 1.])
        ```

    """
    cmf = cmf or ColorMatchingTable.default()
    linear = np.einsum(
        "cb,bhw->chw", conversion_matrix(cube.band_centers, cmf), cube.values
    )
    return RgbImage(np.clip(srgb_gamma(np.clip(linear, 0.0, 1.0)), 0.0, 1.0))


class FixedRgbConverter(nn.Module):
    """Torch module of the fixed conversion, used where a trainable converter fits.

    Holds no parameters, so optimisers ignore it.
    """

    def __init__(
        self, band_centers: Sequence[float], cmf: ColorMatchingTable | None = None
    ):
        """Precompute the linear-sRGB matrix for ``band_centers``."""
        super().__init__()
        matrix = conversion_matrix(band_centers, cmf or ColorMatchingTable.default())
        self.register_buffer("matrix", torch.from_numpy(matrix).float())

    def forward(self, cube: torch.Tensor) -> torch.Tensor:  # noqa: D102
        if cube.shape[1] != self.matrix.shape[1]:
            raise ShapeError(
                f"Expected {self.matrix.shape[1]} bands, got {cube.shape[1]}."
            )
        linear = torch.einsum("cb,nbhw->nchw", self.matrix.to(cube.dtype), cube)
        return srgb_gamma_tensor(linear.clamp(0.0, 1.0)).clamp(0.0, 1.0)


@dataclass
class RgbConverterConfig:
    """Topology of the trainable per-pixel RGB converter.

    Attributes:
        input_bands (int): Spectral bands ``B`` of the input cube.
        hidden_width (int): Width of the expanded spectral representation, ``>= B``.

    """

    input_bands: int = 16
    hidden_width: int = 64

    def __post_init__(self) -> None:  # noqa: D105
        if self.input_bands < 1:
            raise ConfigurationError("input_bands must be positive.")
        if self.hidden_width < self.input_bands:
            raise ConfigurationError(
                f"hidden_width ({self.hidden_width}) must be >= input_bands "
                f"({self.input_bands})."
            )


class RgbConverter(nn.Module):
    """Per-pixel MLP: ``B -> hidden_width -> 3`` with 1x1 convolutions."""

    def __init__(self, config: RgbConverterConfig):  # noqa: D107
        super().__init__()
        self.config = config
        self.expand = nn.Conv2d(config.input_bands, config.hidden_width, kernel_size=1)
        self.act = nn.ReLU()
        self.reduce = nn.Conv2d(config.hidden_width, 3, kernel_size=1)

    def forward(self, cube: torch.Tensor) -> torch.Tensor:  # noqa: D102
        if cube.shape[1] != self.config.input_bands:
            raise ShapeError(
                f"RGB converter expects {self.config.input_bands} bands, "
                f"got {cube.shape[1]}."
            )
        return self.reduce(self.act(self.expand(cube))).clamp(0.0, 1.0)


@dataclass
class SpectralRecoveryConfig:
    """Configuration of the RGB to hyperspectral network.

    Attributes:
        variant (str): Registered architecture name; ``"reference"`` is built in.
        bands (int): Output band count ``B``.
        channels (int): Feature width.
        blocks (int): Number of attention residual blocks.
        reduction (int): Channel-attention bottleneck ratio.

    """

    variant: str = "reference"
    bands: int = 16
    channels: int = 64
    blocks: int = 4
    reduction: int = 8


class _ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.gate = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(channels, hidden, kernel_size=1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, kernel_size=1),
            nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)


class _AttentionResBlock(nn.Module):
    def __init__(self, channels: int, reduction: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.PReLU(channels),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _ChannelAttention(channels, reduction),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class ReferenceSpectralRecovery(nn.Module):
    """Residual network with adaptive channel attention mapping RGB to ``B`` bands.

    Spatial size is preserved; the network is fully convolutional and differentiable.
    """

    def __init__(self, config: SpectralRecoveryConfig):  # noqa: D107
        super().__init__()
        self.config = config
        self.head = nn.Conv2d(3, config.channels, 3, padding=1, padding_mode="reflect")
        self.blocks = nn.Sequential(
            *[
                _AttentionResBlock(config.channels, config.reduction)
                for _ in range(config.blocks)
            ]
        )
        self.tail = nn.Conv2d(
            config.channels, config.bands, 3, padding=1, padding_mode="reflect"
        )

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:  # noqa: D102
        if rgb.shape[1] != 3:  # noqa: PLR2004
            raise ShapeError(
                f"Spectral recovery expects 3 channels, got {rgb.shape[1]}."
            )
        features = self.head(rgb)
        return self.tail(features + self.blocks(features))


SpectralRecoveryFactory = Callable[[SpectralRecoveryConfig], nn.Module]
_SPECTRAL_RECOVERY: dict[str, SpectralRecoveryFactory] = {
    "reference": ReferenceSpectralRecovery,
}


def register_spectral_recovery(name: str, factory: SpectralRecoveryFactory) -> None:
    """Register an RGB to hyperspectral architecture under ``name``.

    The factory receives the `SpectralRecoveryConfig` and must return a module that
    maps ``(N, 3, H, W)`` to ``(N, bands, H, W)`` differentiably.
    """
    _SPECTRAL_RECOVERY[name] = factory
    logger.debug("Registered spectral recovery variant %r", name)


def build_spectral_recovery(config: SpectralRecoveryConfig) -> nn.Module:
    """Instantiate the registered spectral recovery variant."""
    try:
        factory = _SPECTRAL_RECOVERY[config.variant]
    except KeyError:
        raise ConfigurationError(
            f"Unknown spectral recovery variant {config.variant!r}; "
            f"registered: {sorted(_SPECTRAL_RECOVERY)}."
        ) from None
    return factory(config)


def _model_spec(model: nn.Module) -> tuple[torch.dtype, torch.device]:
    """Dtype and device of the first parameter, else buffer; float32 on CPU if none."""
    tensor = next(model.parameters(), None)
    if tensor is None:
        tensor = next(model.buffers(), None)
    if tensor is None:
        return torch.float32, torch.device("cpu")
    return tensor.dtype, tensor.device


def rgb_converter_forward(cube: Hypercube, model: nn.Module) -> RgbImage:
    """Run a trained converter on one cube in inference mode."""
    dtype, device = _model_spec(model)
    x = torch.as_tensor(np.asarray(cube.values), dtype=dtype, device=device)[None]
    model.eval()
    with torch.inference_mode():
        rgb = model(x)[0]
    return RgbImage(rgb.double().cpu().numpy())


def spectral_recovery_forward(
    rgb: RgbImage, model: nn.Module, band_centers: Sequence[float] | None = None
) -> Hypercube:
    """Recover a hypercube from an RGB image in inference mode."""
    dtype, device = _model_spec(model)
    x = torch.as_tensor(rgb.values, dtype=dtype, device=device)[None]
    model.eval()
    with torch.inference_mode():
        cube = model(x)[0]
    centers = () if band_centers is None else tuple(band_centers)
    return Hypercube(cube.cpu().numpy(), centers)
