"""Demosaicking generator and patch discriminator.

The generator refines a bilinearly demosaicked cube with a U-shaped network built
from multi-scale residual (Res2) blocks. Its head clamps the refinement to [0, 1] and
then writes the raw mosaic samples back in place, so data fidelity is a property of
the architecture and holds for any parameters, trained or not.

The discriminator is the 70x70 patch design: four strided 4x4 convolutions and one
score convolution, producing one least-squares score per overlapping patch.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from .errors import ConfigurationError, ShapeError
from .hypercube import (
    Hypercube,
    MsfaPattern,
    RgbImage,
    SnapshotMosaic,
    band_mask_tensor,
    override,
    override_tensor,
)

logger = logging.getLogger(__name__)


MASK_CACHE_SIZE = 8


@functools.lru_cache(maxsize=MASK_CACHE_SIZE)
def _sampling_mask(
    pattern: MsfaPattern, height: int, width: int, device: torch.device
) -> torch.Tensor:
    return band_mask_tensor(pattern, height, width, device)


@dataclass
class GeneratorConfig:
    """Topology of the demosaicking generator.

    Attributes:
        bands (int): Input and output band count ``B``.
        base_channels (int): Feature width at full resolution; doubles per level.
        depth (int): Number of down/up-sampling levels, ``>= 1``.
        blocks_per_level (int): Res2 blocks at each level of encoder and decoder.
        scales (int): Channel groups inside a Res2 block; divides ``base_channels``.

    """

    bands: int = 16
    base_channels: int = 32
    depth: int = 3
    blocks_per_level: int = 1
    scales: int = 4

    def __post_init__(self) -> None:  # noqa: D105
        if self.depth < 1:
            raise ConfigurationError(f"Generator depth must be >= 1, got {self.depth}.")
        if self.bands < 1 or self.base_channels < 1 or self.blocks_per_level < 0:
            raise ConfigurationError(
                "Generator widths and block counts must be positive."
            )
        if self.scales < 1 or self.base_channels % self.scales:
            raise ConfigurationError(
                f"base_channels ({self.base_channels}) must be divisible by scales "
                f"({self.scales})."
            )


@dataclass
class DiscriminatorConfig:
    """Topology of the patch discriminator.

    Attributes:
        input_channels (int): Always 3 (RGB).
        base_channels (int): Width of the first layer; doubles up to 8x.
        norm (str): ``"none"`` or ``"instance"``. Instance normalisation mixes
            statistics across the whole image, so only ``"none"`` keeps every score a
            function of its own receptive field.

    """

    input_channels: int = 3
    base_channels: int = 64
    norm: str = "none"

    def __post_init__(self) -> None:  # noqa: D105
        if self.input_channels != 3:  # noqa: PLR2004
            raise ConfigurationError("The discriminator scores RGB images (3 channels).")
        if self.norm not in {"none", "instance"}:
            raise ConfigurationError(f"Unknown discriminator norm {self.norm!r}.")


class Res2Block(nn.Module):
    """Multi-scale residual block.

    Channels are split into ``scales`` groups; each group after the first is convolved
    together with the previous group's output, widening the receptive field inside a
    single block.
    """

    def __init__(self, channels: int, scales: int):  # noqa: D107
        super().__init__()
        self.scales = scales
        width = channels // scales
        self.reduce = nn.Conv2d(channels, channels, kernel_size=1)
        self.convs = nn.ModuleList(
            nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect")
            for _ in range(scales - 1)
        )
        self.expand = nn.Conv2d(channels, channels, kernel_size=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # noqa: D102
        groups = torch.chunk(self.act(self.reduce(x)), self.scales, dim=1)
        outputs = [groups[0]]
        previous = None
        for group, conv in zip(groups[1:], self.convs, strict=True):
            previous = self.act(conv(group if previous is None else group + previous))
            outputs.append(previous)
        return self.act(x + self.expand(torch.cat(outputs, dim=1)))


def _stage(channels: int, blocks: int, scales: int) -> nn.Sequential:
    return nn.Sequential(*[Res2Block(channels, scales) for _ in range(blocks)])


class DemosaicGenerator(nn.Module):
    """U-shaped Res2 refinement network with an embedded overriding operator.

    Example:
        ```python
        >>> pattern = MsfaPattern.default(4)
        >>> generator = DemosaicGenerator(GeneratorConfig(bands=16), pattern)
        >>> out = generator(lin, raw)  # (N, 16, H, W), (N, 1, H, W)
        ```

    """

    def __init__(self, config: GeneratorConfig, pattern: MsfaPattern):  # noqa: D107
        super().__init__()
        if config.bands != pattern.band_count:
            raise ConfigurationError(
                f"Generator has {config.bands} bands but the pattern samples "
                f"{pattern.band_count}."
            )
        self.config = config
        self.pattern = pattern
        c = config.base_channels
        self.head = nn.Conv2d(config.bands, c, 3, padding=1, padding_mode="reflect")
        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        for level in range(config.depth):
            width = c * 2**level
            self.encoders.append(_stage(width, config.blocks_per_level, config.scales))
            self.downs.append(nn.Conv2d(width, width * 2, 4, stride=2, padding=1))
        bottom = c * 2**config.depth
        self.bottleneck = _stage(bottom, config.blocks_per_level, config.scales)
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(config.depth)):
            width = c * 2**level
            self.ups.append(nn.ConvTranspose2d(width * 2, width, 2, stride=2))
            self.fuses.append(nn.Conv2d(width * 2, width, kernel_size=1))
            self.decoders.append(_stage(width, config.blocks_per_level, config.scales))
        self.tail = nn.Conv2d(c, config.bands, 3, padding=1, padding_mode="reflect")

    def residual(self, lin: torch.Tensor) -> torch.Tensor:
        """Return the backbone's correction to the linear cube."""
        h, w = lin.shape[-2:]
        # reflect padding needs the bottleneck to be at least 2x2
        multiple = 2 ** (self.config.depth + 1)
        pad_h, pad_w = (-h) % multiple, (-w) % multiple
        x = F.pad(lin, (0, pad_w, 0, pad_h), mode="replicate") if pad_h or pad_w else lin
        x = self.head(x)
        skips = []
        for encoder, down in zip(self.encoders, self.downs, strict=True):
            x = encoder(x)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        for up, fuse, decoder in zip(self.ups, self.fuses, self.decoders, strict=True):
            x = decoder(fuse(torch.cat([up(x), skips.pop()], dim=1)))
        return self.tail(x)[..., :h, :w]

    def forward(self, lin: torch.Tensor, mosaic: torch.Tensor) -> torch.Tensor:
        """Refine ``lin`` (N, B, H, W), restoring the samples of ``mosaic`` (N, 1, H, W).

        Raises:
            ShapeError: If the cube and mosaic disagree in shape or band count.

        """
        if lin.ndim != 4 or lin.shape[1] != self.config.bands:  # noqa: PLR2004
            raise ShapeError(
                f"Generator expects (N, {self.config.bands}, H, W), "
                f"got {tuple(lin.shape)}."
            )
        if mosaic.shape != (lin.shape[0], 1, *lin.shape[-2:]):
            raise ShapeError(
                f"Mosaic {tuple(mosaic.shape)} does not match cube {tuple(lin.shape)}."
            )
        refined = (lin + self.residual(lin)).clamp(0.0, 1.0)
        return override_tensor(
            refined, mosaic, _sampling_mask(self.pattern, *lin.shape[-2:], lin.device)
        )


class PatchDiscriminator(nn.Module):
    """70x70 patch discriminator returning a map of real-valued scores."""

    KERNEL = 4
    LAYERS = ((2, 1), (2, 2), (2, 4), (1, 8), (1, None))  # (stride, width multiplier)

    def __init__(self, config: DiscriminatorConfig | None = None):  # noqa: D107
        super().__init__()
        self.config = config or DiscriminatorConfig()
        c = self.config.base_channels
        layers: list[nn.Module] = []
        in_ch = self.config.input_channels
        for index, (stride, mult) in enumerate(self.LAYERS):
            out_ch = 1 if mult is None else c * mult
            layers.append(
                nn.Conv2d(in_ch, out_ch, self.KERNEL, stride=stride, padding=1)
            )
            if mult is not None:
                if index > 0 and self.config.norm == "instance":
                    layers.append(nn.InstanceNorm2d(out_ch))
                layers.append(nn.LeakyReLU(0.2))
            in_ch = out_ch
        self.layers = nn.Sequential(*layers)

    @classmethod
    def receptive_field(cls) -> int:
        """Input pixels seen by one output score along each axis (70)."""
        field = 1
        for stride, _ in reversed(cls.LAYERS):
            field = (field - 1) * stride + cls.KERNEL
        return field

    @classmethod
    def output_size(cls, size: int) -> int:
        """Score-map length for an input of ``size`` pixels."""
        for stride, _ in cls.LAYERS:
            size = (size + 2 - cls.KERNEL) // stride + 1
        return size

    @classmethod
    def output_stride(cls) -> int:
        """Input pixels between neighbouring scores (8)."""
        return int(np.prod([stride for stride, _ in cls.LAYERS]))

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:  # noqa: D102
        field = self.receptive_field()
        if rgb.ndim != 4 or rgb.shape[1] != self.config.input_channels:  # noqa: PLR2004
            raise ShapeError(
                f"Discriminator expects (N, 3, H, W), got {tuple(rgb.shape)}."
            )
        if min(rgb.shape[-2:]) < field:
            raise ShapeError(
                f"Discriminator input {tuple(rgb.shape[-2:])} is smaller than its "
                f"{field}x{field} receptive field."
            )
        return self.layers(rgb)


def xavier_init_(module: nn.Module) -> nn.Module:
    """Glorot-normal initialise every convolution in ``module``; zero its biases."""
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d | nn.ConvTranspose2d):
            nn.init.xavier_normal_(layer.weight)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
    return module


def _model_spec(model: nn.Module) -> tuple[torch.dtype, torch.device]:
    param = next(model.parameters())
    return param.dtype, param.device


def demosaic_forward(
    lin_cube: Hypercube, mosaic: SnapshotMosaic, model: DemosaicGenerator
) -> Hypercube:
    """Run the generator on one frame in inference mode.

    Args:
        lin_cube (Hypercube): Bilinear demosaicking of ``mosaic``.
        mosaic (SnapshotMosaic): The raw frame.
        model (DemosaicGenerator): Trained or freshly initialised generator.

    Returns:
        Hypercube: Refined cube; equals ``mosaic`` exactly at every sampled position.

    Raises:
        ShapeError: If cube and mosaic shapes disagree.

    """
    if (lin_cube.height, lin_cube.width) != (mosaic.height, mosaic.width):
        raise ShapeError(
            f"Cube {lin_cube.height}x{lin_cube.width} does not match mosaic "
            f"{mosaic.height}x{mosaic.width}."
        )
    dtype, device = _model_spec(model)
    lin = torch.as_tensor(np.asarray(lin_cube.values), dtype=dtype, device=device)
    raw = torch.as_tensor(mosaic.values, dtype=dtype, device=device)
    model.eval()
    with torch.inference_mode():
        out = model(lin[None], raw[None, None])[0]
    # Re-applied in float64 so samples match the mosaic bit for bit at any precision.
    return override(Hypercube(out.cpu().numpy(), lin_cube.band_centers), mosaic)


def discriminator_forward(rgb: RgbImage, model: PatchDiscriminator) -> np.ndarray:
    """Score one RGB image, returning the ``(h, w)`` patch score map."""
    dtype, device = _model_spec(model)
    x = torch.as_tensor(rgb.values, dtype=dtype, device=device)[None]
    model.eval()
    with torch.inference_mode():
        return model(x)[0, 0].cpu().numpy()
