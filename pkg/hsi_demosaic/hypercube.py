"""Core spectral image types and the snapshot mosaic sampling model.

A snapshot mosaic camera covers its sensor with a periodic multispectral filter array
(MSFA): every pixel records exactly one spectral band, chosen by the pixel's position
inside a ``k x k`` tile. This module holds the value types used throughout the package
(`MsfaPattern`, `SnapshotMosaic`, `Hypercube`, `RgbImage`) and the pure operations on
them:

- `simulate_mosaic` samples a hypercube through a pattern,
- `linear_demosaic` fills every band by bilinear interpolation of its samples,
- `override` writes the raw samples back into a cube (exact data fidelity),
- `inverse_pixel_shuffle` splits a band image into its ``k**2`` phase sub-images.

All values are immutable numpy arrays; the torch counterparts at the bottom of the
module are what the networks and losses use on batched tensors.

Usage
-----
```python
from hsi_demosaic.hypercube import MsfaPattern, linear_demosaic, simulate_mosaic

pattern = MsfaPattern.default(period=4)
mosaic = simulate_mosaic(cube, pattern)
lin = linear_demosaic(mosaic)
```
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import torch
import torch.nn.functional as F  # noqa: N812
from scipy import ndimage

from .errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_PERIOD = 4
DEFAULT_BAND_RANGE_NM = (460.0, 630.0)


def default_band_centers(
    bands: int,
    start: float = DEFAULT_BAND_RANGE_NM[0],
    stop: float = DEFAULT_BAND_RANGE_NM[1],
) -> tuple[float, ...]:
    """Return ``bands`` wavelengths in nm evenly spaced over ``[start, stop]``."""
    if bands < 1:
        raise ConfigurationError(f"Band count must be positive, got {bands}.")
    if bands == 1:
        return ((start + stop) / 2.0,)
    return tuple(float(v) for v in np.linspace(start, stop, bands))


def _frozen(values: npt.ArrayLike, dtype=None) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MsfaPattern:
    """Periodic band-to-pixel layout of a snapshot mosaic sensor.

    Attributes:
        period (int): Tile size ``k``; the layout repeats every ``k`` pixels.
        band_map (tuple[tuple[int, ...], ...]): ``k x k`` grid of band indices.
            ``band(y, x) = band_map[y % k][x % k]``.

    Example:
        ```python
        >>> pattern = MsfaPattern.default(4)
        >>> pattern.band_count
        16
        >>> pattern.band(5, 6)
        6
        ```

    """

    period: int
    band_map: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:  # noqa: D105
        if self.period < 1:
            raise ConfigurationError(f"MSFA period must be positive, got {self.period}.")
        rows = tuple(tuple(int(b) for b in row) for row in self.band_map)
        if len(rows) != self.period or any(len(r) != self.period for r in rows):
            raise ConfigurationError(
                f"band_map must be {self.period}x{self.period}, got "
                f"{[len(r) for r in rows]}."
            )
        object.__setattr__(self, "band_map", rows)
        used = sorted({b for row in rows for b in row})
        if used != list(range(len(used))):
            raise ConfigurationError(
                f"band_map must use every band index in [0, B) exactly, got {used}."
            )

    @classmethod
    def default(cls, period: int = DEFAULT_PERIOD) -> MsfaPattern:
        """Return the row-major layout where band ``i*k + j`` sits at ``(i, j)``."""
        return cls(
            period,
            tuple(tuple(i * period + j for j in range(period)) for i in range(period)),
        )

    @property
    def band_count(self) -> int:
        """Number of distinct bands ``B``."""
        return 1 + max(b for row in self.band_map for b in row)

    def band(self, y: int, x: int) -> int:
        """Return the band sampled at pixel ``(y, x)``."""
        return self.band_map[y % self.period][x % self.period]

    def phases(self, band: int) -> list[tuple[int, int]]:
        """Return the tile offsets ``(i, j)`` at which ``band`` is sampled."""
        return [
            (i, j)
            for i, row in enumerate(self.band_map)
            for j, b in enumerate(row)
            if b == band
        ]

    def check_frame(self, height: int, width: int) -> None:
        """Raise `ShapeError` unless both dimensions are multiples of the period."""
        if height % self.period or width % self.period:
            raise ShapeError(
                f"Frame {height}x{width} is not divisible by MSFA period {self.period}."
            )

    def band_index_map(self, height: int, width: int) -> np.ndarray:
        """Return the ``H x W`` integer map of sampled band indices."""
        tile = np.asarray(self.band_map, dtype=np.int64)
        reps = (-(-height // self.period), -(-width // self.period))
        return np.tile(tile, reps)[:height, :width]

    def band_mask(self, height: int, width: int) -> np.ndarray:
        """Return the ``B x H x W`` boolean mask of sampled positions per band."""
        index = self.band_index_map(height, width)
        return index[None, :, :] == np.arange(self.band_count)[:, None, None]


@dataclass(frozen=True)
class SnapshotMosaic:
    """Single-channel raw sensor frame with one spectral band per pixel.

    Attributes:
        values (np.ndarray): ``H x W`` array of normalised intensities in [0, 1].
        pattern (MsfaPattern): The filter layout the frame was captured through.

    """

    values: np.ndarray
    pattern: MsfaPattern

    def __post_init__(self) -> None:  # noqa: D105
        values = np.asarray(self.values)
        if values.ndim != 2:  # noqa: PLR2004
            raise ShapeError(f"Mosaic must be 2-D, got shape {values.shape}.")
        self.pattern.check_frame(*values.shape)
        values = _frozen(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("Mosaic values must be finite.")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("Mosaic values must lie in [0, 1]; normalise raw data.")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:  # noqa: D102
        return self.values.shape[0]

    @property
    def width(self) -> int:  # noqa: D102
        return self.values.shape[1]


@dataclass(frozen=True)
class Hypercube:
    """A ``B x H x W`` spectral image.

    Attributes:
        values (np.ndarray): Band-major real array, float32 or float64.
        band_centers (tuple[float, ...]): Strictly increasing centre wavelengths in
            nm, one per band. Defaults to `default_band_centers`.

    """

    values: np.ndarray
    band_centers: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:  # noqa: D105
        values = np.asarray(self.values)
        if values.ndim != 3:  # noqa: PLR2004
            raise ShapeError(f"Hypercube must be 3-D (B, H, W), got {values.shape}.")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        values = _frozen(values)
        if not np.all(np.isfinite(values)):
            raise ValueError("Hypercube values must be finite.")
        centers = tuple(float(c) for c in self.band_centers) or default_band_centers(
            values.shape[0]
        )
        if len(centers) != values.shape[0]:
            raise ShapeError(
                f"{len(centers)} band centres given for {values.shape[0]} bands."
            )
        if any(b <= a for a, b in zip(centers, centers[1:], strict=False)):
            raise ConfigurationError("Band centres must be strictly increasing.")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "band_centers", centers)

    @property
    def bands(self) -> int:  # noqa: D102
        return self.values.shape[0]

    @property
    def height(self) -> int:  # noqa: D102
        return self.values.shape[1]

    @property
    def width(self) -> int:  # noqa: D102
        return self.values.shape[2]

    def with_values(self, values: npt.ArrayLike) -> Hypercube:
        """Return a cube with new values and the same band centres."""
        return Hypercube(np.asarray(values), self.band_centers)


@dataclass(frozen=True)
class RgbImage:
    """A ``3 x H x W`` display rendering with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:  # noqa: D105
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[0] != 3:  # noqa: PLR2004
            raise ShapeError(f"RGB image must have shape (3, H, W), got {values.shape}.")
        values = _frozen(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("RGB values must be finite.")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("RGB values must lie in [0, 1].")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:  # noqa: D102
        return self.values.shape[1]

    @property
    def width(self) -> int:  # noqa: D102
        return self.values.shape[2]


def normalize_raw(raw: npt.ArrayLike, white_level: int) -> np.ndarray:
    """Scale an integer sensor frame into [0, 1] by its white level.

    Raises:
        ValueError: If any raw value is negative or exceeds ``white_level``.

    """
    raw = np.asarray(raw)
    if white_level <= 0:
        raise ConfigurationError(f"white_level must be positive, got {white_level}.")
    if raw.size and (raw.min() < 0 or raw.max() > white_level):
        raise ValueError(
            f"Raw values span [{raw.min()}, {raw.max()}], outside [0, {white_level}]."
        )
    return raw.astype(np.float64) / float(white_level)


def _check_cube_against(cube: Hypercube, pattern: MsfaPattern, h: int, w: int) -> None:
    if cube.bands != pattern.band_count:
        raise ShapeError(
            f"Cube has {cube.bands} bands but the pattern samples {pattern.band_count}."
        )
    if (cube.height, cube.width) != (h, w):
        raise ShapeError(
            f"Cube is {cube.height}x{cube.width} but the mosaic is {h}x{w}."
        )


def simulate_mosaic(cube: Hypercube, pattern: MsfaPattern) -> SnapshotMosaic:
    """Sample a hypercube through an MSFA, keeping one band per pixel.

    Args:
        cube (Hypercube): Fully sampled scene with ``pattern.band_count`` bands.
        pattern (MsfaPattern): Sensor layout.

    Returns:
        SnapshotMosaic: ``mosaic[y, x] = cube[band(y, x), y, x]``, clipped to [0, 1].

    Raises:
        ShapeError: If band count or frame size do not fit the pattern.

    """
    pattern.check_frame(cube.height, cube.width)
    _check_cube_against(cube, pattern, cube.height, cube.width)
    index = pattern.band_index_map(cube.height, cube.width)
    sampled = np.take_along_axis(cube.values, index[None, :, :], axis=0)[0]
    return SnapshotMosaic(np.clip(sampled, 0.0, 1.0), pattern)


def _interpolate_lattice(
    samples: np.ndarray, phase: tuple[int, int], period: int, shape: tuple[int, int]
) -> np.ndarray:
    """Bilinearly interpolate a phase lattice onto the full grid.

    Coordinates outside the lattice hull are clamped, which replicates the nearest
    edge sample.
    """
    h, w = samples.shape
    ty = np.clip((np.arange(shape[0]) - phase[0]) / period, 0.0, h - 1.0)
    tx = np.clip((np.arange(shape[1]) - phase[1]) / period, 0.0, w - 1.0)
    grid_y, grid_x = np.meshgrid(ty, tx, indexing="ij")
    return ndimage.map_coordinates(
        samples, [grid_y, grid_x], order=1, mode="nearest", prefilter=False
    )


def linear_demosaic(
    mosaic: SnapshotMosaic, band_centers: Sequence[float] | None = None
) -> Hypercube:
    """Bilinear demosaicking of a snapshot mosaic.

    Each band is interpolated from its own sparse sample lattice; border pixels take
    the value of the nearest same-band sample. A band sampled at several tile phases
    is the mean of the per-phase interpolations. Sampled positions keep the raw value
    exactly.

    Args:
        mosaic (SnapshotMosaic): Raw frame.
        band_centers (Sequence[float] | None): Wavelengths for the output cube.

    Returns:
        Hypercube: ``B x H x W`` cube satisfying ``override(cube, mosaic) == cube``.

    """
    pattern = mosaic.pattern
    k = pattern.period
    shape = (mosaic.height, mosaic.width)
    out = np.empty((pattern.band_count, *shape), dtype=np.float64)
    for b in range(pattern.band_count):
        phases = pattern.phases(b)
        planes = [
            _interpolate_lattice(mosaic.values[i::k, j::k], (i, j), k, shape)
            for i, j in phases
        ]
        out[b] = planes[0] if len(planes) == 1 else np.mean(planes, axis=0)
    cube = Hypercube(out, tuple(band_centers) if band_centers is not None else ())
    return override(cube, mosaic)


def override(cube: Hypercube, mosaic: SnapshotMosaic) -> Hypercube:
    """Write the raw samples of ``mosaic`` into ``cube`` at their sampled bands.

    ``out[b, y, x] = mosaic[y, x]`` where ``band(y, x) == b`` and ``cube[b, y, x]``
    elsewhere. The operation is idempotent.

    Raises:
        ShapeError: If the cube does not match the mosaic's frame or band count.

    """
    _check_cube_against(cube, mosaic.pattern, mosaic.height, mosaic.width)
    mask = mosaic.pattern.band_mask(mosaic.height, mosaic.width)
    dtype = np.result_type(cube.values.dtype, np.float64)
    merged = np.where(mask, mosaic.values[None, :, :], cube.values).astype(dtype)
    return cube.with_values(merged)


def inverse_pixel_shuffle(band_image: npt.ArrayLike, k: int) -> np.ndarray:
    """Split a band image into its ``k**2`` phase sub-images.

    Args:
        band_image: ``H x W`` array.
        k (int): Period.

    Returns:
        np.ndarray: ``(k*k, H/k, W/k)`` array where sub-image ``i*k + j`` holds
        ``band_image[k*y + i, k*x + j]``.

    Raises:
        ShapeError: If ``H`` or ``W`` is not divisible by ``k``.

    """
    image = np.asarray(band_image)
    if image.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"Band image must be 2-D, got shape {image.shape}.")
    h, w = image.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"Band image {h}x{w} is not divisible by {k}.")
    phases = image.reshape(h // k, k, w // k, k).transpose(1, 3, 0, 2)
    return phases.reshape(k * k, h // k, w // k)


def pixel_shuffle(sub_images: npt.ArrayLike, k: int) -> np.ndarray:
    """Reassemble ``k**2`` phase sub-images into one band image."""
    subs = np.asarray(sub_images)
    if subs.ndim != 3 or subs.shape[0] != k * k:  # noqa: PLR2004
        raise ShapeError(f"Expected ({k * k}, h, w) sub-images, got {subs.shape}.")
    _, h, w = subs.shape
    return subs.reshape(k, k, h, w).transpose(2, 0, 3, 1).reshape(h * k, w * k)


# Torch counterparts, batched as (N, C, H, W).


def band_mask_tensor(
    pattern: MsfaPattern, height: int, width: int, device: torch.device | str = "cpu"
) -> torch.Tensor:
    """Return the sampling mask as a ``(B, H, W)`` boolean tensor."""
    return torch.from_numpy(pattern.band_mask(height, width)).to(device)


def override_tensor(
    cube: torch.Tensor, mosaic: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Batched, differentiable `override`.

    Args:
        cube (torch.Tensor): ``(N, B, H, W)`` network output.
        mosaic (torch.Tensor): ``(N, 1, H, W)`` raw frames.
        mask (torch.Tensor): ``(B, H, W)`` boolean sampling mask.

    Returns:
        torch.Tensor: Cube with sampled positions replaced by the mosaic, exactly.

    """
    if cube.shape[-2:] != mosaic.shape[-2:] or cube.shape[-3] != mask.shape[0]:
        raise ShapeError(
            f"Cannot override cube {tuple(cube.shape)} with mosaic "
            f"{tuple(mosaic.shape)} and mask {tuple(mask.shape)}."
        )
    return torch.where(mask, mosaic.to(cube.dtype), cube)


def inverse_pixel_shuffle_tensor(cube: torch.Tensor, k: int) -> torch.Tensor:
    """Batched `inverse_pixel_shuffle`: ``(N, B, H, W) -> (N, B, k*k, H/k, W/k)``."""
    n, b, h, w = cube.shape
    if h % k or w % k:
        raise ShapeError(f"Cube {h}x{w} is not divisible by {k}.")
    return F.pixel_unshuffle(cube, k).reshape(n, b, k * k, h // k, w // k)
