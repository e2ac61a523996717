"""Deterministic synthetic hyperspectral scenes with known ground truth.

Three scene families stand in for clinical captures:

- ``smooth``: two spectral signatures blended by a smooth field under an intensity
  ramp,
- ``piecewise``: Voronoi regions, each a constant spectral signature (see
  `region_map`),
- ``edges``: a chart of square patches split by a diagonal step edge.

Every draw comes from ``numpy.random.default_rng(seed)``, so equal configs give
bit-identical cubes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .color import ColorMatchingTable, fixed_hsi_to_rgb
from .errors import ConfigurationError
from .hypercube import Hypercube, RgbImage, default_band_centers

logger = logging.getLogger(__name__)

SCENE_FAMILIES = ("smooth", "piecewise", "edges")
RGB_CORPUS_SEED_OFFSET = 1_000_000
DEFAULT_COLOR_CAST = (1.04, 1.0, 0.94)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    """Parameters of one synthetic scene.

    Attributes:
        seed (int): Seed of every random draw.
        height (int): Rows.
        width (int): Columns.
        bands (int): Spectral bands.
        family (str): ``"smooth"``, ``"piecewise"`` or ``"edges"``.
        noise (float): Standard deviation of additive Gaussian noise before clipping.
        regions (int): Voronoi regions (``piecewise``) or palette size (``edges``).
        patch (int): Patch side of the ``edges`` chart.

    """

    seed: int = 0
    height: int = 96
    width: int = 96
    bands: int = 16
    family: str = "piecewise"
    noise: float = 0.0
    regions: int = 6
    patch: int = 8

    def __post_init__(self) -> None:  # noqa: D105
        if min(self.height, self.width, self.bands, self.regions, self.patch) < 1:
            raise ConfigurationError(
                "height, width, bands, regions and patch must be positive."
            )
        if self.family not in SCENE_FAMILIES:
            raise ConfigurationError(
                f"Unknown scene family {self.family!r}; choose from {SCENE_FAMILIES}."
            )
        if not self.noise >= 0.0:
            raise ConfigurationError("noise must be non-negative.")


def _signatures(rng: np.random.Generator, count: int, bands: int) -> np.ndarray:
    """Smooth reflectance-like spectra in [0.05, 0.95], shape ``(count, bands)``."""
    grid = np.linspace(0.0, 1.0, bands)
    centers = rng.uniform(0.0, 1.0, size=(count, 2))
    widths = rng.uniform(0.1, 0.4, size=(count, 2))
    heights = rng.uniform(0.2, 0.7, size=(count, 2))
    base = rng.uniform(0.05, 0.3, size=(count, 1))
    bumps = heights[..., None] * np.exp(
        -0.5 * ((grid[None, None, :] - centers[..., None]) / widths[..., None]) ** 2
    )
    return np.clip(base + bumps.sum(axis=1), 0.05, 0.95)


def _voronoi_labels(
    rng: np.random.Generator, config: SyntheticSceneConfig
) -> np.ndarray:
    shape = (config.height, config.width)
    seeds = rng.uniform(0.0, 1.0, size=(config.regions, 2)) * shape
    yy, xx = np.mgrid[0 : config.height, 0 : config.width]
    dy = yy[None] - seeds[:, 0, None, None]
    dx = xx[None] - seeds[:, 1, None, None]
    return np.argmin(dy**2 + dx**2, axis=0)


def region_map(config: SyntheticSceneConfig) -> np.ndarray:
    """Return the ``H x W`` region labels of a ``piecewise`` scene.

    Raises:
        ConfigurationError: If ``config.family`` is not ``"piecewise"``.

    """
    if config.family != "piecewise":
        raise ConfigurationError("Region maps exist only for the piecewise family.")
    return _voronoi_labels(np.random.default_rng(config.seed), config)


def _smooth(rng: np.random.Generator, config: SyntheticSceneConfig) -> np.ndarray:
    sig = _signatures(rng, 2, config.bands)
    yy, xx = np.mgrid[0 : config.height, 0 : config.width] / max(
        config.height, config.width
    )
    freq = rng.uniform(1.0, 3.0, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    blend = 0.5 + 0.25 * (
        np.sin(2 * np.pi * freq[0] * yy + phase[0])
        + np.sin(2 * np.pi * freq[1] * xx + phase[1])
    )
    angle = rng.uniform(0.0, 2 * np.pi)
    ramp = np.cos(angle) * yy + np.sin(angle) * xx
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) or 1.0)
    mix = sig[0][:, None, None] * (1 - blend) + sig[1][:, None, None] * blend
    return mix * (0.3 + 0.7 * ramp)


def _piecewise(rng: np.random.Generator, config: SyntheticSceneConfig) -> np.ndarray:
    labels = _voronoi_labels(rng, config)
    palette = _signatures(rng, config.regions, config.bands)
    palette *= rng.uniform(0.4, 1.0, size=(config.regions, 1))
    return np.moveaxis(palette[labels], -1, 0)


def _edges(rng: np.random.Generator, config: SyntheticSceneConfig) -> np.ndarray:
    palette = _signatures(rng, config.regions, config.bands)
    rows = -(-config.height // config.patch)
    cols = -(-config.width // config.patch)
    cells = rng.integers(0, config.regions, size=(rows, cols))
    labels = np.kron(cells, np.ones((config.patch, config.patch), dtype=np.int64))
    labels = labels[: config.height, : config.width]
    yy, xx = np.mgrid[0 : config.height, 0 : config.width]
    step = (yy * config.width + xx * config.height) > config.height * config.width
    cube = np.moveaxis(palette[labels], -1, 0)
    return np.where(step[None], cube * 0.5, cube)


_FAMILIES = {"smooth": _smooth, "piecewise": _piecewise, "edges": _edges}


def generate_synthetic_scene(config: SyntheticSceneConfig) -> Hypercube:
    """Generate one deterministic ``bands x height x width`` scene in [0, 1].

    Example:
        ```python
        >>> cube = generate_synthetic_scene(SyntheticSceneConfig(seed=3, family="edges"))
        >>> cube.values.shape
        (16, 96, 96)
        ```

    """
    rng = np.random.default_rng(config.seed)
    values = _FAMILIES[config.family](rng, config)
    if config.noise:
        values = values + rng.normal(0.0, config.noise, size=values.shape)
    values = np.clip(values, 0.0, 1.0)
    return Hypercube(values, default_band_centers(config.bands))


def generate_scenes(config: SyntheticSceneConfig, count: int) -> list[Hypercube]:
    """Generate ``count`` scenes with seeds ``config.seed + i``, cycling families."""
    scenes = [
        generate_synthetic_scene(
            replace(
                config,
                seed=config.seed + i,
                family=SCENE_FAMILIES[(SCENE_FAMILIES.index(config.family) + i) % 3],
            )
        )
        for i in range(count)
    ]
    logger.info("Generated %d synthetic scenes", count)
    return scenes


def generate_rgb_corpus(
    config: SyntheticSceneConfig,
    count: int,
    cast: tuple[float, float, float] = DEFAULT_COLOR_CAST,
    cmf: ColorMatchingTable | None = None,
) -> list[RgbImage]:
    """Synthesise an unpaired RGB reference corpus.

    Scenes use seeds disjoint from `generate_scenes` with the same base seed. Each is
    rendered with the fixed conversion and then tinted by a per-channel ``cast``,
    standing in for a camera's own colour processing.
    """
    cmf = cmf or ColorMatchingTable.default()
    gains = np.asarray(cast, dtype=np.float64)[:, None, None]
    base = replace(config, seed=config.seed + RGB_CORPUS_SEED_OFFSET)
    return [
        RgbImage(np.clip(fixed_hsi_to_rgb(cube, cmf).values * gains, 0.0, 1.0))
        for cube in generate_scenes(base, count)
    ]
