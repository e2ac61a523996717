"""Training objectives.

All losses take batched tensors ``(N, B, H, W)`` (a single ``(B, H, W)`` cube or a
`Hypercube` is accepted too) and return a scalar tensor that back-propagates:

- `ips_loss` penalises periodic gridding: the spatial means of the ``k**2`` phase
  sub-images of each band should agree,
- `tv_loss` is anisotropic total variation with forward differences,
- `sgc_loss` keeps each band's spatial gradients consistent across bands,
- `gan_losses` is the least-squares adversarial pair,
- `cycle_loss` is the L1 hyperspectral -> RGB -> hyperspectral cycle,
- `total_loss` weights and sums them.

There is no data-fidelity term: the generator's overriding operator enforces fidelity
structurally.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import ConfigurationError, ShapeError, TrainingDivergenceError
from .hypercube import Hypercube, inverse_pixel_shuffle_tensor

logger = logging.getLogger(__name__)

CubeLike = torch.Tensor | np.ndarray | Hypercube


@dataclass
class LossWeights:
    """Weighting coefficients of the total objective."""

    lambda_sgc: float = 1.0
    lambda_tv: float = 1e-3
    lambda_ips: float = 1.0
    lambda_gan: float = 0.1
    lambda_cyc: float = 1.0

    def __post_init__(self) -> None:  # noqa: D105
        for name, value in asdict(self).items():
            if not value >= 0.0:
                raise ConfigurationError(
                    f"Loss weight {name} must be >= 0, got {value}."
                )


@dataclass
class LossComponents:
    """Unweighted loss terms of one generator step."""

    sgc: torch.Tensor | float = 0.0
    tv: torch.Tensor | float = 0.0
    ips: torch.Tensor | float = 0.0
    gan: torch.Tensor | float = 0.0
    cyc: torch.Tensor | float = 0.0

    def as_dict(self) -> dict[str, float]:
        """Return plain floats, for logging and history tables."""
        return {name: float(value) for name, value in vars(self).items()}


def _as_batch(cube: CubeLike) -> torch.Tensor:
    if isinstance(cube, Hypercube):
        cube = cube.values
    x = torch.as_tensor(cube)
    if x.ndim == 3:  # noqa: PLR2004
        x = x[None]
    if x.ndim != 4:  # noqa: PLR2004
        raise ShapeError(f"Expected (B, H, W) or (N, B, H, W), got {tuple(x.shape)}.")
    return x


def _mean_or_zero(t: torch.Tensor) -> torch.Tensor:
    return t.mean() if t.numel() else t.sum()


def _forward_differences(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return x[..., :, 1:] - x[..., :, :-1], x[..., 1:, :] - x[..., :-1, :]


def ips_loss(cube: CubeLike, k: int) -> torch.Tensor:
    """Inverse pixel shuffle loss.

    For every band the ``k**2`` phase sub-images are averaged spatially; the loss is
    the population variance of those means, averaged over bands (and batch).

    Raises:
        ShapeError: If height or width is not divisible by ``k``.

    Example:
        ```python
        >>> x = torch.zeros(1, 8, 8); x[:, ::4, ::4] = 1
        >>> ips_loss(x, 4)
        tensor(0.0586)  # 15/256
        ```

    """
    x = _as_batch(cube)
    means = inverse_pixel_shuffle_tensor(x, k).mean(dim=(-2, -1))
    return means.var(dim=-1, unbiased=False).mean()


def tv_loss(cube: CubeLike) -> torch.Tensor:
    """Anisotropic total variation: ``mean|dI/dx| + mean|dI/dy|``.

    A direction with no valid differences (a single row or column) contributes 0.
    """
    dx, dy = _forward_differences(_as_batch(cube))
    return _mean_or_zero(dx.abs()) + _mean_or_zero(dy.abs())


def pan_gradient_sgc(cube: CubeLike) -> torch.Tensor:
    """Spatial gradient consistency against the pseudo-panchromatic image.

    L1 distance between each band's forward-difference gradients and those of the
    band-mean image, averaged over bands and pixels. Zero when all bands coincide.
    """
    x = _as_batch(cube)
    pan = x.mean(dim=1, keepdim=True)
    dx, dy = _forward_differences(x)
    pdx, pdy = _forward_differences(pan)
    return _mean_or_zero((dx - pdx).abs()) + _mean_or_zero((dy - pdy).abs())


SgcFunction = Callable[[CubeLike], torch.Tensor]
_SGC_VARIANTS: dict[str, SgcFunction] = {"pan-gradient": pan_gradient_sgc}


def register_sgc(name: str, fn: SgcFunction) -> None:
    """Register an alternative spatial gradient consistency formula."""
    _SGC_VARIANTS[name] = fn


def get_sgc(name: str = "pan-gradient") -> SgcFunction:
    """Look up a registered SGC variant."""
    try:
        return _SGC_VARIANTS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown SGC variant {name!r}; registered: {sorted(_SGC_VARIANTS)}."
        ) from None


def sgc_loss(cube: CubeLike, variant: str = "pan-gradient") -> torch.Tensor:
    """Spatial gradient consistency loss, dispatched to the registered ``variant``."""
    return get_sgc(variant)(cube)


def gan_losses(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares adversarial losses.

    Returns:
        tuple[torch.Tensor, torch.Tensor]: ``(generator, discriminator)`` where
        generator = ``mean((fake - 1)**2)`` and discriminator =
        ``mean((real - 1)**2) + mean(fake**2)``.

    """
    return generator_adversarial_loss(fake_scores), discriminator_loss(
        real_scores, fake_scores
    )


def generator_adversarial_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator side of the least-squares objective."""
    return ((fake_scores - 1.0) ** 2).mean()


def discriminator_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> torch.Tensor:
    """Discriminator side of the least-squares objective."""
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores**2).mean()


def cycle_loss(recovered: CubeLike, demosaicked: CubeLike) -> torch.Tensor:
    """Mean absolute difference between the recovered and demosaicked cubes.

    Raises:
        ShapeError: If the shapes differ.

    """
    a, b = _as_batch(recovered), _as_batch(demosaicked)
    if a.shape != b.shape:
        raise ShapeError(f"Cycle shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}.")
    return (a - b).abs().mean()


def total_loss(components: LossComponents, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the loss components.

    Raises:
        TrainingDivergenceError: If any component is non-finite.

    """
    pairs = (
        ("sgc", weights.lambda_sgc),
        ("tv", weights.lambda_tv),
        ("ips", weights.lambda_ips),
        ("gan", weights.lambda_gan),
        ("cyc", weights.lambda_cyc),
    )
    total = torch.zeros(())
    for name, weight in pairs:
        value = getattr(components, name)
        if not math.isfinite(float(value)):
            raise TrainingDivergenceError(f"Loss component {name} is {float(value)}.")
        if weight:
            total = total + weight * torch.as_tensor(value)
    return total
