"""Pre-training and joint adversarial fine-tuning.

Training runs in two phases:

1. Pre-training. Snapshot frames are demosaicked linearly and rendered with the fixed
   sRGB conversion, giving matched (cube, RGB) pairs. The RGB converter and the
   spectral recovery network are fitted on those pairs with an L1 loss; the
   demosaicking generator is fitted self-supervised on SGC and TV only.
2. Joint fine-tuning. A freshly Xavier-initialised patch discriminator is trained
   against unpaired RGB reference images, alternating one discriminator step with
   one joint step of generator, RGB converter and spectral recovery on the weighted
   total loss.

Mosaic crops are always aligned to the MSFA period so the band layout of every crop
equals the pattern's layout. The mosaic stream and the RGB stream are independent
iterators; nothing ever pairs a frame with a reference image.

Usage
-----
```python
from hsi_demosaic.training import TrainConfig, joint_finetune, pretrain_all

config = TrainConfig(seed=7)
init = pretrain_all(mosaics, config, model_config)
final = joint_finetune(mosaics, rgb_corpus, init, config)
final.save("runs/final.ckpt")
```
"""

from __future__ import annotations

import logging
import os
import random
from collections.abc import Iterator, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn
from torch.utils.data import DataLoader, Dataset

from ._utils import atomic_write, stable_hash
from .color import (
    ColorMatchingTable,
    FixedRgbConverter,
    RgbConverter,
    RgbConverterConfig,
    SpectralRecoveryConfig,
    build_spectral_recovery,
    fixed_hsi_to_rgb,
)
from .errors import ConfigurationError, ParseError, TrainingDivergenceError
from .hypercube import (
    Hypercube,
    MsfaPattern,
    RgbImage,
    SnapshotMosaic,
    default_band_centers,
    linear_demosaic,
)
from .losses import (
    LossComponents,
    LossWeights,
    cycle_loss,
    discriminator_loss,
    generator_adversarial_loss,
    ips_loss,
    sgc_loss,
    total_loss,
    tv_loss,
)
from .networks import (
    DemosaicGenerator,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    xavier_init_,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class LearningRates:
    """Per-network Adam learning rates (constant, no schedule)."""

    generator: float = 1e-5
    rgb_converter: float = 1e-3
    spectral_recovery: float = 1e-6
    discriminator: float = 2e-4
    pretrain_rgb: float = 1e-2
    pretrain_spectral: float = 1e-4
    pretrain_generator: float = 1e-4

    def __post_init__(self) -> None:  # noqa: D105
        for name, value in asdict(self).items():
            if not value > 0:
                raise ConfigurationError(f"Learning rate {name} must be positive.")


@dataclass
class TrainConfig:
    """Hyper-parameters shared by every training phase.

    Attributes:
        lr (LearningRates): Per-network learning rates.
        betas (tuple[float, float]): Adam moment coefficients.
        weights (LossWeights): Total-loss weights.
        sgc_variant (str): Registered SGC formula.
        use_rgb_model (bool): Train the MLP converter jointly; when false the fixed
            sRGB conversion renders generator output for the adversarial and cycle
            terms.
        batch_size (int): Crops per step.
        crop_size (int): Square crop side in pixels; a multiple of the MSFA period
            and at least the discriminator's 70-pixel receptive field for fine-tuning.
        pretrain_steps (int): Steps for each pre-training phase.
        finetune_steps (int): Joint fine-tuning steps.
        checkpoint_every (int): Fine-tuning checkpoint cadence in steps, 0 disables.
        holdout_fraction (float): Share of pairs held out to monitor pre-training.
        seed (int): Seed for initialisation, crops and batch order.
        deterministic (bool): Request deterministic kernels and a fixed batch order.
        num_workers (int): DataLoader prefetch workers.
        device (str): ``"cpu"``, ``"cuda"`` or ``"auto"``.
        log_every (int): Step interval for INFO progress lines.

    """

    lr: LearningRates = field(default_factory=LearningRates)
    betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    sgc_variant: str = "pan-gradient"
    use_rgb_model: bool = True
    batch_size: int = 4
    crop_size: int = 96
    pretrain_steps: int = 500
    finetune_steps: int = 2000
    checkpoint_every: int = 500
    holdout_fraction: float = 0.25
    seed: int = 0
    deterministic: bool = True
    num_workers: int = 0
    device: str = "auto"
    log_every: int = 50

    def __post_init__(self) -> None:  # noqa: D105
        self.betas = tuple(self.betas)
        if self.batch_size < 1 or self.crop_size < 1:
            raise ConfigurationError("batch_size and crop_size must be positive.")
        if min(self.pretrain_steps, self.finetune_steps, self.checkpoint_every) < 0:
            raise ConfigurationError("Step counts must be non-negative.")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigurationError("holdout_fraction must lie in [0, 1).")


@dataclass
class ModelConfig:
    """Architectures of the four networks."""

    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    rgb_converter: RgbConverterConfig = field(default_factory=RgbConverterConfig)
    spectral_recovery: SpectralRecoveryConfig = field(
        default_factory=SpectralRecoveryConfig
    )
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)


class TrainingHistory:
    """Collects per-step metrics of all phases; exported as a polars DataFrame."""

    def __init__(self) -> None:  # noqa: D107
        self.rows: list[dict[str, Any]] = []

    def record(self, phase: str, step: int, **metrics: float) -> None:
        """Append one row of metrics."""
        self.rows.append({"phase": phase, "step": step, **metrics})

    def to_frame(self) -> pl.DataFrame:
        """Return all rows; missing metrics are null."""
        if not self.rows:
            return pl.DataFrame(schema={"phase": pl.String, "step": pl.Int64})
        return pl.from_dicts(self.rows, infer_schema_length=None)


@dataclass
class Networks:
    """The trainable models plus the sampling geometry they were built for."""

    pattern: MsfaPattern
    band_centers: tuple[float, ...]
    generator: DemosaicGenerator
    rgb_converter: RgbConverter
    spectral_recovery: nn.Module
    discriminator: PatchDiscriminator | None = None

    def modules(self) -> dict[str, nn.Module]:
        """Name -> module for every present network."""
        named = {
            "generator": self.generator,
            "rgb_converter": self.rgb_converter,
            "spectral_recovery": self.spectral_recovery,
        }
        if self.discriminator is not None:
            named["discriminator"] = self.discriminator
        return named

    def architecture(self) -> dict[str, Any]:
        """JSON-compatible description sufficient to rebuild the networks."""
        return {
            "pattern": {
                "period": self.pattern.period,
                "band_map": [list(row) for row in self.pattern.band_map],
            },
            "band_centers": list(self.band_centers),
            "generator": asdict(self.generator.config),
            "rgb_converter": asdict(self.rgb_converter.config),
            "spectral_recovery": asdict(self.spectral_recovery.config),
        }

    def to(self, device: torch.device) -> Networks:  # noqa: D102
        for module in self.modules().values():
            module.to(device)
        return self


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """Seed python, numpy and torch; optionally request deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)  # noqa: NPY002
    torch.manual_seed(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.backends.cudnn.benchmark = False
        # Some padding backward kernels have no deterministic CUDA variant.
        torch.use_deterministic_algorithms(True, warn_only=True)


def resolve_device(name: str) -> torch.device:
    """Map ``"auto"``/``"cuda"``/``"cpu"`` to an available device."""
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    if name.startswith("cuda") and not torch.cuda.is_available():
        logger.warning("CUDA requested but unavailable; falling back to CPU.")
        return torch.device("cpu")
    return torch.device(name)


def build_networks(
    model_config: ModelConfig,
    pattern: MsfaPattern,
    band_centers: Sequence[float] | None = None,
    seed: int = 0,
) -> Networks:
    """Create freshly initialised generator, RGB converter and spectral recovery.

    Raises:
        ConfigurationError: If the configured band counts disagree with the pattern.

    """
    bands = pattern.band_count
    for name, count in (
        ("rgb_converter.input_bands", model_config.rgb_converter.input_bands),
        ("spectral_recovery.bands", model_config.spectral_recovery.bands),
    ):
        if count != bands:
            raise ConfigurationError(f"{name} is {count} but the pattern has {bands}.")
    centers = tuple(band_centers or default_band_centers(bands))
    torch.manual_seed(seed)
    return Networks(
        pattern=pattern,
        band_centers=centers,
        generator=DemosaicGenerator(model_config.generator, pattern),
        rgb_converter=RgbConverter(model_config.rgb_converter),
        spectral_recovery=build_spectral_recovery(model_config.spectral_recovery),
    )


@dataclass
class Checkpoint:
    """Versioned snapshot of every network, optimiser state and the step counter.

    Attributes:
        architecture (dict): Output of `Networks.architecture`.
        models (dict): Network name -> state dict.
        optimizers (dict): Network name -> optimiser state dict.
        step (int): Completed fine-tuning steps.
        phase (str): ``"pretrain"`` or ``"finetune"``.
        config_hash (str): Hash of the `TrainConfig` that produced the checkpoint.
        discriminator (dict | None): Discriminator architecture, when present.

    """

    architecture: dict[str, Any]
    models: dict[str, dict[str, torch.Tensor]]
    optimizers: dict[str, dict[str, Any]] = field(default_factory=dict)
    step: int = 0
    phase: str = "pretrain"
    config_hash: str = ""
    discriminator: dict[str, Any] | None = None
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @property
    def architecture_hash(self) -> str:
        """Hash of the architecture description."""
        return stable_hash(self.architecture)

    @classmethod
    def from_networks(
        cls,
        networks: Networks,
        *,
        step: int = 0,
        phase: str = "pretrain",
        config: TrainConfig | None = None,
        optimizers: dict[str, torch.optim.Optimizer] | None = None,
    ) -> Checkpoint:
        """Snapshot live networks (tensors are cloned to CPU)."""
        models = {
            name: {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}
            for name, module in networks.modules().items()
        }
        return cls(
            architecture=networks.architecture(),
            models=models,
            optimizers={
                name: _cpu_state(opt.state_dict())
                for name, opt in (optimizers or {}).items()
            },
            step=step,
            phase=phase,
            config_hash=stable_hash(asdict(config)) if config else "",
            discriminator=(
                asdict(networks.discriminator.config)
                if networks.discriminator is not None
                else None
            ),
        )

    def instantiate(self, device: torch.device | str = "cpu") -> Networks:
        """Rebuild the networks and load their parameters."""
        arch = self.architecture
        pattern = MsfaPattern(
            arch["pattern"]["period"],
            tuple(tuple(row) for row in arch["pattern"]["band_map"]),
        )
        networks = Networks(
            pattern=pattern,
            band_centers=tuple(arch["band_centers"]),
            generator=DemosaicGenerator(GeneratorConfig(**arch["generator"]), pattern),
            rgb_converter=RgbConverter(RgbConverterConfig(**arch["rgb_converter"])),
            spectral_recovery=build_spectral_recovery(
                SpectralRecoveryConfig(**arch["spectral_recovery"])
            ),
            discriminator=(
                PatchDiscriminator(DiscriminatorConfig(**self.discriminator))
                if self.discriminator is not None
                else None
            ),
        )
        for name, module in networks.modules().items():
            module.load_state_dict(self.models[name])
        return networks.to(torch.device(device))

    def to_payload(self) -> dict[str, Any]:  # noqa: D102
        return {
            "format_version": self.format_version,
            "architecture": self.architecture,
            "architecture_hash": self.architecture_hash,
            "config_hash": self.config_hash,
            "discriminator": self.discriminator,
            "step": self.step,
            "phase": self.phase,
            "models": self.models,
            "optimizers": self.optimizers,
        }

    def save(self, path: str | Path) -> Path:
        """Atomically write the checkpoint with `torch.save`."""
        payload = self.to_payload()
        written = atomic_write(path, lambda f: torch.save(payload, f))
        logger.info("Saved %s checkpoint (step %d) to %s", self.phase, self.step, path)
        return written

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        """Read a checkpoint written by `save`.

        Raises:
            ParseError: If the file is not a checkpoint of a supported version.

        """
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ParseError(f"Unreadable checkpoint ({exc})", 0, path) from exc
        version = payload.get("format_version") if isinstance(payload, dict) else None
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ParseError(f"Unsupported checkpoint version {version!r}", 0, path)
        checkpoint = cls(
            architecture=payload["architecture"],
            models=payload["models"],
            optimizers=payload["optimizers"],
            step=payload["step"],
            phase=payload["phase"],
            config_hash=payload["config_hash"],
            discriminator=payload["discriminator"],
        )
        if checkpoint.architecture_hash != payload["architecture_hash"]:
            raise ParseError("Checkpoint architecture hash mismatch", 0, path)
        return checkpoint


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Atomically write ``checkpoint`` to ``path``."""
    return checkpoint.save(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`."""
    return Checkpoint.load(path)


def _cpu_state(state: Any) -> Any:
    if isinstance(state, torch.Tensor):
        return state.detach().cpu().clone()
    if isinstance(state, dict):
        return {k: _cpu_state(v) for k, v in state.items()}
    if isinstance(state, list):
        return [_cpu_state(v) for v in state]
    return state


# Data pipeline


def _float_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.asarray(values, dtype=np.float32).copy())


@dataclass(frozen=True)
class PretrainPair:
    """A linearly demosaicked cube and its fixed sRGB rendering."""

    cube: Hypercube
    rgb: RgbImage


def build_pretrain_pairs(
    mosaics: Sequence[SnapshotMosaic],
    band_centers: Sequence[float] | None = None,
    cmf: ColorMatchingTable | None = None,
) -> list[PretrainPair]:
    """Demosaic each frame linearly and render it with the fixed conversion.

    Raises:
        ConfigurationError: If ``mosaics`` is empty.

    """
    if not mosaics:
        raise ConfigurationError(
            "Cannot build pre-training pairs from an empty dataset."
        )
    cmf = cmf or ColorMatchingTable.default()
    pairs = []
    for mosaic in mosaics:
        cube = linear_demosaic(mosaic, band_centers)
        pairs.append(PretrainPair(cube, fixed_hsi_to_rgb(cube, cmf)))
    logger.info("Built %d pre-training pairs", len(pairs))
    return pairs


def _aligned_offset(extent: int, crop: int, period: int) -> int:
    slots = (extent - crop) // period + 1
    return period * int(torch.randint(slots, ()).item())


def _check_crop(crop: int, shapes: Sequence[tuple[int, int]], period: int) -> int:
    smallest = min(min(shape) for shape in shapes)
    crop = min(crop, smallest)
    crop -= crop % period
    if crop < period:
        raise ConfigurationError(f"Frames of {smallest} px cannot hold an aligned crop.")
    return crop


class MosaicCropDataset(Dataset):
    """Random period-aligned crops of ``(linear cube, raw mosaic)``."""

    def __init__(
        self,
        mosaics: Sequence[SnapshotMosaic],
        crop_size: int,
        band_centers: Sequence[float] | None = None,
    ):
        """Demosaic every frame linearly once; crops are cut at access time."""
        if not mosaics:
            raise ConfigurationError("The snapshot dataset is empty.")
        self.period = mosaics[0].pattern.period
        self.crop = _check_crop(
            crop_size, [(m.height, m.width) for m in mosaics], self.period
        )
        self.lin = [
            _float_tensor(linear_demosaic(m, band_centers).values)
            for m in mosaics
        ]
        self.raw = [_float_tensor(m.values)[None] for m in mosaics]

    def __len__(self) -> int:  # noqa: D105
        return len(self.lin)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:  # noqa: D105
        lin, raw = self.lin[index], self.raw[index]
        oy = _aligned_offset(lin.shape[-2], self.crop, self.period)
        ox = _aligned_offset(lin.shape[-1], self.crop, self.period)
        window = (..., slice(oy, oy + self.crop), slice(ox, ox + self.crop))
        return lin[window], raw[window]


class RgbCorpusDataset(Dataset):
    """Random crops of unpaired reference RGB images."""

    def __init__(self, images: Sequence[RgbImage], crop_size: int):  # noqa: D107
        if not images:
            raise ConfigurationError("The RGB reference corpus is empty.")
        self.crop = _check_crop(crop_size, [(i.height, i.width) for i in images], 1)
        self.images = [_float_tensor(i.values) for i in images]

    def __len__(self) -> int:  # noqa: D105
        return len(self.images)

    def __getitem__(self, index: int) -> torch.Tensor:  # noqa: D105
        image = self.images[index]
        oy = _aligned_offset(image.shape[-2], self.crop, 1)
        ox = _aligned_offset(image.shape[-1], self.crop, 1)
        return image[:, oy : oy + self.crop, ox : ox + self.crop]


class PairCropDataset(Dataset):
    """Random aligned crops of ``(cube, rgb)`` pre-training pairs."""

    def __init__(self, pairs: Sequence[PretrainPair], crop_size: int, period: int = 1):
        """Convert the pairs to float tensors once."""
        if not pairs:
            raise ConfigurationError("No pre-training pairs given.")
        self.period = period
        self.crop = _check_crop(
            crop_size, [(p.cube.height, p.cube.width) for p in pairs], period
        )
        self.cubes = [_float_tensor(p.cube.values) for p in pairs]
        self.rgbs = [_float_tensor(p.rgb.values) for p in pairs]

    def __len__(self) -> int:  # noqa: D105
        return len(self.cubes)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:  # noqa: D105
        cube, rgb = self.cubes[index], self.rgbs[index]
        oy = _aligned_offset(cube.shape[-2], self.crop, self.period)
        ox = _aligned_offset(cube.shape[-1], self.crop, self.period)
        window = (..., slice(oy, oy + self.crop), slice(ox, ox + self.crop))
        return cube[window], rgb[window]


def _endless(dataset: Dataset, config: TrainConfig, stream: int) -> Iterator[Any]:
    """Yield shuffled batches forever; order is fixed by ``(seed, stream)``."""
    generator = torch.Generator().manual_seed(config.seed * 1_000_003 + stream)
    loader = DataLoader(
        dataset,
        batch_size=config.batch_size,
        shuffle=True,
        drop_last=False,
        generator=generator,
        num_workers=0 if config.deterministic else config.num_workers,
    )
    while True:
        yield from loader


def _split_holdout(pairs: Sequence[PretrainPair], fraction: float):
    count = int(round(len(pairs) * fraction))
    if count == 0 or count >= len(pairs):
        return list(pairs), list(pairs)
    return list(pairs[:-count]), list(pairs[-count:])


def _mean_l1(model: nn.Module, inputs, targets, device: torch.device) -> float:
    model.eval()
    with torch.no_grad():
        values = [
            F.l1_loss(model(x[None].to(device)), y[None].to(device)).item()
            for x, y in zip(inputs, targets, strict=True)
        ]
    model.train()
    return float(np.mean(values))


def _check_finite(value: torch.Tensor, what: str, step: int) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergenceError(f"{what} became {value.item()} at step {step}.")


def _fit_l1(  # noqa: PLR0913
    model: nn.Module,
    pairs: Sequence[PretrainPair],
    config: TrainConfig,
    lr: float,
    phase: str,
    *,
    reverse: bool,
    history: TrainingHistory | None,
) -> nn.Module:
    """Fit ``model`` on the pairs with L1; ``reverse`` maps RGB -> cube."""
    device = resolve_device(config.device)
    model.to(device).train()
    if config.pretrain_steps == 0:
        return model
    train, holdout = _split_holdout(pairs, config.holdout_fraction)
    cubes = [_float_tensor(p.cube.values) for p in holdout]
    rgbs = [_float_tensor(p.rgb.values) for p in holdout]
    held = (rgbs, cubes) if reverse else (cubes, rgbs)
    initial = _mean_l1(model, *held, device)
    logger.info("%s: initial held-out L1 %.6f", phase, initial)
    stream = _endless(PairCropDataset(train, config.crop_size), config, stream=1)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=config.betas)
    for step in range(1, config.pretrain_steps + 1):
        cube, rgb = (t.to(device) for t in next(stream))
        x, y = (rgb, cube) if reverse else (cube, rgb)
        loss = F.l1_loss(model(x), y)
        _check_finite(loss, f"{phase} L1", step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        if history is not None:
            history.record(phase, step, l1=loss.item())
        if step % config.log_every == 0:
            logger.info("%s step %d: L1 %.6f", phase, step, loss.item())
    final = _mean_l1(model, *held, device)
    logger.info("%s: final held-out L1 %.6f (initial %.6f)", phase, final, initial)
    if history is not None:
        history.record(
            f"{phase}-holdout", config.pretrain_steps, initial=initial, final=final
        )
    return model


def pretrain_rgb_converter(
    pairs: Sequence[PretrainPair],
    config: TrainConfig,
    model: RgbConverter | None = None,
    history: TrainingHistory | None = None,
) -> RgbConverter:
    """Fit the per-pixel converter to the fixed sRGB renderings (L1, Adam).

    Args:
        pairs: Output of `build_pretrain_pairs`.
        config (TrainConfig): Uses ``lr.pretrain_rgb`` and ``pretrain_steps``.
        model (RgbConverter | None): Initial model; built from the pairs' band count
            under ``config.seed`` when omitted.
        history (TrainingHistory | None): Receives per-step losses.

    Returns:
        RgbConverter: The trained converter (``model`` itself, updated in place).

    Raises:
        ConfigurationError: If ``pairs`` is empty.
        TrainingDivergenceError: If the loss becomes non-finite.

    """
    if not pairs:
        raise ConfigurationError("No pre-training pairs given.")
    seed_everything(config.seed, config.deterministic)
    if model is None:
        bands = pairs[0].cube.bands
        model = RgbConverter(RgbConverterConfig(bands, max(64, bands)))
    return _fit_l1(
        model, pairs, config, config.lr.pretrain_rgb, "pretrain-rgb",
        reverse=False, history=history,
    )


def pretrain_spectral_recovery(
    pairs: Sequence[PretrainPair],
    config: TrainConfig,
    model: nn.Module | None = None,
    history: TrainingHistory | None = None,
) -> nn.Module:
    """Fit the RGB -> hyperspectral network on the pairs (L1, Adam).

    Mirrors `pretrain_rgb_converter` in the reverse direction with
    ``lr.pretrain_spectral``.
    """
    if not pairs:
        raise ConfigurationError("No pre-training pairs given.")
    seed_everything(config.seed, config.deterministic)
    if model is None:
        model = build_spectral_recovery(
            SpectralRecoveryConfig(bands=pairs[0].cube.bands)
        )
    return _fit_l1(
        model, pairs, config, config.lr.pretrain_spectral, "pretrain-spectral",
        reverse=True, history=history,
    )


def _self_supervised_loss(
    cube: torch.Tensor, config: TrainConfig
) -> tuple[torch.Tensor, LossComponents]:
    w = config.weights
    parts = LossComponents(
        sgc=sgc_loss(cube, config.sgc_variant) if w.lambda_sgc else 0.0,
        tv=tv_loss(cube) if w.lambda_tv else 0.0,
    )
    return total_loss(parts, LossWeights(w.lambda_sgc, w.lambda_tv, 0, 0, 0)), parts


def _full_frame_loss(
    generator: DemosaicGenerator, dataset: MosaicCropDataset, config: TrainConfig
) -> float:
    device = next(generator.parameters()).device
    generator.eval()
    with torch.no_grad():
        values = [
            _self_supervised_loss(
                generator(lin[None].to(device), raw[None].to(device)), config
            )[0].item()
            for lin, raw in zip(dataset.lin, dataset.raw, strict=True)
        ]
    generator.train()
    return float(np.mean(values))


def pretrain_demosaicker(
    mosaics: Sequence[SnapshotMosaic],
    config: TrainConfig,
    generator: DemosaicGenerator | None = None,
    history: TrainingHistory | None = None,
    band_centers: Sequence[float] | None = None,
) -> DemosaicGenerator:
    """Self-supervised initialisation of the generator on SGC + TV only.

    Raises:
        ConfigurationError: If ``mosaics`` is empty.
        TrainingDivergenceError: If the loss becomes non-finite.

    """
    if not mosaics:
        raise ConfigurationError("Cannot pre-train on an empty snapshot dataset.")
    seed_everything(config.seed, config.deterministic)
    pattern = mosaics[0].pattern
    if generator is None:
        generator = DemosaicGenerator(GeneratorConfig(bands=pattern.band_count), pattern)
    device = resolve_device(config.device)
    generator.to(device).train()
    if config.pretrain_steps == 0:
        return generator
    dataset = MosaicCropDataset(mosaics, config.crop_size, band_centers)
    initial = _full_frame_loss(generator, dataset, config)
    logger.info("pretrain-generator: initial loss %.6f", initial)
    stream = _endless(dataset, config, stream=2)
    optimizer = torch.optim.Adam(
        generator.parameters(), lr=config.lr.pretrain_generator, betas=config.betas
    )
    for step in range(1, config.pretrain_steps + 1):
        lin, raw = (t.to(device) for t in next(stream))
        loss, parts = _self_supervised_loss(generator(lin, raw), config)
        optimizer.zero_grad(set_to_none=True)
        if loss.requires_grad:
            loss.backward()
            optimizer.step()
        if history is not None:
            history.record(
                "pretrain-generator", step, total=loss.item(), **parts.as_dict()
            )
        if step % config.log_every == 0:
            logger.info("pretrain-generator step %d: loss %.6f", step, loss.item())
    final = _full_frame_loss(generator, dataset, config)
    logger.info("pretrain-generator: final loss %.6f (initial %.6f)", final, initial)
    if history is not None:
        history.record(
            "pretrain-generator-frames",
            config.pretrain_steps,
            initial=initial,
            final=final,
        )
    return generator


def pretrain_all(
    mosaics: Sequence[SnapshotMosaic],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    band_centers: Sequence[float] | None = None,
    cmf: ColorMatchingTable | None = None,
    history: TrainingHistory | None = None,
) -> Checkpoint:
    """Run the three pre-training phases and return the initial checkpoint."""
    if not mosaics:
        raise ConfigurationError("Cannot pre-train on an empty snapshot dataset.")
    model_config = model_config or ModelConfig()
    networks = build_networks(
        model_config, mosaics[0].pattern, band_centers, seed=config.seed
    )
    pairs = build_pretrain_pairs(mosaics, networks.band_centers, cmf)
    pretrain_rgb_converter(pairs, config, networks.rgb_converter, history)
    pretrain_spectral_recovery(pairs, config, networks.spectral_recovery, history)
    pretrain_demosaicker(
        mosaics, config, networks.generator, history, networks.band_centers
    )
    return Checkpoint.from_networks(networks, phase="pretrain", config=config)


def joint_finetune(  # noqa: PLR0913, PLR0915
    mosaics: Sequence[SnapshotMosaic],
    rgb_corpus: Sequence[RgbImage],
    init: Checkpoint,
    config: TrainConfig,
    *,
    discriminator_config: DiscriminatorConfig | None = None,
    expected_architecture: dict[str, Any] | None = None,
    output_dir: str | Path | None = None,
    history: TrainingHistory | None = None,
) -> Checkpoint:
    """Alternating least-squares adversarial fine-tuning of all networks.

    Each step first updates the discriminator on real reference crops versus
    ``G_RGB(G_demos(I_lin))``, then updates generator, RGB converter and spectral
    recovery together on the weighted total loss.

    Args:
        mosaics: Snapshot frames (the hyperspectral domain).
        rgb_corpus: Unpaired reference RGB images.
        init (Checkpoint): Pre-trained (or previously fine-tuned) checkpoint.
        config (TrainConfig): Rates, weights, steps and cadence.
        discriminator_config (DiscriminatorConfig | None): Discriminator topology.
        expected_architecture (dict | None): Architecture the caller's configuration
            describes; must match ``init``.
        output_dir (str | Path | None): Where periodic checkpoints are written.
        history (TrainingHistory | None): Receives per-step loss components.

    Returns:
        Checkpoint: The final state; ``init`` itself when ``finetune_steps`` is 0.

    Raises:
        ConfigurationError: On an empty corpus or dataset, or a checkpoint that does
            not match the configuration or the mosaics' pattern.
        TrainingDivergenceError: If any loss becomes non-finite.

    """
    if not rgb_corpus:
        raise ConfigurationError("Joint fine-tuning needs a non-empty RGB corpus.")
    if not mosaics:
        raise ConfigurationError("Joint fine-tuning needs snapshot frames.")
    if expected_architecture is not None and stable_hash(
        expected_architecture
    ) != stable_hash(init.architecture):
        raise ConfigurationError(
            "Checkpoint architecture does not match the configuration."
        )
    if config.finetune_steps == 0:
        return init

    seed_everything(config.seed, config.deterministic)
    device = resolve_device(config.device)
    networks = init.instantiate(device)
    if mosaics[0].pattern != networks.pattern:
        raise ConfigurationError("Mosaic pattern differs from the checkpoint's pattern.")
    resume = init.phase == "finetune" and networks.discriminator is not None
    if not resume:
        networks.discriminator = xavier_init_(
            PatchDiscriminator(discriminator_config or DiscriminatorConfig())
        ).to(device)
    generator, spectral = networks.generator, networks.spectral_recovery
    discriminator = networks.discriminator
    to_rgb = (
        networks.rgb_converter
        if config.use_rgb_model
        else FixedRgbConverter(networks.band_centers).to(device)
    )
    lr = config.lr
    optimizers = {
        "generator": torch.optim.Adam(
            generator.parameters(), lr.generator, config.betas
        ),
        "spectral_recovery": torch.optim.Adam(
            spectral.parameters(), lr.spectral_recovery, config.betas
        ),
        "discriminator": torch.optim.Adam(
            discriminator.parameters(), lr.discriminator, config.betas
        ),
    }
    if config.use_rgb_model:
        optimizers["rgb_converter"] = torch.optim.Adam(
            networks.rgb_converter.parameters(), lr.rgb_converter, config.betas
        )
    if resume:
        for name, optimizer in optimizers.items():
            if name in init.optimizers:
                optimizer.load_state_dict(init.optimizers[name])

    mosaic_data = MosaicCropDataset(mosaics, config.crop_size, networks.band_centers)
    rgb_data = RgbCorpusDataset(rgb_corpus, config.crop_size)
    crop = min(mosaic_data.crop, rgb_data.crop)
    if crop < PatchDiscriminator.receptive_field():
        raise ConfigurationError(
            f"Crops of {crop} px are smaller than the discriminator's "
            f"{PatchDiscriminator.receptive_field()} px receptive field."
        )
    mosaic_stream = _endless(mosaic_data, config, 3)
    rgb_stream = _endless(rgb_data, config, 4)
    for module in networks.modules().values():
        module.train()
    k = networks.pattern.period
    w = config.weights
    step = init.step if resume else 0
    generator_side = [n for n in optimizers if n != "discriminator"]

    for _ in range(config.finetune_steps):
        step += 1
        lin, raw = (t.to(device) for t in next(mosaic_stream))
        real = next(rgb_stream).to(device)

        discriminator.requires_grad_(True)
        with torch.no_grad():
            fake = to_rgb(generator(lin, raw))
        d_loss = discriminator_loss(discriminator(real), discriminator(fake))
        _check_finite(d_loss, "discriminator loss", step)
        optimizers["discriminator"].zero_grad(set_to_none=True)
        d_loss.backward()
        optimizers["discriminator"].step()

        discriminator.requires_grad_(False)
        cube = generator(lin, raw)
        rgb = to_rgb(cube)
        parts = LossComponents(
            sgc=sgc_loss(cube, config.sgc_variant) if w.lambda_sgc else 0.0,
            tv=tv_loss(cube) if w.lambda_tv else 0.0,
            ips=ips_loss(cube, k) if w.lambda_ips else 0.0,
            gan=generator_adversarial_loss(discriminator(rgb)) if w.lambda_gan else 0.0,
            cyc=cycle_loss(spectral(rgb), cube) if w.lambda_cyc else 0.0,
        )
        g_loss = total_loss(parts, w)
        for name in generator_side:
            optimizers[name].zero_grad(set_to_none=True)
        if g_loss.requires_grad:
            g_loss.backward()
            for name in generator_side:
                optimizers[name].step()

        if history is not None:
            history.record(
                "finetune",
                step,
                total=g_loss.item(),
                disc=d_loss.item(),
                **parts.as_dict(),
            )
        if step % config.log_every == 0:
            logger.info(
                "finetune step %d: total %.6f disc %.6f %s",
                step, g_loss.item(), d_loss.item(), parts.as_dict(),
            )
        if output_dir is not None and config.checkpoint_every and (
            step % config.checkpoint_every == 0
        ):
            Checkpoint.from_networks(
                networks,
                step=step,
                phase="finetune",
                config=config,
                optimizers=optimizers,
            ).save(Path(output_dir) / f"finetune_{step:07d}.ckpt")

    discriminator.requires_grad_(True)
    return Checkpoint.from_networks(
        networks, step=step, phase="finetune", config=config, optimizers=optimizers
    )
