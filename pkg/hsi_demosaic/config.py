"""Run configuration.

A run is configured by one YAML document whose sections map onto the dataclasses
owned by each module. Missing keys take the dataclass defaults; unknown keys are
rejected.

```yaml
seed: 7
output_dir: runs/desk
pattern:
  period: 4
  white_level: 4095
train:
  finetune_steps: 2000
  weights:
    lambda_gan: 0.1
```

Command-line overrides use dotted paths, e.g. ``--set train.lr.generator=2e-5``.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, get_origin, get_type_hints

import yaml

from ._utils import stable_hash
from .color import RgbConverterConfig, SpectralRecoveryConfig
from .errors import ConfigurationError
from .formats import DEFAULT_WHITE_LEVEL
from .hypercube import DEFAULT_PERIOD, MsfaPattern, default_band_centers
from .losses import LossWeights
from .networks import DiscriminatorConfig, GeneratorConfig
from .synthetic import SyntheticSceneConfig
from .training import LearningRates, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "HSI_DEMOSAIC_DATA_ROOT"


@dataclass
class PatternConfig:
    """Sensor layout; ``band_map`` defaults to the row-major layout."""

    period: int = DEFAULT_PERIOD
    band_map: list[list[int]] | None = None
    band_centers: list[float] | None = None
    white_level: int = DEFAULT_WHITE_LEVEL

    def build(self) -> MsfaPattern:  # noqa: D102
        if self.band_map is None:
            return MsfaPattern.default(self.period)
        return MsfaPattern(self.period, tuple(tuple(row) for row in self.band_map))

    def centers(self) -> tuple[float, ...]:
        """Configured band centres, or the evenly spaced default."""
        bands = self.build().band_count
        if self.band_centers is None:
            return default_band_centers(bands)
        if len(self.band_centers) != bands:
            raise ConfigurationError(
                f"{len(self.band_centers)} band centres for {bands} bands."
            )
        return tuple(float(c) for c in self.band_centers)


def _default_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, "data")


@dataclass
class DataConfig:
    """Where frames live and how they are cropped and batched."""

    root: str = field(default_factory=_default_root)
    crop_size: int = 96
    batch_size: int = 4
    num_workers: int = 0
    holdout_fraction: float = 0.25


@dataclass
class TrainSection:
    """Optimisation settings; shared settings come from the top level and ``data``."""

    lr: LearningRates = field(default_factory=LearningRates)
    betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    sgc_variant: str = "pan-gradient"
    use_rgb_model: bool = True
    pretrain_steps: int = 500
    finetune_steps: int = 2000
    checkpoint_every: int = 500
    log_every: int = 50


@dataclass
class SyntheticSection:
    """Synthetic dataset size plus the per-scene generator settings."""

    scenes: int = 32
    rgb_images: int = 32
    holdout_scenes: int = 8
    scene: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)


@dataclass
class EvaluationConfig:  # noqa: D101
    feature_extractor: str = "identity-pool"
    quality_scorer: str = "null"


@dataclass
class BenchmarkConfig:  # noqa: D101
    height: int = 720
    width: int = 1280
    n_frames: int = 100
    warmup: int = 3


@dataclass
class PreferenceConfig:  # noqa: D101
    tol: float = 1e-10
    max_iter: int = 10_000


@dataclass
class RunConfig:
    """Complete configuration of one command invocation."""

    seed: int = 0
    output_dir: str = "runs"
    deterministic: bool = True
    device: str = "auto"
    pattern: PatternConfig = field(default_factory=PatternConfig)
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    rgb_converter: RgbConverterConfig = field(default_factory=RgbConverterConfig)
    spectral_recovery: SpectralRecoveryConfig = field(
        default_factory=SpectralRecoveryConfig
    )
    train: TrainSection = field(default_factory=TrainSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    preference: PreferenceConfig = field(default_factory=PreferenceConfig)

    def train_config(self) -> TrainConfig:
        """Assemble the `TrainConfig` used by the training entry points."""
        t, d = self.train, self.data
        return TrainConfig(
            lr=t.lr,
            betas=t.betas,
            weights=t.weights,
            sgc_variant=t.sgc_variant,
            use_rgb_model=t.use_rgb_model,
            batch_size=d.batch_size,
            crop_size=d.crop_size,
            pretrain_steps=t.pretrain_steps,
            finetune_steps=t.finetune_steps,
            checkpoint_every=t.checkpoint_every,
            holdout_fraction=d.holdout_fraction,
            seed=self.seed,
            deterministic=self.deterministic,
            num_workers=d.num_workers,
            device=self.device,
            log_every=t.log_every,
        )

    def model_config(self) -> ModelConfig:
        """Network architectures.

        Raises:
            ConfigurationError: If a network's band count disagrees with the pattern.

        """
        bands = self.pattern.build().band_count
        for name, count in (
            ("generator.bands", self.generator.bands),
            ("rgb_converter.input_bands", self.rgb_converter.input_bands),
            ("spectral_recovery.bands", self.spectral_recovery.bands),
            ("synthetic.scene.bands", self.synthetic.scene.bands),
        ):
            if count != bands:
                raise ConfigurationError(
                    f"{name} is {count} but the pattern has {bands} bands."
                )
        return ModelConfig(
            generator=self.generator,
            rgb_converter=self.rgb_converter,
            spectral_recovery=self.spectral_recovery,
            discriminator=self.discriminator,
        )

    def to_dict(self) -> dict[str, Any]:  # noqa: D102
        return asdict(self)

    def to_yaml(self) -> str:  # noqa: D102
        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=False)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_plain(v) for v in value]
    return value


def _build(cls: type, data: Any, where: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"Section {where or '<root>'} must be a mapping.")
    hints = get_type_hints(cls)
    names = [f.name for f in fields(cls) if f.init]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigurationError(
            f"Unknown key(s) {unknown} in {where or '<root>'}; expected {names}."
        )
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        path = f"{where}.{key}" if where else key
        if is_dataclass(hint):
            value = _build(hint, value, path)
        elif get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        elif hint is float and isinstance(value, str):
            # YAML 1.1 reads exponent literals without a dot, such as 1e-4, as text.
            try:
                value = float(value)
            except ValueError:
                raise ConfigurationError(f"{path} must be a number.") from None
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"Invalid {where or 'configuration'}: {exc}") from exc


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``"a.b=value"`` into a key path and a YAML-parsed value."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"Override {text!r} is not of the form key=value.")
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Set dotted keys in a raw config mapping (creating sections as needed)."""
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Cannot override inside scalar {part!r}.")
            node = child
        node[path[-1]] = value
        logger.debug("Override %s = %r", ".".join(path), value)
    return data


def load_config(
    path: str | Path | None = None,
    overrides: Iterable[str] = (),
    *,
    seed: int | None = None,
    output_dir: str | Path | None = None,
) -> RunConfig:
    """Read a YAML config, apply ``--set`` overrides and the dedicated flags.

    Args:
        path: YAML file; defaults only when omitted.
        overrides: ``key.path=value`` strings.
        seed: ``--seed``, sets ``seed``.
        output_dir: ``--out``, sets ``output_dir``.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigurationError: On unreadable YAML, unknown keys or invalid values.

    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"Invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must contain a mapping.")
    apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    return _build(RunConfig, data, "")


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON of the configuration."""
    return stable_hash(config.to_dict())
