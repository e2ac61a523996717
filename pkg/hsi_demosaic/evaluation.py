"""Quantitative evaluation of demosaicking results.

- `frechet_distance` compares two sets of feature vectors (FID when the features come
  from a deep extractor registered as ``"external"``),
- `quality_score` forwards to a registered no-reference scorer,
- `pixel_diff_stats` summarises per-band differences between two cubes as boxplots,
- `ips_metric` and `psnr` are offline metrics for gridding and synthetic ground truth,
- `compare_scores` tests whether two methods' per-image scores differ,
- `evaluate_methods` assembles a long ``(method, metric, value)`` report,
- `benchmark_inference` times demosaicking plus RGB conversion per frame.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import polars as pl
import torch
import yaml
from scipy import linalg, stats

from ._utils import atomic_write, atomic_write_bytes
from .color import rgb_converter_forward
from .errors import ConfigurationError, ShapeError
from .hypercube import (
    Hypercube,
    RgbImage,
    SnapshotMosaic,
    inverse_pixel_shuffle,
    linear_demosaic,
)
from .networks import demosaic_forward
from .training import Checkpoint, Networks, resolve_device

logger = logging.getLogger(__name__)

FeatureExtractor = Callable[[RgbImage], np.ndarray]
QualityScorer = Callable[[RgbImage], float]

POOL_QUANTILES = (0.1, 0.5, 0.9)


def identity_pool_features(rgb: RgbImage) -> np.ndarray:
    """Channel-wise mean, std and 10/50/90 % quantiles (15 values)."""
    flat = rgb.values.reshape(3, -1)
    return np.concatenate(
        [
            flat.mean(axis=1),
            flat.std(axis=1),
            np.quantile(flat, POOL_QUANTILES, axis=1).T.ravel(),
        ]
    )


_FEATURE_EXTRACTORS: dict[str, FeatureExtractor] = {
    "identity-pool": identity_pool_features,
}
_QUALITY_SCORERS: dict[str, QualityScorer] = {"null": lambda rgb: 0.0}


def register_feature_extractor(name: str, extractor: FeatureExtractor) -> None:
    """Register a feature extractor, e.g. a pretrained network under ``"external"``."""
    _FEATURE_EXTRACTORS[name] = extractor


def register_quality_scorer(name: str, scorer: QualityScorer) -> None:
    """Register a no-reference quality scorer (such as a BRISQUE implementation)."""
    _QUALITY_SCORERS[name] = scorer


def get_feature_extractor(name: str) -> FeatureExtractor:
    """Look up a registered extractor.

    Raises:
        ConfigurationError: If ``name`` is not registered.

    """
    try:
        return _FEATURE_EXTRACTORS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown feature extractor {name!r}; registered: "
            f"{sorted(_FEATURE_EXTRACTORS)}."
        ) from None


def extract_features(images: Sequence[RgbImage], extractor: str) -> np.ndarray:
    """Stack the extractor's feature vectors into an ``(n, d)`` array."""
    fn = get_feature_extractor(extractor)
    return np.stack([np.asarray(fn(image), dtype=np.float64) for image in images])


def _symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = linalg.eigh((matrix + matrix.T) / 2.0)
    if eigvals.min(initial=0.0) < -1e-8 * max(1.0, abs(eigvals).max(initial=0.0)):
        logger.warning("Clamping negative eigenvalue %.3e to 0", eigvals.min())
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def _trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    # tr sqrt(Sa Sb) == tr sqrt(A Sb A) with A = sqrt(Sa), which is symmetric.
    root_a = _symmetric_sqrt(sigma_a)
    inner = root_a @ sigma_b @ root_a
    eigvals = linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())


def frechet_distance(features_a: npt.ArrayLike, features_b: npt.ArrayLike) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` with unbiased sample
    covariances. Round-off negative eigenvalues are clamped, so degenerate
    covariances never raise.

    Args:
        features_a: ``(n_a, d)`` vectors, ``n_a >= 2``.
        features_b: ``(n_b, d)`` vectors, ``n_b >= 2``.

    Returns:
        float: Non-negative distance.

    Raises:
        ShapeError: If a set has fewer than two vectors or dimensions differ.

    Example:
        ```python
        >>> a = np.array([[-1.0], [1.0]]) * np.sqrt(0.5)
        >>> frechet_distance(a, a + 3)
        9.0
        ```

    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.ndim != 2 or b.ndim != 2:  # noqa: PLR2004
        raise ShapeError("Feature sets must be 2-D (n, d).")
    if len(a) < 2 or len(b) < 2:  # noqa: PLR2004
        raise ShapeError("Each feature set needs at least two vectors.")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"Feature dimensions differ: {a.shape[1]} vs {b.shape[1]}.")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    distance = (
        float(np.sum((mu_a - mu_b) ** 2))
        + float(np.trace(sigma_a) + np.trace(sigma_b))
        - 2.0 * _trace_sqrt_product(sigma_a, sigma_b)
    )
    return max(distance, 0.0)


def quality_score(rgb: RgbImage, scorer: str = "null") -> float:
    """Score one image with a registered no-reference scorer.

    Raises:
        ConfigurationError: If ``scorer`` is not registered.

    """
    try:
        fn = _QUALITY_SCORERS[scorer]
    except KeyError:
        raise ConfigurationError(
            f"Unknown quality scorer {scorer!r}; registered: {sorted(_QUALITY_SCORERS)}."
        ) from None
    return float(fn(rgb))


@dataclass(frozen=True)
class BoxplotStats:
    """Per-band boxplot summary; whiskers sit on observed data within 1.5 IQR."""

    median: np.ndarray
    q1: np.ndarray
    q3: np.ndarray
    lo_whisker: np.ndarray
    hi_whisker: np.ndarray
    outliers: tuple[np.ndarray, ...]

    @property
    def n_outliers(self) -> np.ndarray:  # noqa: D102
        return np.array([len(o) for o in self.outliers], dtype=np.int64)

    def to_frame(self) -> pl.DataFrame:
        """One row per band, as written to the boxplot CSV."""
        return pl.DataFrame(
            {
                "band": np.arange(len(self.median), dtype=np.int64),
                "median": self.median,
                "q1": self.q1,
                "q3": self.q3,
                "lo_whisker": self.lo_whisker,
                "hi_whisker": self.hi_whisker,
                "n_outliers": self.n_outliers,
            }
        )


def _band_boxplot(values: np.ndarray) -> tuple[Any, ...]:
    q1, median, q3 = np.quantile(values, (0.25, 0.5, 0.75), method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    outliers = values[(values < lo_fence) | (values > hi_fence)]
    return median, q1, q3, inside.min(), inside.max(), np.sort(outliers)


def pixel_diff_stats(cube_a: Hypercube, cube_b: Hypercube) -> BoxplotStats:
    """Summarise ``a - b`` per band.

    Raises:
        ShapeError: If the cubes' shapes differ.

    """
    a, b = np.asarray(cube_a.values), np.asarray(cube_b.values)
    if a.shape != b.shape:
        raise ShapeError(f"Cube shapes differ: {a.shape} vs {b.shape}.")
    diff = (a.astype(np.float64) - b.astype(np.float64)).reshape(a.shape[0], -1)
    rows = [_band_boxplot(band) for band in diff]
    columns = list(zip(*rows, strict=True))
    return BoxplotStats(
        *(np.array(col, dtype=np.float64) for col in columns[:5]),
        outliers=tuple(columns[5]),
    )


def ips_metric(cube: Hypercube | np.ndarray, k: int) -> float:
    """Variance of phase sub-image means averaged over bands (numpy `ips_loss`)."""
    values = np.asarray(cube.values if isinstance(cube, Hypercube) else cube)
    means = np.stack(
        [inverse_pixel_shuffle(band, k).mean(axis=(1, 2)) for band in values]
    )
    return float(means.var(axis=1).mean())


def psnr(reference: Hypercube, estimate: Hypercube, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical cubes."""
    ref, est = np.asarray(reference.values), np.asarray(estimate.values)
    if ref.shape != est.shape:
        raise ShapeError(f"Cube shapes differ: {ref.shape} vs {est.shape}.")
    mse = float(np.mean((ref.astype(np.float64) - est) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(data_range**2 / mse))


@dataclass(frozen=True)
class ScoreComparison:
    """Result of a two-tailed Welch t-test between two score samples."""

    mean_a: float
    mean_b: float
    statistic: float
    p_value: float


def compare_scores(
    scores_a: Sequence[float], scores_b: Sequence[float]
) -> ScoreComparison:
    """Test whether two methods' per-image quality scores differ in mean.

    Raises:
        ShapeError: If either sample has fewer than two scores.

    """
    a, b = np.asarray(scores_a, dtype=np.float64), np.asarray(scores_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:  # noqa: PLR2004
        raise ShapeError("Each score sample needs at least two values.")
    result = stats.ttest_ind(a, b, equal_var=False)
    return ScoreComparison(
        float(a.mean()), float(b.mean()), float(result.statistic), float(result.pvalue)
    )


@dataclass
class EvaluationReport:
    """Long-format metric table plus the plug-in choices that produced it."""

    table: pl.DataFrame
    metadata: dict[str, Any] = field(default_factory=dict)

    def value(self, method: str, metric: str) -> float:
        """Look up one value."""
        hit = self.table.filter(
            (pl.col("method") == method) & (pl.col("metric") == metric)
        )
        if hit.height != 1:
            raise KeyError(f"No {metric!r} value for {method!r}.")
        return hit.item(0, "value")

    def write(self, out_dir: str | Path) -> Path:
        """Write ``report.csv`` and ``report_metadata.yaml`` atomically."""
        out_dir = Path(out_dir)
        path = atomic_write(out_dir / "report.csv", self.table.write_csv)
        atomic_write_bytes(
            out_dir / "report_metadata.yaml",
            yaml.safe_dump(self.metadata, sort_keys=True).encode("utf-8"),
        )
        return path


def evaluate_methods(  # noqa: PLR0913
    outputs: Mapping[str, Sequence[RgbImage]],
    reference: Sequence[RgbImage],
    *,
    cubes: Mapping[str, Sequence[Hypercube]] | None = None,
    ground_truth: Sequence[Hypercube] | None = None,
    period: int = 4,
    extractor: str = "identity-pool",
    scorer: str = "null",
) -> EvaluationReport:
    """Compute FID against ``reference``, quality scores, IPS and PSNR per method.

    Args:
        outputs: Method name -> RGB renderings of its demosaicked frames.
        reference: Real RGB images for the Fréchet distance.
        cubes: Method name -> demosaicked cubes, for IPS (and PSNR).
        ground_truth: Synthetic ground truth, aligned with each method's cubes.
        period (int): MSFA period used for IPS.
        extractor (str): Registered feature extractor.
        scorer (str): Registered quality scorer.

    Returns:
        EvaluationReport: Rows ``(method, metric, value)``.

    """
    rows: list[dict[str, Any]] = []
    real_features = extract_features(reference, extractor)
    for method, images in outputs.items():
        fid = frechet_distance(extract_features(images, extractor), real_features)
        scores = np.array([quality_score(image, scorer) for image in images])
        rows += [
            {"method": method, "metric": "fid", "value": fid},
            {"method": method, "metric": "quality_mean", "value": float(scores.mean())},
            {"method": method, "metric": "quality_std", "value": float(scores.std())},
        ]
        method_cubes = (cubes or {}).get(method)
        if method_cubes:
            ips = float(np.mean([ips_metric(c, period) for c in method_cubes]))
            rows.append({"method": method, "metric": "ips", "value": ips})
            if ground_truth is not None:
                value = float(
                    np.mean(
                        [
                            psnr(gt, c)
                            for gt, c in zip(ground_truth, method_cubes, strict=True)
                        ]
                    )
                )
                rows.append({"method": method, "metric": "psnr", "value": value})
        logger.info("Evaluated %s: FID %.4f over %d images", method, fid, len(images))
    table = pl.DataFrame(
        rows, schema={"method": pl.String, "metric": pl.String, "value": pl.Float64}
    )
    metadata = {
        "feature_extractor": extractor,
        "quality_scorer": scorer,
        "reference_images": len(reference),
        "period": period,
    }
    return EvaluationReport(table, metadata)


@dataclass(frozen=True)
class BenchmarkResult:
    """Per-frame wall times in milliseconds and their summary."""

    times_ms: tuple[float, ...]
    height: int
    width: int
    device: str

    @property
    def mean_ms(self) -> float:  # noqa: D102
        return float(np.mean(self.times_ms))

    def percentile(self, q: float) -> float:
        """``q``-th percentile of the per-frame times."""
        return float(np.percentile(self.times_ms, q))

    def summary(self) -> dict[str, float]:
        """Mean, min, max and the 50/90/95/99th percentiles."""
        return {
            "mean_ms": self.mean_ms,
            "min_ms": float(min(self.times_ms)),
            "max_ms": float(max(self.times_ms)),
            **{f"p{q}_ms": self.percentile(q) for q in (50, 90, 95, 99)},
        }

    def to_frame(self) -> pl.DataFrame:
        """Summary as ``(statistic, value)`` rows."""
        summary = self.summary()
        return pl.DataFrame(
            {"statistic": list(summary), "value": list(summary.values())}
        )


def _random_frame(networks: Networks, height: int, width: int, rng) -> SnapshotMosaic:
    return SnapshotMosaic(rng.random((height, width)), networks.pattern)


def benchmark_inference(
    model: Checkpoint | Networks,
    height: int = 720,
    width: int = 1280,
    n_frames: int = 100,
    warmup: int = 3,
    seed: int = 0,
) -> BenchmarkResult:
    """Time generator + RGB converter inference per frame.

    Frames are random mosaics; their linear demosaicking is prepared outside the
    timed region. Timing runs on one dedicated worker thread.

    Args:
        model: Checkpoint or live networks.
        height (int): Frame height (default 720).
        width (int): Frame width (default 1280).
        n_frames (int): Timed frames.
        warmup (int): Untimed frames run first.
        seed (int): Seed for the random frames.

    Returns:
        BenchmarkResult: Per-frame times and device.

    """
    if n_frames < 1:
        raise ConfigurationError("n_frames must be positive.")
    if isinstance(model, Checkpoint):
        networks = model.instantiate(resolve_device("auto"))
    else:
        networks = model
    networks.pattern.check_frame(height, width)
    device = next(networks.generator.parameters()).device
    rng = np.random.default_rng(seed)

    def run() -> list[float]:
        times = []
        for index in range(warmup + n_frames):
            mosaic = _random_frame(networks, height, width, rng)
            lin = linear_demosaic(mosaic, networks.band_centers)
            if device.type == "cuda":
                torch.cuda.synchronize(device)
            start = time.perf_counter()
            cube = demosaic_forward(lin, mosaic, networks.generator)
            rgb_converter_forward(cube, networks.rgb_converter)
            elapsed = (time.perf_counter() - start) * 1000.0
            if index >= warmup:
                times.append(elapsed)
        return times

    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="benchmark") as executor:
        times = executor.submit(run).result()
    result = BenchmarkResult(tuple(times), height, width, str(device))
    logger.info(
        "Benchmark %dx%d on %s: mean %.2f ms over %d frames",
        width, height, device, result.mean_ms, n_frames,
    )
    return result
