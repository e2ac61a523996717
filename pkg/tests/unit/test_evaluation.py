import math
import threading

import numpy as np
import polars as pl
import pytest
import yaml

from hsi_demosaic import evaluation
from hsi_demosaic.errors import ConfigurationError, ShapeError
from hsi_demosaic.evaluation import (
    BenchmarkResult,
    EvaluationReport,
    benchmark_inference,
    compare_scores,
    evaluate_methods,
    extract_features,
    frechet_distance,
    get_feature_extractor,
    identity_pool_features,
    ips_metric,
    pixel_diff_stats,
    psnr,
    quality_score,
    register_feature_extractor,
    register_quality_scorer,
)
from hsi_demosaic.hypercube import Hypercube, RgbImage
from hsi_demosaic.training import build_networks

pytestmark = pytest.mark.unit

HALF_ROOT = np.array([[-1.0], [1.0]]) * math.sqrt(0.5)


class TestFrechetDistance:
    def test_shifted_means(self):
        assert frechet_distance(HALF_ROOT, HALF_ROOT + 3.0) == pytest.approx(9.0)

    def test_scaled_spread(self):
        assert frechet_distance(HALF_ROOT, 2.0 * HALF_ROOT) == pytest.approx(1.0)

    def test_self_distance(self, rng):
        features = rng.normal(size=(64, 15))
        assert frechet_distance(features, features) < 1e-6

    def test_symmetric(self, rng):
        a, b = rng.normal(size=(30, 4)), rng.normal(1.0, 2.0, size=(40, 4))
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a))

    def test_degenerate_covariance(self):
        # Fewer samples than dimensions leaves singular covariances.
        a = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)

    def test_one_dimensional_input(self):
        assert frechet_distance([0.0, 2.0], [3.0, 5.0]) == pytest.approx(9.0)

    @pytest.mark.parametrize(
        ("a", "b"),
        [
            (np.zeros((1, 3)), np.zeros((4, 3))),
            (np.zeros((4, 3)), np.zeros((4, 2))),
        ],
    )
    def test_shape_errors(self, a, b):
        with pytest.raises(ShapeError):
            frechet_distance(a, b)


class TestFeatures:
    def test_identity_pool(self):
        rgb = RgbImage(np.stack([np.full((4, 4), v) for v in (0.1, 0.5, 0.9)]))
        features = identity_pool_features(rgb)
        assert features.shape == (15,)
        np.testing.assert_allclose(features[:3], [0.1, 0.5, 0.9])
        np.testing.assert_allclose(features[3:6], 0.0, atol=1e-12)

    def test_registry(self):
        register_feature_extractor("mean-test", lambda rgb: rgb.values.mean(axis=(1, 2)))
        images = [RgbImage(np.full((3, 2, 2), v)) for v in (0.2, 0.4)]
        assert extract_features(images, "mean-test").shape == (2, 3)
        with pytest.raises(ConfigurationError, match="feature extractor"):
            get_feature_extractor("external-missing")

    def test_quality_scorers(self):
        rgb = RgbImage(np.full((3, 2, 2), 0.25))
        assert quality_score(rgb) == 0.0
        register_quality_scorer("brightness-test", lambda im: im.values.mean())
        assert quality_score(rgb, "brightness-test") == pytest.approx(0.25)
        with pytest.raises(ConfigurationError, match="quality scorer"):
            quality_score(rgb, "missing")


class TestPixelDiff:
    def test_boxplot_values(self):
        a = np.zeros((2, 1, 10))
        a[0, 0] = np.arange(10)
        a[1, 0, -1] = 100.0
        stats = pixel_diff_stats(Hypercube(a), Hypercube(np.zeros((2, 1, 10))))
        assert stats.median[0] == pytest.approx(4.5)
        assert stats.q1[0] == pytest.approx(2.25)
        assert stats.q3[0] == pytest.approx(6.75)
        assert stats.lo_whisker[0] == 0.0
        assert stats.hi_whisker[0] == 9.0
        assert stats.n_outliers.tolist() == [0, 1]
        np.testing.assert_array_equal(stats.outliers[1], [100.0])

    def test_frame(self, random_cube):
        frame = pixel_diff_stats(random_cube, random_cube).to_frame()
        assert frame.columns == [
            "band",
            "median",
            "q1",
            "q3",
            "lo_whisker",
            "hi_whisker",
            "n_outliers",
        ]
        assert frame.height == 16
        assert frame["median"].abs().max() == 0.0

    def test_shape_mismatch(self, random_cube):
        with pytest.raises(ShapeError):
            pixel_diff_stats(random_cube, Hypercube(np.zeros((16, 4, 4))))


class TestOfflineMetrics:
    def test_psnr(self, random_cube):
        assert psnr(random_cube, random_cube) == math.inf
        shifted = random_cube.with_values(random_cube.values + 0.1)
        assert psnr(random_cube, shifted) == pytest.approx(20.0)

    def test_ips_metric(self):
        values = np.zeros((1, 8, 8))
        values[:, ::4, ::4] = 1.0
        assert ips_metric(values, 4) == pytest.approx(15 / 256)
        assert ips_metric(Hypercube(np.ones((2, 8, 8))), 4) == 0.0


def test_compare_scores():
    result = compare_scores([1.0, 1.1, 0.9, 1.0], [3.0, 3.2, 2.8, 3.1])
    assert result.mean_a == pytest.approx(1.0)
    assert result.p_value < 0.01
    assert result.statistic < 0
    with pytest.raises(ShapeError):
        compare_scores([1.0], [1.0, 2.0])


class TestEvaluateMethods:
    @pytest.fixture()
    def report(self, rng) -> EvaluationReport:
        reference = [RgbImage(rng.random((3, 8, 8))) for _ in range(4)]
        truth = [Hypercube(rng.random((16, 8, 8))) for _ in range(2)]
        noisy = [c.with_values(np.clip(c.values + 0.05, 0, 1)) for c in truth]
        outputs = {
            "linear": [RgbImage(rng.random((3, 8, 8)) * 0.5) for _ in range(3)],
            "ours": reference[:3],
        }
        return evaluate_methods(
            outputs,
            reference,
            cubes={"linear": noisy, "ours": truth},
            ground_truth=truth,
        )

    def test_long_format(self, report):
        assert report.table.columns == ["method", "metric", "value"]
        assert set(report.table["metric"]) == {
            "fid",
            "quality_mean",
            "quality_std",
            "ips",
            "psnr",
        }

    def test_values(self, report):
        assert report.value("ours", "psnr") == math.inf
        assert report.value("linear", "psnr") < 30.0
        assert report.value("ours", "fid") < report.value("linear", "fid")
        with pytest.raises(KeyError):
            report.value("ours", "lpips")

    def test_metadata_and_write(self, report, tmp_path):
        assert report.metadata["feature_extractor"] == "identity-pool"
        path = report.write(tmp_path)
        assert pl.read_csv(path).height == report.table.height
        metadata = yaml.safe_load((tmp_path / "report_metadata.yaml").read_text())
        assert metadata["quality_scorer"] == "null"


class TestBenchmark:
    def test_small_frames(self, tiny_models, pattern):
        networks = build_networks(tiny_models, pattern)
        result = benchmark_inference(networks, 16, 24, n_frames=2, warmup=1)
        assert len(result.times_ms) == 2
        assert (result.height, result.width) == (16, 24)
        assert result.device == "cpu"
        summary = result.summary()
        assert set(summary) == {
            "mean_ms",
            "min_ms",
            "max_ms",
            "p50_ms",
            "p90_ms",
            "p95_ms",
            "p99_ms",
        }
        assert summary["min_ms"] <= summary["p50_ms"] <= summary["max_ms"]

    def test_single_frame_mean_is_that_frame(self, tiny_models, pattern):
        networks = build_networks(tiny_models, pattern)
        result = benchmark_inference(networks, 16, 16, n_frames=1, warmup=0)
        (only,) = result.times_ms
        summary = result.summary()
        assert summary["mean_ms"] == pytest.approx(only)
        assert summary["p50_ms"] == pytest.approx(only)
        assert summary["p99_ms"] == pytest.approx(only)

    def test_times_on_worker_thread(self, tiny_models, pattern, monkeypatch):
        threads = []
        original = evaluation.demosaic_forward

        def forward(*args):
            threads.append(threading.current_thread())
            return original(*args)

        monkeypatch.setattr(evaluation, "demosaic_forward", forward)
        networks = build_networks(tiny_models, pattern)
        benchmark_inference(networks, 16, 16, n_frames=2, warmup=1)
        assert len(threads) == 3
        assert len(set(threads)) == 1
        assert threads[0] is not threading.main_thread()

    @pytest.mark.slow
    def test_hd_protocol(self, tiny_models, pattern):
        networks = build_networks(tiny_models, pattern)
        result = benchmark_inference(networks)
        assert (result.height, result.width) == (720, 1280)
        assert len(result.times_ms) == 100
        summary = result.summary()
        assert summary["mean_ms"] == pytest.approx(np.mean(result.times_ms))
        assert summary["p50_ms"] <= summary["p95_ms"] <= summary["p99_ms"]
        assert summary["p99_ms"] <= summary["max_ms"]

    def test_rejects_non_multiple_frames(self, tiny_models, pattern):
        networks = build_networks(tiny_models, pattern)
        with pytest.raises(ShapeError):
            benchmark_inference(networks, 10, 16, n_frames=1)

    def test_rejects_zero_frames(self, tiny_models, pattern):
        networks = build_networks(tiny_models, pattern)
        with pytest.raises(ConfigurationError):
            benchmark_inference(networks, 16, 16, n_frames=0)

    def test_result_frame(self):
        result = BenchmarkResult((1.0, 2.0, 3.0), 4, 4, "cpu")
        frame = result.to_frame()
        assert frame.columns == ["statistic", "value"]
        assert dict(zip(frame["statistic"], frame["value"], strict=True))[
            "mean_ms"
        ] == pytest.approx(2.0)
