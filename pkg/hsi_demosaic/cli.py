"""Command-line interface: ``hsi-demosaic <command> [options]``.

Every command reads the YAML config given by ``--config`` plus ``--set`` overrides,
writes its outputs under ``--out`` and records a run record (config hash, seed,
package versions and input digests) both in the log and in ``run_record.json``.

Exit codes: 0 on success, 1 on a categorised runtime error, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
import scipy
import torch

from . import __version__
from ._utils import atomic_write_bytes, file_digest
from .color import (
    ColorMatchingTable,
    fixed_hsi_to_rgb,
    rgb_converter_forward,
)
from .config import RunConfig, config_hash, load_config
from .dataset import DatasetManifest, ManifestEntry, split_by_case
from .errors import ConfigurationError, HsiDemosaicError
from .evaluation import benchmark_inference, evaluate_methods, pixel_diff_stats
from .formats import (
    load_any_mosaic,
    load_hypercube,
    load_rgb_image,
    save_hypercube,
    save_mosaic,
    save_rgb_png,
    write_table,
)
from .hypercube import (
    Hypercube,
    RgbImage,
    SnapshotMosaic,
    linear_demosaic,
    simulate_mosaic,
)
from .networks import demosaic_forward
from .preference import (
    PairwiseVoteTable,
    fit_bradley_terry,
    p_value_matrix,
    significance_test,
)
from .synthetic import generate_rgb_corpus, generate_scenes, generate_synthetic_scene
from .training import (
    Checkpoint,
    TrainingHistory,
    build_networks,
    joint_finetune,
    pretrain_all,
    resolve_device,
)

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, RunConfig], list[Path]]


class RunContext:
    """Collects input digests and output paths of one command."""

    def __init__(self, command: str, config: RunConfig):  # noqa: D107
        self.command = command
        self.config = config
        self.out = Path(config.output_dir)
        self.inputs: dict[str, str] = {}

    def input(self, path: str | Path) -> Path:
        """Register an input file and return it as a `Path`."""
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_digest(path)
        return path

    def record(self, outputs: Sequence[Path]) -> dict[str, Any]:
        """Build the run record."""
        return {
            "command": self.command,
            "config_hash": config_hash(self.config),
            "seed": self.config.seed,
            "deterministic": self.config.deterministic,
            "versions": {
                "hsi_demosaic": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "polars": pl.__version__,
                "torch": torch.__version__,
            },
            "inputs": self.inputs,
            "outputs": [str(p) for p in outputs],
        }


def _load_mosaics(ctx: RunContext, paths: Sequence[str]) -> list[SnapshotMosaic]:
    cfg = ctx.config.pattern
    return [
        load_any_mosaic(ctx.input(p), cfg.build(), cfg.white_level) for p in paths
    ]


def _scene_config(config: RunConfig):
    return replace(
        config.synthetic.scene,
        seed=config.seed,
        bands=config.pattern.build().band_count,
    )


def _training_mosaics(ctx: RunContext, args: argparse.Namespace) -> list[SnapshotMosaic]:
    config = ctx.config
    if args.manifest:
        manifest = DatasetManifest.load(ctx.input(args.manifest))
        cfg = config.pattern
        return manifest.load_mosaics(
            config.data.root, {"default": cfg.build()}, cfg.white_level
        )
    pattern = config.pattern.build()
    logger.info("No manifest; using %d synthetic scenes", config.synthetic.scenes)
    return [
        simulate_mosaic(cube, pattern)
        for cube in generate_scenes(_scene_config(config), config.synthetic.scenes)
    ]


def _rgb_corpus(ctx: RunContext, args: argparse.Namespace) -> list[RgbImage]:
    if args.rgb_dir:
        paths = sorted(Path(args.rgb_dir).glob("*.png"))
        if not paths:
            raise ConfigurationError(f"No PNG images in {args.rgb_dir}.")
        return [load_rgb_image(ctx.input(p)) for p in paths]
    config = ctx.config
    return generate_rgb_corpus(_scene_config(config), config.synthetic.rgb_images)


def _networks(ctx: RunContext, checkpoint: str | None):
    device = resolve_device(ctx.config.device)
    if checkpoint:
        return Checkpoint.load(ctx.input(checkpoint)).instantiate(device)
    logger.warning("No checkpoint given; using freshly initialised networks")
    config = ctx.config
    return build_networks(
        config.model_config(),
        config.pattern.build(),
        config.pattern.centers(),
        seed=config.seed,
    ).to(device)


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Sample a cube (or a synthetic scene) through the MSFA."""
    ctx = args.ctx
    pattern = config.pattern.build()
    outputs = []
    if args.cube:
        cube = load_hypercube(ctx.input(args.cube), config.pattern.centers())
    else:
        cube = generate_synthetic_scene(_scene_config(config))
        outputs.append(save_hypercube(cube, ctx.out / "scene.hsc"))
    mosaic = simulate_mosaic(cube, pattern)
    white = config.pattern.white_level
    outputs.append(save_mosaic(mosaic, ctx.out / "mosaic.mos", white))
    return outputs


def cmd_demosaic(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Demosaic frames linearly or with a trained generator."""
    ctx = args.ctx
    networks = _networks(ctx, args.checkpoint) if args.method == "model" else None
    centers = networks.band_centers if networks else config.pattern.centers()
    outputs = []
    for path, mosaic in zip(args.inputs, _load_mosaics(ctx, args.inputs), strict=True):
        cube = linear_demosaic(mosaic, centers)
        if networks is not None:
            cube = demosaic_forward(cube, mosaic, networks.generator)
        outputs.append(save_hypercube(cube, ctx.out / f"{Path(path).stem}.hsc"))
    return outputs


def cmd_to_rgb(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Render cubes to 8-bit sRGB PNGs."""
    ctx = args.ctx
    networks = _networks(ctx, args.checkpoint) if args.method == "model" else None
    cmf = ColorMatchingTable.default()
    outputs = []
    for path in args.inputs:
        cube = load_hypercube(ctx.input(path), config.pattern.centers())
        rgb = (
            rgb_converter_forward(cube, networks.rgb_converter)
            if networks is not None
            else fixed_hsi_to_rgb(cube, cmf)
        )
        outputs.append(save_rgb_png(rgb, ctx.out / f"{Path(path).stem}.png"))
    return outputs


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Pre-train all networks and write ``pretrain.ckpt``."""
    ctx = args.ctx
    history = TrainingHistory()
    checkpoint = pretrain_all(
        _training_mosaics(ctx, args),
        config.train_config(),
        config.model_config(),
        config.pattern.centers(),
        history=history,
    )
    return [
        checkpoint.save(ctx.out / "pretrain.ckpt"),
        write_table(history.to_frame(), ctx.out / "pretrain_history.csv"),
    ]


def cmd_train(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Joint adversarial fine-tuning from ``--init`` (pre-training first if absent)."""
    ctx = args.ctx
    train_config = config.train_config()
    mosaics = _training_mosaics(ctx, args)
    history = TrainingHistory()
    outputs = []
    if args.init:
        init = Checkpoint.load(ctx.input(args.init))
    else:
        init = pretrain_all(
            mosaics,
            train_config,
            config.model_config(),
            config.pattern.centers(),
            history=history,
        )
        outputs.append(init.save(ctx.out / "pretrain.ckpt"))
    expected = build_networks(
        config.model_config(), config.pattern.build(), config.pattern.centers()
    ).architecture()
    final = joint_finetune(
        mosaics,
        _rgb_corpus(ctx, args),
        init,
        train_config,
        discriminator_config=config.discriminator,
        expected_architecture=expected,
        output_dir=ctx.out / "checkpoints",
        history=history,
    )
    outputs.append(final.save(ctx.out / "final.ckpt"))
    outputs.append(write_table(history.to_frame(), ctx.out / "history.csv"))
    return outputs


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Compare linear and model demosaicking on held-out frames."""
    ctx = args.ctx
    networks = _networks(ctx, args.checkpoint)
    pattern = networks.pattern
    ground_truth = None
    if args.inputs:
        mosaics = _load_mosaics(ctx, args.inputs)
    else:
        scene = _scene_config(config)
        holdout = replace(scene, seed=scene.seed + config.synthetic.scenes)
        ground_truth = generate_scenes(holdout, config.synthetic.holdout_scenes)
        mosaics = [simulate_mosaic(cube, pattern) for cube in ground_truth]
    cmf = ColorMatchingTable.default()
    linear = [linear_demosaic(m, networks.band_centers) for m in mosaics]
    model = [
        demosaic_forward(lin, m, networks.generator)
        for lin, m in zip(linear, mosaics, strict=True)
    ]
    report = evaluate_methods(
        {
            "linear": [fixed_hsi_to_rgb(c, cmf) for c in linear],
            "model": [rgb_converter_forward(c, networks.rgb_converter) for c in model],
        },
        _rgb_corpus(ctx, args),
        cubes={"linear": linear, "model": model},
        ground_truth=ground_truth,
        period=pattern.period,
        extractor=config.evaluation.feature_extractor,
        scorer=config.evaluation.quality_scorer,
    )
    boxplot = pixel_diff_stats(_stack(model), _stack(linear)).to_frame()
    return [
        report.write(ctx.out),
        write_table(boxplot, ctx.out / "pixel_diff.csv"),
    ]


def _stack(cubes: Sequence[Hypercube]) -> Hypercube:
    """Concatenate cubes of any size into one ``B x 1 x N`` cube."""
    flat = [np.asarray(c.values).reshape(c.bands, 1, -1) for c in cubes]
    return Hypercube(np.concatenate(flat, axis=2), cubes[0].band_centers)


def cmd_pixel_diff(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Per-band boxplot statistics of ``a - b`` for two ``HSC1`` cubes."""
    ctx = args.ctx
    a = load_hypercube(ctx.input(args.cube_a))
    b = load_hypercube(ctx.input(args.cube_b))
    return [write_table(pixel_diff_stats(a, b).to_frame(), ctx.out / "pixel_diff.csv")]


def cmd_benchmark(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Time inference on random frames of the configured size."""
    ctx = args.ctx
    bench = config.benchmark
    result = benchmark_inference(
        _networks(ctx, args.checkpoint),
        bench.height,
        bench.width,
        bench.n_frames,
        bench.warmup,
        seed=config.seed,
    )
    return [write_table(result.to_frame(), ctx.out / "benchmark.csv")]


def cmd_bt_fit(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Fit Bradley-Terry scales and pairwise significance to a vote CSV."""
    ctx = args.ctx
    table = PairwiseVoteTable.from_csv(ctx.input(args.votes))
    pref = config.preference
    fit = fit_bradley_terry(table, pref.tol, pref.max_iter)
    tests = significance_test(table, fit, tol=pref.tol, max_iter=pref.max_iter)
    return [
        write_table(fit.to_frame(), ctx.out / "bt_pi.csv"),
        write_table(tests, ctx.out / "bt_significance.csv"),
        write_table(p_value_matrix(tests, table.methods), ctx.out / "bt_pvalues.csv"),
    ]


def cmd_gen_synthetic(args: argparse.Namespace, config: RunConfig) -> list[Path]:
    """Write a synthetic dataset: cubes, mosaics, split manifests and an RGB corpus."""
    ctx = args.ctx
    pattern = config.pattern.build()
    white = config.pattern.white_level
    outputs: list[Path] = []
    entries = []
    scenes = generate_scenes(_scene_config(config), config.synthetic.scenes)
    for index, cube in enumerate(scenes):
        case = f"case{index // args.frames_per_case:03d}"
        stem = f"{case}/frame_{index:04d}"
        outputs.append(save_hypercube(cube, ctx.out / f"{stem}.hsc"))
        outputs.append(
            save_mosaic(simulate_mosaic(cube, pattern), ctx.out / f"{stem}.mos", white)
        )
        entries.append(ManifestEntry(f"{stem}.mos", case))
    for split, manifest in split_by_case(entries, seed=config.seed).items():
        outputs.append(manifest.save(ctx.out / f"{split}.yaml"))
    corpus = generate_rgb_corpus(_scene_config(config), config.synthetic.rgb_images)
    for index, rgb in enumerate(corpus):
        outputs.append(save_rgb_png(rgb, ctx.out / "rgb" / f"rgb_{index:04d}.png"))
    return outputs


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="sets 'seed'")
    common.add_argument("--out", help="sets 'output_dir'")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. train.finetune_steps=100",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per workflow."""
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="hsi-demosaic",
        description="Demosaicking of snapshot mosaic hyperspectral images.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add("simulate", cmd_simulate, "sample a cube through the MSFA")
    p.add_argument("--cube", help="HSC1 input; a synthetic scene when omitted")

    for name, handler, help_text in (
        ("demosaic", cmd_demosaic, "demosaic snapshot frames"),
        ("to-rgb", cmd_to_rgb, "render hypercubes as sRGB"),
    ):
        p = add(name, handler, help_text)
        choices = ("linear", "model") if name == "demosaic" else ("fixed", "model")
        p.add_argument("method", choices=choices)
        p.add_argument("inputs", nargs="+")
        p.add_argument("--checkpoint")

    for name, handler, help_text in (
        ("pretrain", cmd_pretrain, "pre-train all networks"),
        ("train", cmd_train, "joint adversarial fine-tuning"),
    ):
        p = add(name, handler, help_text)
        p.add_argument("--manifest", help="training split manifest")
        if name == "train":
            p.add_argument("--init", help="pre-trained checkpoint")
            p.add_argument("--rgb-dir", help="directory of reference RGB PNGs")

    p = add("evaluate", cmd_evaluate, "evaluate linear vs model demosaicking")
    p.add_argument("inputs", nargs="*", help="frames; synthetic hold-out when omitted")
    p.add_argument("--checkpoint")
    p.add_argument("--rgb-dir", help="directory of reference RGB PNGs")

    p = add("pixel-diff", cmd_pixel_diff, "boxplot statistics of a - b")
    p.add_argument("cube_a")
    p.add_argument("cube_b")

    p = add("benchmark", cmd_benchmark, "time per-frame inference")
    p.add_argument("--checkpoint")

    p = add("bt-fit", cmd_bt_fit, "fit Bradley-Terry scales to pairwise votes")
    p.add_argument("votes", help="CSV with method_a, method_b, wins_a, wins_b")

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic dataset")
    p.add_argument("--frames-per-case", type=int, default=4)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, args.set, seed=args.seed, output_dir=args.out)
        args.ctx = RunContext(args.command, config)
        if args.config:
            args.ctx.input(args.config)
        outputs = args.handler(args, config)
        record = args.ctx.record(outputs)
        atomic_write_bytes(
            args.ctx.out / "run_record.json",
            json.dumps(record, indent=2, sort_keys=True).encode("utf-8"),
        )
        logger.info("run record %s", json.dumps(record, sort_keys=True))
    except HsiDemosaicError as exc:
        logger.error("%s error: %s", exc.category, exc)
        return 1
    except OSError as exc:
        logger.error("io error: %s", exc)
        return 1
    except ValueError as exc:
        logger.error("value error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
