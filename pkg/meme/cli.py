"""Command-line entry point running the pipeline stages from on-disk artifacts."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path

from .appearance import (
    learn_model,
    load_model,
    load_user_input,
    save_model,
    segment_sequence,
)
from .config import (
    PipelineConfig,
    load_pipeline_config,
    load_scene_config,
    parse_overrides,
    read_manifest,
)
from .const import (
    COMPARISON_CSV,
    CONF_OUTPUT_DIR,
    CONF_SEED,
    CONF_THREADS,
    CONF_WIDTH_PX,
    DOMAIN,
    MASKS_DIR,
    SKELETON_CSV,
    SUBCOMMAND_ALL,
    SUBCOMMAND_EVAL,
    SUBCOMMAND_LEARN,
    SUBCOMMAND_MOTILITY,
    SUBCOMMAND_SEGMENT,
    SUBCOMMAND_SKELETON,
    SUBCOMMAND_SYNTH,
    SUBCOMMANDS,
)
from .evaluation import (
    ThresholdConfig,
    compare_methods,
    load_truth_masks,
    tune_thresholds,
    write_comparison_csv,
)
from .exceptions import ConfigError, MemeError
from .imagecore import (
    BinaryMask,
    ImageSequence,
    default_smooth_radius,
    load_mask,
    load_sequence,
    save_mask,
)
from .motility import analyze_motility, write_motility_csvs
from .skeleton import read_skeletons_csv, skeletonize_masks, write_skeletons_csv
from .synthgen import SceneSpec, generate_sequence, write_dataset

_LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

type Stage = Callable[[PipelineConfig], None]


def _require(value: object, key: str, subcommand: str) -> None:
    """Raise ConfigError naming the key a stage is missing."""
    if value is None:
        raise ConfigError(f"'{subcommand}' needs '{key}' in the configuration")


def _load_frames(config: PipelineConfig, subcommand: str) -> ImageSequence:
    """Load the configured frame sequence."""
    _require(config.sequence_dir, "sequence_dir", subcommand)
    return load_sequence(config.sequence_dir, config.frame_rate)


def _worm_width(config: PipelineConfig) -> float | None:
    """Return the annotated worm width when a manifest is configured."""
    if config.manifest is None:
        return None
    return float(read_manifest(config.manifest)[CONF_WIDTH_PX])


def stage_learn(config: PipelineConfig) -> None:
    """Learn the appearance model from the annotation and save it."""
    _require(config.manifest, "manifest", SUBCOMMAND_LEARN)
    user_input = load_user_input(config.manifest)
    model = learn_model(
        user_input,
        n_components=config.components,
        grid=(config.grid_rows, config.grid_cols),
        alpha0=config.alpha0,
        alpha1=config.alpha1,
        worm_samples=config.worm_samples,
        cell_samples=config.cell_samples,
        seed=config.seed,
        threads=config.threads,
    )
    save_model(model, config.model)
    _LOGGER.info("Saved model path=%s", config.model)


def stage_segment(config: PipelineConfig) -> None:
    """Segment every frame and write masks named by frame index."""
    model = load_model(config.model)
    sequence = _load_frames(config, SUBCOMMAND_SEGMENT)
    masks = segment_sequence(
        model,
        sequence,
        threads=config.threads,
        smooth_radius=config.smooth_radius,
        keep_largest=config.keep_largest,
        mode=config.ratio_mode,
    )
    masks_dir = config.output_dir / MASKS_DIR
    for index, mask in enumerate(masks):
        save_mask(mask, masks_dir / f"{index:04d}.png")
    _LOGGER.info("Wrote masks dir=%s frames=%d", masks_dir, len(masks))


def _load_masks(config: PipelineConfig) -> list[BinaryMask]:
    """Read the masks written by the segment stage."""
    masks_dir = config.output_dir / MASKS_DIR
    files = sorted(masks_dir.glob("*.png")) if masks_dir.is_dir() else []
    if not files:
        raise ConfigError(f"no masks in {masks_dir}; run 'segment' first")
    return [load_mask(path) for path in files]


def stage_skeleton(config: PipelineConfig) -> None:
    """Extract one centerline per mask and write the skeleton table."""
    skeletons = skeletonize_masks(
        _load_masks(config),
        worm_width=_worm_width(config),
        n_points=config.n_points,
        prior_floor=config.prior_floor,
        smooth_sigma=config.skeleton_smoothing,
        threads=config.threads,
    )
    if not skeletons:
        raise MemeError("no frame produced a skeleton")
    write_skeletons_csv(skeletons, config.output_dir / SKELETON_CSV)


def stage_motility(config: PipelineConfig) -> None:
    """Compute motility metrics from the skeleton table."""
    _require(config.frame_rate, "frame_rate", SUBCOMMAND_MOTILITY)
    skeleton_csv = config.output_dir / SKELETON_CSV
    if not skeleton_csv.is_file():
        raise ConfigError(f"{skeleton_csv} not found; run 'skeleton' first")
    analysis = analyze_motility(
        read_skeletons_csv(skeleton_csv),
        frame_rate=config.frame_rate,
        period_frames=config.period_frames,
    )
    write_motility_csvs(analysis, config.output_dir)


def _baseline(config: PipelineConfig, smooth_radius: int) -> ThresholdConfig:
    """Return the configured baseline window, tuning it when unset."""
    if config.baseline_low is not None and config.baseline_high is not None:
        return ThresholdConfig(
            config.baseline_low,
            config.baseline_high,
            config.baseline_subtraction,
            config.baseline_bg_threshold,
            smooth_radius,
        )
    _require(config.manifest, "manifest", SUBCOMMAND_EVAL)
    user_input = load_user_input(config.manifest)
    return tune_thresholds(
        user_input.image,
        user_input.worm_mask,
        config.baseline_subtraction,
        config.baseline_bg_threshold,
        smooth_radius,
    )


def stage_eval(config: PipelineConfig) -> None:
    """Compare MEME and the threshold baseline against ground truth."""
    _require(config.truth_dir, "truth_dir", SUBCOMMAND_EVAL)
    model = load_model(config.model)
    sequence = _load_frames(config, SUBCOMMAND_EVAL)
    smooth_radius = (
        config.smooth_radius
        if config.smooth_radius is not None
        else default_smooth_radius(model.worm_width)
    )
    table = compare_methods(
        sequence,
        load_truth_masks(config.truth_dir),
        model,
        _baseline(config, smooth_radius),
        sequence_name=config.sequence_name,
        smooth_radius=config.smooth_radius,
        keep_largest=config.keep_largest,
        mode=config.ratio_mode,
    )
    write_comparison_csv(table, config.output_dir / COMPARISON_CSV)


STAGES: dict[str, tuple[Stage, ...]] = {
    SUBCOMMAND_LEARN: (stage_learn,),
    SUBCOMMAND_SEGMENT: (stage_segment,),
    SUBCOMMAND_SKELETON: (stage_skeleton,),
    SUBCOMMAND_MOTILITY: (stage_motility,),
    SUBCOMMAND_EVAL: (stage_eval,),
    SUBCOMMAND_ALL: (stage_learn, stage_segment, stage_skeleton, stage_motility),
}


def run_synth(config_path: Path | None, overrides: dict[str, str]) -> None:
    """Generate a synthetic dataset from a scene file."""
    values = load_scene_config(config_path, overrides)
    result = generate_sequence(SceneSpec.from_config(values))
    write_dataset(result, values[CONF_OUTPUT_DIR])


def run(
    subcommand: str,
    config_path: Path | None = None,
    overrides: dict[str, str] | None = None,
) -> None:
    """Run one subcommand; module errors propagate as MemeError."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    overrides = overrides or {}
    if subcommand == SUBCOMMAND_SYNTH:
        run_synth(config_path, overrides)
        return
    config = load_pipeline_config(config_path, overrides)
    for stage in STAGES[subcommand]:
        started = time.perf_counter()
        stage(config)
        _LOGGER.info(
            "Stage %s finished elapsed=%.3fs",
            stage.__name__.removeprefix("stage_"),
            time.perf_counter() - started,
        )


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog=DOMAIN,
        description="Segment, skeletonize and measure swimming nematodes.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument(
        "--config", type=Path, default=None, help="key=value configuration file"
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads per stage"
    )
    parser.add_argument("--seed", type=int, default=None, help="random seed")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true")
    verbosity.add_argument("--quiet", "-q", action="store_true")
    parser.add_argument(
        "overrides", nargs="*", metavar="key=value", help="configuration overrides"
    )
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Send package logs to standard error."""
    logger = logging.getLogger(DOMAIN)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(
        logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the subcommand and return the exit status."""
    args = build_parser().parse_intermixed_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        overrides = parse_overrides(args.overrides)
        if args.seed is not None:
            overrides[CONF_SEED] = str(args.seed)
        if args.threads is not None and args.subcommand != SUBCOMMAND_SYNTH:
            overrides[CONF_THREADS] = str(args.threads)
        run(args.subcommand, args.config, overrides)
    except MemeError as err:
        _LOGGER.error("%s failed: %s", args.subcommand, err)
        return 1
    return 0
