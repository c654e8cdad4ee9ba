"""Ground-truth metrics, the threshold baseline and the method comparison."""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .appearance import AppearanceModel, segment_frame
from .const import (
    CSV_FLOAT_FORMAT,
    DEFAULT_BG_THRESHOLD,
    IMAGE_SUFFIXES,
    MIN_SUBTRACTION_FRAMES,
    RATIO_DENSITY,
    THRESHOLD_SWEEP_STEP,
)
from .exceptions import ConfigError, DimensionMismatchError, InsufficientDataError
from .imagecore import (
    BinaryMask,
    GrayImage,
    ImageSequence,
    PathLike,
    largest_component,
    load_mask,
    morph_open_close,
)

_LOGGER = logging.getLogger(__name__)

METHOD_MEME = "meme"
METHOD_THRESHOLD = "threshold"
COMPARISON_COLUMNS = [
    "sequence",
    "frame",
    "method",
    "surface_error",
    "nematode_yield",
]

type Segmenter = Callable[[int], BinaryMask]


@dataclass(frozen=True, slots=True)
class EvalResult:
    """Surface error and nematode yield of one frame."""

    frame_index: int
    surface_error: float
    nematode_yield: float


@dataclass(frozen=True, slots=True)
class ThresholdConfig:
    """Intensity window and background subtraction settings of the baseline."""

    low: int
    high: int
    use_background_subtraction: bool = True
    bg_threshold: float = DEFAULT_BG_THRESHOLD
    smooth_radius: int = 1

    def __post_init__(self) -> None:
        """Require 0 <= low <= high <= 255."""
        if not 0 <= self.low <= self.high <= 255:
            raise ConfigError(
                f"threshold window [{self.low}, {self.high}] must satisfy "
                "0 <= low <= high <= 255"
            )


@dataclass(frozen=True, slots=True, eq=False)
class ComparisonTable:
    """Per-frame metrics for each method plus per-method means."""

    rows: pd.DataFrame
    means: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        """Return rows followed by the mean rows."""
        return pd.concat([self.rows, self.means], ignore_index=True)


def _check_shapes(truth: BinaryMask, segmentation: BinaryMask) -> None:
    """Reject masks of different sizes."""
    if truth.shape != segmentation.shape:
        raise DimensionMismatchError(
            f"truth {truth.shape} and segmentation {segmentation.shape} differ"
        )


def surface_error(truth: BinaryMask, segmentation: BinaryMask) -> float:
    """Return the fraction of all pixels where the masks disagree."""
    _check_shapes(truth, segmentation)
    return float(np.mean(truth.data != segmentation.data))


def nematode_yield(truth: BinaryMask, segmentation: BinaryMask) -> float:
    """Return the fraction of true worm pixels labelled worm."""
    _check_shapes(truth, segmentation)
    if truth.is_empty():
        raise InsufficientDataError("ground truth has no worm pixels")
    return float(np.mean(segmentation.data[truth.data]))


def evaluate(
    truth: BinaryMask, segmentation: BinaryMask, frame_index: int
) -> EvalResult:
    """Return both metrics for one frame."""
    return EvalResult(
        frame_index,
        surface_error(truth, segmentation),
        nematode_yield(truth, segmentation),
    )


def _smooth(mask: BinaryMask, radius: int) -> BinaryMask:
    """Apply open/close smoothing then keep the largest region."""
    if radius > 0:
        mask = morph_open_close(mask, radius)
    return largest_component(mask)


def threshold_segment(
    sequence: ImageSequence,
    config: ThresholdConfig,
    frame_index: int,
    background: NDArray[np.float64] | None = None,
) -> BinaryMask:
    """Segment one frame with an intensity window and optional subtraction.

    Subtraction of the temporal mean only applies to sequences of at least
    MIN_SUBTRACTION_FRAMES frames; background may pass a precomputed mean.
    """
    if not 0 <= frame_index < len(sequence):
        raise IndexError(
            f"frame {frame_index} outside a sequence of {len(sequence)} frames"
        )
    pixels = sequence[frame_index].pixels
    candidate = (pixels >= config.low) & (pixels <= config.high)
    if config.use_background_subtraction and len(sequence) >= MIN_SUBTRACTION_FRAMES:
        if background is None:
            background = sequence.mean_image()
        candidate &= np.abs(pixels - background) > config.bg_threshold
    return _smooth(BinaryMask(candidate), config.smooth_radius)


def _window_counts(
    pixels: NDArray[np.uint8], selection: NDArray[np.bool_], levels: NDArray[np.int64]
) -> NDArray[np.int64]:
    """Return counts of selected pixels in [levels[i], levels[j]] for all i, j."""
    histogram = np.bincount(pixels[selection], minlength=256)
    cumulative = np.concatenate(([0], np.cumsum(histogram)))
    return cumulative[levels[None, :] + 1] - cumulative[levels[:, None]]


def tune_thresholds(
    image: GrayImage,
    truth: BinaryMask,
    use_background_subtraction: bool = True,
    bg_threshold: float = DEFAULT_BG_THRESHOLD,
    smooth_radius: int = 1,
    step: int = THRESHOLD_SWEEP_STEP,
) -> ThresholdConfig:
    """Pick the window maximizing yield minus false positives per worm pixel.

    The score uses the raw intensity window on the annotation frame; ties
    go to the smallest low, then the smallest high.
    """
    if truth.shape != image.shape:
        raise DimensionMismatchError(
            f"truth {truth.shape} does not match image {image.shape}"
        )
    if truth.is_empty():
        raise InsufficientDataError("cannot tune thresholds without worm pixels")
    levels = np.array(sorted({*range(0, 256, step), 255}), dtype=np.int64)
    worm = _window_counts(image.pixels, truth.data, levels)
    other = _window_counts(image.pixels, ~truth.data, levels)
    worm_area = truth.count
    score = (worm - other) / worm_area
    score[levels[:, None] > levels[None, :]] = -np.inf
    low_index, high_index = np.unravel_index(np.argmax(score), score.shape)
    config = ThresholdConfig(
        int(levels[low_index]),
        int(levels[high_index]),
        use_background_subtraction,
        bg_threshold,
        smooth_radius,
    )
    _LOGGER.info(
        "Tuned baseline low=%d high=%d score=%.4f",
        config.low,
        config.high,
        score[low_index, high_index],
    )
    return config


def load_truth_masks(truth_dir: PathLike) -> dict[int, BinaryMask]:
    """Read ground-truth masks whose file stems are frame indices."""
    truth_dir = Path(truth_dir)
    if not truth_dir.is_dir():
        raise ConfigError(f"truth directory not found: {truth_dir}")
    masks: dict[int, BinaryMask] = {}
    for path in sorted(truth_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            index = int(path.stem)
        except ValueError:
            _LOGGER.debug("Skipping truth file without a frame index: %s", path)
            continue
        masks[index] = load_mask(path)
    if not masks:
        raise ConfigError(f"no truth masks named by frame index in {truth_dir}")
    return masks


def compare_masks(
    truth: Mapping[int, BinaryMask],
    predictions: Mapping[str, Mapping[int, BinaryMask]],
    sequence_name: str = "sequence",
) -> ComparisonTable:
    """Score each method's masks against the truth frames."""
    if not truth:
        raise InsufficientDataError("no ground-truth frames to compare against")
    records = []
    for method, masks in predictions.items():
        for frame in sorted(truth):
            result = evaluate(truth[frame], masks[frame], frame)
            records.append(
                {
                    "sequence": sequence_name,
                    "frame": frame,
                    "method": method,
                    "surface_error": result.surface_error,
                    "nematode_yield": result.nematode_yield,
                }
            )
    rows = pd.DataFrame(records, columns=COMPARISON_COLUMNS)
    means = (
        rows.groupby("method", sort=False)[["surface_error", "nematode_yield"]]
        .mean()
        .reset_index()
    )
    means.insert(0, "sequence", sequence_name)
    means.insert(1, "frame", "mean")
    return ComparisonTable(rows, means[COMPARISON_COLUMNS])


def compare_methods(
    sequence: ImageSequence,
    truth: Mapping[int, BinaryMask],
    meme: AppearanceModel,
    baseline: ThresholdConfig,
    sequence_name: str = "sequence",
    smooth_radius: int | None = None,
    keep_largest: bool = True,
    mode: str = RATIO_DENSITY,
) -> ComparisonTable:
    """Segment each truth frame with both methods and score them."""
    if not truth:
        raise InsufficientDataError("no ground-truth frames to compare against")
    outside = [frame for frame in truth if not 0 <= frame < len(sequence)]
    if outside:
        raise ConfigError(
            f"truth frames {sorted(outside)} outside a sequence of "
            f"{len(sequence)} frames"
        )
    background = sequence.mean_image()
    segmenters: dict[str, Segmenter] = {
        METHOD_MEME: lambda frame: segment_frame(
            meme, sequence[frame], smooth_radius, keep_largest, mode
        ),
        METHOD_THRESHOLD: lambda frame: threshold_segment(
            sequence, baseline, frame, background
        ),
    }
    predictions = {
        method: {frame: segmenter(frame) for frame in sorted(truth)}
        for method, segmenter in segmenters.items()
    }
    table = compare_masks(truth, predictions, sequence_name)
    for record in table.means.itertuples(index=False):
        _LOGGER.info(
            "Method=%s mean_surface_error=%.4f mean_nematode_yield=%.4f",
            record.method,
            record.surface_error,
            record.nematode_yield,
        )
    return table


def write_comparison_csv(table: ComparisonTable, path: PathLike) -> None:
    """Write per-frame rows followed by per-method means."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
