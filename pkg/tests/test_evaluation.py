"""Test the segmentation metrics, the threshold baseline and comparisons."""

from __future__ import annotations

import functools
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from meme.appearance import UserInput, learn_model, segment_frame
from meme.const import DEFAULT_N_POINTS, MIN_SUBTRACTION_FRAMES
from meme.evaluation import (
    METHOD_MEME,
    METHOD_THRESHOLD,
    ThresholdConfig,
    compare_masks,
    compare_methods,
    evaluate,
    load_truth_masks,
    nematode_yield,
    surface_error,
    threshold_segment,
    tune_thresholds,
    write_comparison_csv,
)
from meme.exceptions import (
    ConfigError,
    DimensionMismatchError,
    InsufficientDataError,
)
from meme.imagecore import BinaryMask, GrayImage, ImageSequence, save_mask
from meme.skeleton import extract_skeleton
from meme.synthgen import generate_sequence, scene_preset

from .conftest import band_scene

SMALL_ACCEPTANCE_SCENE = {
    "scene_width": 320,
    "scene_height": 240,
    "worm_length": 150,
    "worm_width": 12,
    "n_frames": 6,
}


def _square(size: int, rows: slice, cols: slice) -> BinaryMask:
    """Return a size x size mask with one filled rectangle."""
    data = np.zeros((size, size), dtype=bool)
    data[rows, cols] = True
    return BinaryMask(data)


def _static_sequence(n_frames: int) -> tuple[ImageSequence, BinaryMask]:
    """Return a sequence with a worm band that never moves."""
    truth = np.zeros((40, 60), dtype=bool)
    truth[18:23, 10:50] = True
    pixels = np.where(truth, 60, 200).astype(np.uint8)
    frames = tuple(GrayImage(pixels) for _ in range(n_frames))
    return ImageSequence(frames, 10.0), BinaryMask(truth)


@functools.cache
def _acceptance(background: str, **overrides: float) -> pd.DataFrame:
    """Learn on frame 0 of a scene, then score both methods on every frame."""
    result = generate_sequence(scene_preset(background, **overrides))
    width = result.spec.worm.width
    user_input = UserInput(result.sequence[0], result.truth_masks[0], width)
    model = learn_model(user_input, threads=2)
    baseline = tune_thresholds(result.sequence[0], result.truth_masks[0])
    truth = dict(enumerate(result.truth_masks))

    table = compare_methods(result.sequence, truth, model, baseline, background)

    return table.means.set_index("method")


def test_surface_error_example() -> None:
    """Test seven disagreeing pixels out of 100."""
    truth = _square(10, slice(0, 5), slice(0, 5))
    data = truth.data.copy()
    data[9, 0:7] = True

    assert surface_error(truth, BinaryMask(data)) == pytest.approx(0.07)


def test_nematode_yield_example() -> None:
    """Test a segmentation missing 20 of 100 worm pixels."""
    truth = _square(20, slice(0, 10), slice(0, 10))
    data = truth.data.copy()
    data[0:2, :] = False

    assert nematode_yield(truth, BinaryMask(data)) == pytest.approx(0.8)


def test_metrics_reject_bad_input() -> None:
    """Test empty truth and mismatched shapes are refused."""
    empty = BinaryMask.empty((5, 5))
    with pytest.raises(InsufficientDataError):
        nematode_yield(empty, empty)
    with pytest.raises(DimensionMismatchError):
        surface_error(empty, BinaryMask.empty((5, 6)))


def test_metrics_against_counting(rng: np.random.Generator) -> None:
    """Test both metrics against pixel counting on random masks."""
    for _ in range(100):
        shape = tuple(rng.integers(1, 30, size=2))
        truth = rng.random(shape) < 0.3
        truth.flat[0] = True
        segmentation = rng.random(shape) < 0.5

        result = evaluate(BinaryMask(truth), BinaryMask(segmentation), 3)

        disagree = sum(
            truth[i, j] != segmentation[i, j]
            for i in range(shape[0])
            for j in range(shape[1])
        )
        found = sum(
            segmentation[i, j]
            for i in range(shape[0])
            for j in range(shape[1])
            if truth[i, j]
        )
        assert result.frame_index == 3
        assert result.surface_error == pytest.approx(disagree / truth.size)
        assert result.nematode_yield == pytest.approx(found / truth.sum())


def test_surface_error_symmetry(rng: np.random.Generator) -> None:
    """Test swapping the masks or complementing both changes nothing."""
    truth = BinaryMask(rng.random((12, 17)) < 0.4)
    segmentation = BinaryMask(rng.random((12, 17)) < 0.4)

    error = surface_error(truth, segmentation)

    assert surface_error(segmentation, truth) == error
    inverse = (BinaryMask(~truth.data), BinaryMask(~segmentation.data))
    assert surface_error(*inverse) == error


def test_threshold_config_validation() -> None:
    """Test an inverted window is refused."""
    with pytest.raises(ConfigError):
        ThresholdConfig(120, 100)
    with pytest.raises(ConfigError):
        ThresholdConfig(0, 256)


def test_threshold_segment_window() -> None:
    """Test the intensity window alone finds a dark worm."""
    sequence, truth = _static_sequence(3)

    config = ThresholdConfig(0, 100, smooth_radius=0)

    mask = threshold_segment(sequence, config, 0)

    assert np.array_equal(mask.data, truth.data)


def test_threshold_segment_short_sequence_skips_subtraction() -> None:
    """Test subtraction is ignored for fewer than ten frames."""
    sequence, truth = _static_sequence(3)
    config = ThresholdConfig(
        0, 100, use_background_subtraction=True, smooth_radius=0
    )

    assert np.array_equal(threshold_segment(sequence, config, 2).data, truth.data)


def test_threshold_segment_subtraction_removes_static_worm() -> None:
    """Test a worm that never moves disappears into the temporal mean."""
    sequence, _ = _static_sequence(12)

    plain = ThresholdConfig(
        0, 100, use_background_subtraction=False, smooth_radius=0
    )

    with_subtraction = threshold_segment(sequence, ThresholdConfig(0, 100), 0)
    without = threshold_segment(sequence, plain, 0)

    assert with_subtraction.is_empty()
    assert without.count == 5 * 40


def test_threshold_segment_frame_range() -> None:
    """Test a frame index outside the sequence is refused."""
    sequence, _ = _static_sequence(3)

    with pytest.raises(IndexError):
        threshold_segment(sequence, ThresholdConfig(0, 100), 3)


def test_tune_thresholds_band(rng: np.random.Generator) -> None:
    """Test tuning brackets a dark worm and excludes the bright background."""
    image, truth = band_scene(rng)

    config = tune_thresholds(image, truth, use_background_subtraction=False)

    assert config.low == 0
    assert 75 <= config.high <= 185
    assert not config.use_background_subtraction
    segmentation = threshold_segment(ImageSequence((image,)), config, 0)
    assert nematode_yield(truth, segmentation) > 0.95


def test_tune_thresholds_rejects_bad_truth(rng: np.random.Generator) -> None:
    """Test tuning needs a matching, non-empty annotation."""
    image, _ = band_scene(rng)

    with pytest.raises(InsufficientDataError):
        tune_thresholds(image, BinaryMask.empty(image.shape))
    with pytest.raises(DimensionMismatchError):
        tune_thresholds(image, BinaryMask.empty((3, 3)))


def test_compare_masks_perfect_prediction() -> None:
    """Test a method returning the truth scores zero error and full yield."""
    truth = {
        0: _square(10, slice(2, 5), slice(1, 9)),
        4: _square(10, slice(3, 6), slice(2, 9)),
    }
    empty = {frame: BinaryMask.empty((10, 10)) for frame in truth}

    table = compare_masks(truth, {"oracle": truth, "nothing": empty}, "demo")

    means = table.means.set_index("method")
    assert means.loc["oracle", "surface_error"] == 0.0
    assert means.loc["oracle", "nematode_yield"] == 1.0
    assert means.loc["nothing", "nematode_yield"] == 0.0
    assert table.rows["frame"].tolist() == [0, 4, 0, 4]
    assert set(table.rows["sequence"]) == {"demo"}


def test_compare_methods_rejects_frames_outside(
    band_input: UserInput,
) -> None:
    """Test truth frames beyond the sequence are a configuration error."""
    model = learn_model(band_input)
    sequence = ImageSequence((band_input.image,))

    with pytest.raises(ConfigError):
        compare_methods(
            sequence, {5: band_input.worm_mask}, model, ThresholdConfig(0, 100)
        )


def test_load_truth_masks(tmp_path: Path) -> None:
    """Test masks are keyed by the frame index in their file name."""
    mask = _square(8, slice(1, 4), slice(1, 6))
    save_mask(mask, tmp_path / "0002.png")
    save_mask(mask, tmp_path / "overview.png")
    (tmp_path / "readme.txt").write_text("x", encoding="utf-8")

    masks = load_truth_masks(tmp_path)

    assert list(masks) == [2]
    assert np.array_equal(masks[2].data, mask.data)
    with pytest.raises(ConfigError):
        load_truth_masks(tmp_path / "missing")


def test_write_comparison_csv(tmp_path: Path) -> None:
    """Test per-frame rows come first and per-method means last."""
    truth = {1: _square(6, slice(1, 3), slice(1, 5))}
    table = compare_masks(truth, {METHOD_MEME: truth, METHOD_THRESHOLD: truth})
    path = tmp_path / "out" / "comparison.csv"

    write_comparison_csv(table, path)

    written = pd.read_csv(path, dtype={"frame": str})
    assert list(written.columns) == [
        "sequence",
        "frame",
        "method",
        "surface_error",
        "nematode_yield",
    ]
    assert written["frame"].tolist() == ["1", "1", "mean", "mean"]


@pytest.mark.parametrize("background", ["uniform", "gradient"])
def test_small_scene_plain_backgrounds(background: str) -> None:
    """Test the learned model segments a small generated worm almost perfectly."""
    means = _acceptance(background, **SMALL_ACCEPTANCE_SCENE)

    assert means.loc[METHOD_MEME, "surface_error"] < 0.01
    assert means.loc[METHOD_MEME, "nematode_yield"] > 0.8


def test_small_scene_pillars() -> None:
    """Test the learned model beats the tuned window among pillars."""
    means = _acceptance("pillars", **SMALL_ACCEPTANCE_SCENE)

    assert means.loc[METHOD_MEME, "nematode_yield"] > 0.7
    assert (
        means.loc[METHOD_MEME, "surface_error"]
        <= means.loc[METHOD_THRESHOLD, "surface_error"]
    )


def test_pillars_preset_enables_subtraction() -> None:
    """Test the pillars scene is long enough for background subtraction."""
    scene = scene_preset("pillars")

    assert scene.n_frames == 60
    assert scene.n_frames >= MIN_SUBTRACTION_FRAMES


def test_threshold_subtraction_removes_pillars() -> None:
    """Test subtraction drops static pillars that share the worm's window."""
    result = generate_sequence(
        scene_preset("pillars", **{**SMALL_ACCEPTANCE_SCENE, "n_frames": 12})
    )
    truth = result.truth_masks[0]
    with_subtraction = ThresholdConfig(0, 130, use_background_subtraction=True)
    plain = ThresholdConfig(0, 130, use_background_subtraction=False)

    subtracted = threshold_segment(result.sequence, with_subtraction, 0)
    unsubtracted = threshold_segment(result.sequence, plain, 0)

    def false_positives(mask: BinaryMask) -> int:
        return int(np.count_nonzero(mask.data & ~truth.data))

    assert false_positives(unsubtracted) > 1000
    assert false_positives(subtracted) < false_positives(unsubtracted) / 10
    assert surface_error(truth, subtracted) < surface_error(truth, unsubtracted)


@pytest.mark.slow
@pytest.mark.parametrize("background", ["uniform", "gradient", "pillars"])
def test_acceptance_surface_error(background: str) -> None:
    """Test the mean surface error on full-size scenes of every background."""
    means = _acceptance(background)

    assert means.loc[METHOD_MEME, "surface_error"] < 0.10


@pytest.mark.slow
def test_acceptance_uniform() -> None:
    """Test the full-size uniform scene is segmented almost perfectly."""
    means = _acceptance("uniform")

    assert means.loc[METHOD_MEME, "surface_error"] < 0.01
    assert means.loc[METHOD_MEME, "nematode_yield"] > 0.8


@pytest.mark.slow
def test_acceptance_pillars_yield_gain() -> None:
    """Test the learned model finds more worm than the window among pillars."""
    means = _acceptance("pillars")

    gain = (
        means.loc[METHOD_MEME, "nematode_yield"]
        - means.loc[METHOD_THRESHOLD, "nematode_yield"]
    )
    assert gain > 0.10


@pytest.mark.slow
def test_acceptance_frame_throughput() -> None:
    """Test one 640x480 frame is segmented and skeletonized within two seconds."""
    result = generate_sequence(scene_preset("uniform", n_frames=2))
    width = result.spec.worm.width
    user_input = UserInput(result.sequence[0], result.truth_masks[0], width)
    model = learn_model(user_input)

    start = time.perf_counter()
    mask = segment_frame(model, result.sequence[1])
    skeleton = extract_skeleton(mask, width)
    elapsed = time.perf_counter() - start

    assert elapsed < 2.0
    assert len(skeleton) == DEFAULT_N_POINTS
