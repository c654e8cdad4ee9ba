"""Test appearance learning, likelihood ratios and segmentation."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from meme.appearance import (
    AppearanceModel,
    PatchConfig,
    UserInput,
    cell_bounds,
    cell_of,
    compute_patch_size,
    extract_patch,
    extract_patches,
    learn_background_model,
    learn_model,
    learn_worm_model,
    likelihood_ratio,
    load_model,
    load_user_input,
    log_likelihood_ratio,
    save_model,
    segment_frame,
    segment_sequence,
)
from meme.evaluation import nematode_yield, surface_error
from meme.exceptions import (
    DimensionMismatchError,
    InsufficientDataError,
    ModelFormatError,
)
from meme.imagecore import BinaryMask, GrayImage, ImageSequence
from meme.mixture import GaussianMixture

from .conftest import band_scene


def _single_model(
    worm: GaussianMixture, cell: GaussianMixture, shape: tuple[int, int] = (20, 20)
) -> AppearanceModel:
    """Return a d=1 model with one background cell."""
    return AppearanceModel(
        worm=worm,
        background_cells=(cell,),
        grid_rows=1,
        grid_cols=1,
        patch=PatchConfig(1),
        n_components=worm.n_components,
        height=shape[0],
        width=shape[1],
        worm_width=4.0,
    )


def test_extract_patch_constant() -> None:
    """Test a 3x3 patch of a constant image."""
    image = GrayImage(np.full((6, 6), 77, np.uint8))

    assert extract_patch(image, 2, 3, 3).tolist() == [77.0] * 9


def test_extract_patch_single_pixel() -> None:
    """Test d=1 samples the pixel itself."""
    pixels = np.zeros((4, 4), np.uint8)
    pixels[1, 2] = 200

    assert extract_patch(GrayImage(pixels), 1, 2, 1).tolist() == [200.0]


def test_extract_patch_clamps_edges() -> None:
    """Test the corner patch replicates edge pixels."""
    pixels = np.array([[10, 20], [30, 40]], np.uint8)
    image = GrayImage(pixels)

    expected = [
        pixels[min(max(u, 0), 1), min(max(v, 0), 1)]
        for u in (-1, 0, 1)
        for v in (-1, 0, 1)
    ]
    assert extract_patch(image, 0, 0, 3).tolist() == [float(x) for x in expected]


def test_extract_patches_matches_single() -> None:
    """Test the batch extractor agrees with the single-pixel one."""
    pixels = np.arange(30, dtype=np.uint8).reshape(5, 6)
    image = GrayImage(pixels)

    batch = extract_patches(image, 3)

    assert batch.shape == (30, 9)
    assert batch[2 * 6 + 5].tolist() == extract_patch(image, 2, 5, 3).tolist()


def test_extract_patch_rejects_even_size() -> None:
    """Test even patch sizes are refused."""
    with pytest.raises(ValueError):
        extract_patch(GrayImage(np.zeros((4, 4), np.uint8)), 0, 0, 2)


@pytest.mark.parametrize(
    ("width", "size", "alpha0", "alpha1", "expected"),
    [
        (10.0, 640, 1.0, 100.0, 3),
        (10.0, 640, 1.0, 0.0, 1),
        (1.0, 1000, 1.0, 100.0, 1),
        (40.0, 100, 1.0, 100.0, 41),
    ],
)
def test_compute_patch_size(
    width: float, size: int, alpha0: float, alpha1: float, expected: int
) -> None:
    """Test the odd patch size from the linear width model."""
    assert compute_patch_size(width, size, size // 2, alpha0, alpha1) == expected


def test_compute_patch_size_is_capped() -> None:
    """Test the patch never exceeds twice the worm width plus one."""
    assert compute_patch_size(3.0, 10, 10, 1.0, 100.0) == 7


def test_cell_bounds_cover_image() -> None:
    """Test cells tile the image and the last ones absorb remainders."""
    bounds = cell_bounds(23, 31, 2, 3)

    coverage = np.zeros((23, 31), dtype=int)
    for row0, row1, col0, col1 in bounds:
        coverage[row0:row1, col0:col1] += 1
    assert np.all(coverage == 1)
    assert bounds[-1] == (11, 23, 20, 31)
    assert cell_of(22, 30, 23, 31, 2, 3) == 5
    assert cell_of(0, 0, 23, 31, 2, 3) == 0


def test_user_input_validation(band_input: UserInput) -> None:
    """Test an empty mask or a mismatched mask is refused."""
    with pytest.raises(InsufficientDataError):
        UserInput(band_input.image, BinaryMask.empty(band_input.image.shape), 8.0)
    with pytest.raises(DimensionMismatchError):
        UserInput(band_input.image, BinaryMask.empty((3, 3)), 8.0)


def test_learn_worm_model_constant_region() -> None:
    """Test both worm components sit at the constant worm level."""
    pixels = np.full((40, 40), 200, np.uint8)
    truth = np.zeros((40, 40), dtype=bool)
    truth[15:25, 5:35] = True
    pixels[truth] = 60
    user_input = UserInput(GrayImage(pixels), BinaryMask(truth), 10.0)

    mixture = learn_worm_model(user_input, PatchConfig(1), 2, 2000, seed=0)

    assert mixture.means[:, 0] == pytest.approx([60.0, 60.0], abs=2.0)


def test_learn_worm_model_noisy_region(band_input: UserInput) -> None:
    """Test a single component lands on the worm region's empirical mean."""
    worm_pixels = band_input.image.pixels[band_input.worm_mask.data]

    mixture = learn_worm_model(band_input, PatchConfig(1), 1, 10_000, seed=0)

    assert mixture.means[0, 0] == pytest.approx(worm_pixels.mean(), abs=1.0)


def test_learn_background_uniform() -> None:
    """Test every cell of a uniform background models intensity 200."""
    pixels = np.full((100, 100), 200, np.uint8)
    truth = np.zeros((100, 100), dtype=bool)
    truth[48:52, 20:80] = True
    pixels[truth] = 60
    user_input = UserInput(GrayImage(pixels), BinaryMask(truth), 4.0)

    cells = learn_background_model(user_input, PatchConfig(1), 2, (10, 10), 200)

    assert len(cells) == 100
    for cell in cells:
        assert cell.means[:, 0] == pytest.approx([200.0, 200.0], abs=2.0)


def test_learn_background_two_halves() -> None:
    """Test a 2x1 grid over a dark top and bright bottom."""
    pixels = np.full((40, 30), 220, np.uint8)
    pixels[:20] = 50
    truth = np.zeros((40, 30), dtype=bool)
    truth[18:22, 2:6] = True
    user_input = UserInput(GrayImage(pixels), BinaryMask(truth), 2.0)

    top, bottom = learn_background_model(user_input, PatchConfig(1), 1, (2, 1), 300)

    assert top.means[0, 0] == pytest.approx(50.0, abs=2.0)
    assert bottom.means[0, 0] == pytest.approx(220.0, abs=2.0)


def test_learn_background_copies_covered_cell(rng: np.random.Generator) -> None:
    """Test a cell hidden under the worm borrows its nearest neighbour."""
    pixels = np.clip(rng.normal(200.0, 5.0, (40, 40)), 0, 255)
    truth = np.zeros((40, 40), dtype=bool)
    truth[0:10, 0:10] = True
    user_input = UserInput(GrayImage(pixels), BinaryMask(truth), 2.0)

    cells = learn_background_model(user_input, PatchConfig(1), 2, (4, 4), 100)

    assert cells[0] is cells[1]


def test_learn_background_all_cells_covered() -> None:
    """Test a worm covering every cell is refused."""
    pixels = np.full((10, 10), 60, np.uint8)
    user_input = UserInput(GrayImage(pixels), BinaryMask(np.ones((10, 10))), 2.0)

    with pytest.raises(InsufficientDataError):
        learn_background_model(user_input, PatchConfig(1), 1, (2, 2), 10)


def test_likelihood_ratio_identical_models() -> None:
    """Test identical worm and background mixtures give a ratio of one."""
    mixture = GaussianMixture([0.3, 0.7], [[50.0], [90.0]], [[25.0], [100.0]])
    model = _single_model(mixture, mixture)

    assert likelihood_ratio(model, [73.0], 0) == 1.0


def test_likelihood_ratio_closed_form() -> None:
    """Test the log ratio of separated single Gaussians."""
    worm = GaussianMixture([1.0], [[60.0]], [[100.0]])
    cell = GaussianMixture([1.0], [[200.0]], [[100.0]])
    model = _single_model(worm, cell)

    assert log_likelihood_ratio(model, [60.0], 0) == pytest.approx(98.0)
    assert log_likelihood_ratio(model, [200.0], 0) == pytest.approx(-98.0)
    assert likelihood_ratio(model, [60.0], 0) > 1e40


def test_likelihood_ratio_extremes_stay_finite() -> None:
    """Test ratios beyond the float range clamp to finite positive values."""
    worm = GaussianMixture([1.0], [[60.0]], [[1.0]])
    cell = GaussianMixture([1.0], [[200.0]], [[1.0]])
    model = _single_model(worm, cell)

    high = likelihood_ratio(model, [60.0], 0)
    low = likelihood_ratio(model, [200.0], 0)

    assert log_likelihood_ratio(model, [60.0], 0) == pytest.approx(9800.0)
    assert math.isfinite(high)
    assert high == np.finfo(np.float64).max
    assert math.isfinite(low)
    assert 0.0 < low < 1.0
    assert low == np.finfo(np.float64).tiny


def test_likelihood_ratio_componentwise_mode() -> None:
    """Test the component-paired ratio on single-component mixtures."""
    worm = GaussianMixture([1.0], [[60.0]], [[100.0]])
    cell = GaussianMixture([1.0], [[200.0]], [[100.0]])
    model = _single_model(worm, cell)

    assert log_likelihood_ratio(model, [60.0], 0, "componentwise") == (
        pytest.approx(98.0)
    )
    with pytest.raises(ValueError):
        log_likelihood_ratio(model, [60.0], 0, "bogus")


def test_likelihood_ratio_bad_inputs() -> None:
    """Test a wrong feature length or cell index is refused."""
    mixture = GaussianMixture([1.0], [[0.0]], [[1.0]])
    model = _single_model(mixture, mixture)

    with pytest.raises(DimensionMismatchError):
        likelihood_ratio(model, [1.0, 2.0], 0)
    with pytest.raises(IndexError):
        likelihood_ratio(model, [1.0], 1)


def test_segment_identical_models_is_empty(rng: np.random.Generator) -> None:
    """Test a strict ratio rule labels nothing when models coincide."""
    mixture = GaussianMixture([1.0], [[100.0]], [[400.0]])
    model = _single_model(mixture, mixture)
    frame = GrayImage(np.clip(rng.normal(100.0, 20.0, (20, 20)), 0, 255))

    assert segment_frame(model, frame, smooth_radius=0).is_empty()


def test_segment_training_frame(band_input: UserInput) -> None:
    """Test the training frame is recovered with high yield."""
    model = learn_model(band_input, grid=(4, 4), seed=1)

    mask = segment_frame(model, band_input.image)

    assert nematode_yield(band_input.worm_mask, mask) >= 0.95


def test_segment_background_only_frame(
    band_input: UserInput, rng: np.random.Generator
) -> None:
    """Test a worm-free frame produces almost no worm pixels."""
    model = learn_model(band_input, grid=(4, 4), seed=1)
    empty = GrayImage(np.clip(np.rint(rng.normal(200.0, 5.0, (80, 120))), 0, 255))

    mask = segment_frame(model, empty, keep_largest=False)

    assert surface_error(BinaryMask.empty(mask.shape), mask) < 0.01


def _reordered(mixture: GaussianMixture) -> GaussianMixture:
    """Return the mixture with its components in reverse order."""
    return GaussianMixture(
        mixture.weights[::-1], mixture.means[::-1], mixture.variances[::-1]
    )


def test_segment_ignores_component_order(band_input: UserInput) -> None:
    """Test relabelling mixture components leaves the segmentation unchanged."""
    model = learn_model(band_input, grid=(4, 4), seed=1)
    reordered = AppearanceModel(
        worm=_reordered(model.worm),
        background_cells=tuple(_reordered(cell) for cell in model.background_cells),
        grid_rows=model.grid_rows,
        grid_cols=model.grid_cols,
        patch=model.patch,
        n_components=model.n_components,
        height=model.height,
        width=model.width,
        worm_width=model.worm_width,
    )

    first = segment_frame(model, band_input.image)
    second = segment_frame(reordered, band_input.image)

    assert surface_error(first, second) < 1e-3


def test_segment_follows_translation(
    band_input: UserInput, rng: np.random.Generator
) -> None:
    """Test shifting the worm shifts its segmentation on a uniform background."""
    model = learn_model(band_input, grid=(4, 4), seed=1)
    image, truth = band_scene(rng)
    shift = (5, 7)
    moved_image = GrayImage(np.roll(image.pixels, shift, axis=(0, 1)))
    moved_truth = BinaryMask(np.roll(truth.data, shift, axis=(0, 1)))

    mask = segment_frame(model, image)
    moved = segment_frame(model, moved_image)

    expected = BinaryMask(np.roll(mask.data, shift, axis=(0, 1)))
    assert surface_error(expected, moved) < 0.01
    assert nematode_yield(moved_truth, moved) >= 0.95


def test_segment_frame_dimension_mismatch(band_input: UserInput) -> None:
    """Test a frame of another size is refused."""
    model = learn_model(band_input, grid=(2, 2), seed=1)

    with pytest.raises(DimensionMismatchError):
        segment_frame(model, GrayImage(np.zeros((40, 60), np.uint8)))


def test_segment_sequence_threads_agree(
    band_input: UserInput, rng: np.random.Generator
) -> None:
    """Test outputs do not depend on the thread count."""
    model = learn_model(band_input, grid=(4, 4), seed=1)
    frames = tuple(band_scene(rng)[0] for _ in range(3))
    sequence = ImageSequence(frames)

    single = segment_sequence(model, sequence, threads=1)
    pooled = segment_sequence(model, sequence, threads=3)

    assert all(
        np.array_equal(a.data, b.data) for a, b in zip(single, pooled, strict=True)
    )


def test_learn_model_is_deterministic(band_input: UserInput) -> None:
    """Test the same seed and thread counts give identical models."""
    first = learn_model(band_input, grid=(3, 3), seed=5, threads=1)
    second = learn_model(band_input, grid=(3, 3), seed=5, threads=4)

    assert first.worm.same_parameters(second.worm)
    assert all(
        a.same_parameters(b)
        for a, b in zip(first.background_cells, second.background_cells, strict=True)
    )


def test_model_parameter_count(band_input: UserInput) -> None:
    """Test the background parameter total is 3 K cells d^2."""
    model = learn_model(band_input, grid=(2, 3), seed=0)

    assert model.background_parameter_count == 3 * 2 * 6 * model.patch.dim


def test_model_file_round_trip(band_input: UserInput, tmp_path: Path) -> None:
    """Test a saved model loads back with identical parameters."""
    model = learn_model(band_input, grid=(2, 2), seed=0)
    save_model(model, tmp_path / "model.txt")

    loaded = load_model(tmp_path / "model.txt")

    assert loaded.shape == model.shape
    assert loaded.patch == model.patch
    assert loaded.worm_width == model.worm_width
    assert loaded.worm.same_parameters(model.worm)
    assert all(
        a.same_parameters(b)
        for a, b in zip(loaded.background_cells, model.background_cells, strict=True)
    )


def test_model_file_rejects_other_version(
    band_input: UserInput, tmp_path: Path
) -> None:
    """Test an unknown format version is refused."""
    model = learn_model(band_input, grid=(2, 2), seed=0)
    path = tmp_path / "model.txt"
    save_model(model, path)
    path.write_text(
        path.read_text(encoding="utf-8").replace("meme-model 1", "meme-model 2"),
        encoding="utf-8",
    )

    with pytest.raises(ModelFormatError):
        load_model(path)


def test_model_file_truncated(band_input: UserInput, tmp_path: Path) -> None:
    """Test a truncated file is reported as malformed."""
    model = learn_model(band_input, grid=(2, 2), seed=0)
    path = tmp_path / "model.txt"
    save_model(model, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[:-2]) + "\n", encoding="utf-8")

    with pytest.raises(ModelFormatError):
        load_model(path)


def test_model_file_missing(tmp_path: Path) -> None:
    """Test a missing model file is reported."""
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "absent.txt")


def test_load_user_input(manifest_dir: Path, band_input: UserInput) -> None:
    """Test the manifest resolves files next to it."""
    loaded = load_user_input(manifest_dir / "annotation.txt")

    assert np.array_equal(loaded.image.pixels, band_input.image.pixels)
    assert np.array_equal(loaded.worm_mask.data, band_input.worm_mask.data)
    assert math.isclose(loaded.worm_width, 8.0)
