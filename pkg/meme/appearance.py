"""One-shot worm/background appearance learning and likelihood-ratio segmentation."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .config import read_manifest
from .const import (
    CONF_FRAME,
    CONF_MASK,
    CONF_WIDTH_PX,
    DEFAULT_ALPHA0,
    DEFAULT_ALPHA1,
    DEFAULT_CELL_SAMPLES,
    DEFAULT_COMPONENTS,
    DEFAULT_GRID_COLS,
    DEFAULT_GRID_ROWS,
    DEFAULT_SEED,
    DEFAULT_WORM_SAMPLES,
    MODEL_MAGIC,
    MODEL_VERSION,
    RATIO_COMPONENTWISE,
    RATIO_DENSITY,
    RATIO_MODES,
)
from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    InsufficientDataError,
    ModelFormatError,
)
from .imagecore import (
    BinaryMask,
    GrayImage,
    ImageSequence,
    PathLike,
    default_smooth_radius,
    dilate,
    largest_component,
    load_image,
    load_mask,
    morph_open_close,
)
from .mixture import (
    GaussianMixture,
    fit_em,
    log_density,
    weighted_log_components,
)

_LOGGER = logging.getLogger(__name__)

type Seed = int | np.random.SeedSequence
type CellBounds = tuple[int, int, int, int]


@dataclass(frozen=True, slots=True, eq=False)
class UserInput:
    """The annotated training triple: image, worm mask and worm width."""

    image: GrayImage
    worm_mask: BinaryMask
    worm_width: float

    def __post_init__(self) -> None:
        """Check the annotation against the image."""
        if self.worm_mask.shape != self.image.shape:
            raise DimensionMismatchError(
                f"mask {self.worm_mask.shape} does not match "
                f"image {self.image.shape}"
            )
        if self.worm_mask.is_empty():
            raise InsufficientDataError("the worm mask is empty")
        if not 1 <= self.worm_width <= min(self.image.shape):
            raise ConfigError(
                f"worm width {self.worm_width} must lie in "
                f"[1, {min(self.image.shape)}]"
            )


@dataclass(frozen=True, slots=True)
class PatchConfig:
    """Patch side length d and the linear model that produced it."""

    d: int
    alpha0: float = DEFAULT_ALPHA0
    alpha1: float = DEFAULT_ALPHA1

    def __post_init__(self) -> None:
        """Require an odd positive side length."""
        if self.d < 1 or self.d % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 1, got {self.d}")

    @property
    def dim(self) -> int:
        """Return the feature dimension d^2."""
        return self.d * self.d


@dataclass(frozen=True, slots=True, eq=False)
class AppearanceModel:
    """Learned worm mixture plus one background mixture per grid cell."""

    worm: GaussianMixture
    background_cells: tuple[GaussianMixture, ...]
    grid_rows: int
    grid_cols: int
    patch: PatchConfig
    n_components: int
    height: int
    width: int
    worm_width: float
    cells: tuple[CellBounds, ...] = field(init=False)

    def __post_init__(self) -> None:
        """Check grid size and mixture shapes."""
        cells = tuple(self.background_cells)
        if len(cells) != self.grid_rows * self.grid_cols:
            raise ModelFormatError(
                f"{len(cells)} background cells for a "
                f"{self.grid_rows}x{self.grid_cols} grid"
            )
        for mixture in (self.worm, *cells):
            if mixture.dim != self.patch.dim:
                raise ModelFormatError(
                    f"mixture dimension {mixture.dim} does not match "
                    f"patch dimension {self.patch.dim}"
                )
            if mixture.n_components != self.n_components:
                raise ModelFormatError(
                    f"mixture has {mixture.n_components} components, "
                    f"expected {self.n_components}"
                )
        object.__setattr__(self, "background_cells", cells)
        object.__setattr__(
            self,
            "cells",
            tuple(cell_bounds(self.height, self.width, self.grid_rows, self.grid_cols)),
        )

    @property
    def n_cells(self) -> int:
        """Return the number of background cells."""
        return self.grid_rows * self.grid_cols

    @property
    def shape(self) -> tuple[int, int]:
        """Return the (height, width) the model was trained on."""
        return self.height, self.width

    @property
    def background_parameter_count(self) -> int:
        """Return 3 K n_cells d^2, the background parameter total."""
        return 3 * self.n_components * self.n_cells * self.patch.dim


def _seed_sequence(seed: Seed) -> np.random.SeedSequence:
    """Return seed as a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _round_half_up(value: float) -> int:
    """Round to the nearest integer with halves going up."""
    return math.floor(value + 0.5)


def compute_patch_size(
    worm_width: float,
    height: int,
    width: int,
    alpha0: float = DEFAULT_ALPHA0,
    alpha1: float = DEFAULT_ALPHA1,
) -> int:
    """Return the odd patch side nearest to alpha1 W / max(n, m) + alpha0."""
    raw = alpha1 * worm_width / max(height, width) + alpha0
    d = 2 * _round_half_up((raw - 1.0) / 2.0) + 1
    upper = 2 * math.floor(worm_width) + 1
    return int(min(max(d, 1), upper))


def _patch_view(image: GrayImage, d: int) -> NDArray[np.uint8]:
    """Return a (height, width, d, d) window view with clamped edges."""
    half = d // 2
    padded = np.pad(image.pixels, half, mode="edge")
    return sliding_window_view(padded, (d, d))


def extract_patch(image: GrayImage, u: int, v: int, d: int) -> NDArray[np.float64]:
    """Return the row-major d x d window centred on row u, column v."""
    if d < 1 or d % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {d}")
    if not (0 <= u < image.height and 0 <= v < image.width):
        raise IndexError(f"pixel ({u}, {v}) lies outside {image.shape}")
    return _patch_view(image, d)[u, v].reshape(-1).astype(np.float64)


def extract_patches(image: GrayImage, d: int) -> NDArray[np.uint8]:
    """Return every pixel's patch as an (n m, d^2) array in raster order."""
    return _patch_view(image, d).reshape(image.height * image.width, d * d)


def cell_bounds(height: int, width: int, rows: int, cols: int) -> list[CellBounds]:
    """Return (row0, row1, col0, col1) per cell in row-major cell order.

    The last row and column of cells absorb the remainder pixels.
    """
    if not (1 <= rows <= height and 1 <= cols <= width):
        raise ConfigError(
            f"a {rows}x{cols} grid does not fit a {height}x{width} image"
        )
    row_edges = [index * (height // rows) for index in range(rows)] + [height]
    col_edges = [index * (width // cols) for index in range(cols)] + [width]
    return [
        (row_edges[row], row_edges[row + 1], col_edges[col], col_edges[col + 1])
        for row in range(rows)
        for col in range(cols)
    ]


def cell_of(u: int, v: int, height: int, width: int, rows: int, cols: int) -> int:
    """Return the index of the cell containing row u, column v."""
    row = min(u // (height // rows), rows - 1)
    col = min(v // (width // cols), cols - 1)
    return row * cols + col


def _sample_patches(
    view: NDArray[np.uint8],
    pixels: NDArray[np.intp],
    n_samples: int,
    rng: np.random.Generator,
) -> NDArray[np.float64]:
    """Draw n_samples patches at flat pixel indices, with replacement."""
    chosen = rng.choice(pixels, size=n_samples, replace=True)
    rows, cols = np.divmod(chosen, view.shape[1])
    d = view.shape[2]
    return view[rows, cols].reshape(n_samples, d * d).astype(np.float64)


def learn_worm_model(
    user_input: UserInput,
    patch: PatchConfig,
    n_components: int = DEFAULT_COMPONENTS,
    n_samples: int = DEFAULT_WORM_SAMPLES,
    seed: Seed = DEFAULT_SEED,
) -> GaussianMixture:
    """Fit F_W to patches sampled from the annotated worm region."""
    pixels = np.flatnonzero(user_input.worm_mask.data)
    if pixels.size < n_components:
        raise InsufficientDataError(
            f"worm mask has {pixels.size} pixels, need at least {n_components}"
        )
    sample_seed, em_seed = _seed_sequence(seed).spawn(2)
    count = min(n_samples, pixels.size)
    patches = _sample_patches(
        _patch_view(user_input.image, patch.d),
        pixels,
        count,
        np.random.default_rng(sample_seed),
    )
    mixture = fit_em(patches, n_components, seed=em_seed)
    _LOGGER.info(
        "Learned worm model pixels=%d samples=%d d=%d components=%d",
        pixels.size,
        count,
        patch.d,
        n_components,
    )
    return mixture


def _cell_center(bounds: CellBounds) -> tuple[float, float]:
    """Return the centre of a cell in pixel coordinates."""
    row0, row1, col0, col1 = bounds
    return (row0 + row1 - 1) / 2.0, (col0 + col1 - 1) / 2.0


def learn_background_model(
    user_input: UserInput,
    patch: PatchConfig,
    n_components: int = DEFAULT_COMPONENTS,
    grid: tuple[int, int] = (DEFAULT_GRID_ROWS, DEFAULT_GRID_COLS),
    n_samples_per_cell: int = DEFAULT_CELL_SAMPLES,
    seed: Seed = DEFAULT_SEED,
    threads: int = 1,
) -> list[GaussianMixture]:
    """Fit one mixture per grid cell from pixels away from the worm.

    Worm pixels dilated by W/2 are excluded. A cell left with fewer than
    K usable pixels borrows the model of the nearest fitted cell.
    """
    rows, cols = grid
    height, width = user_input.image.shape
    bounds = cell_bounds(height, width, rows, cols)
    radius = max(1, _round_half_up(user_input.worm_width / 2.0))
    usable = ~dilate(user_input.worm_mask, radius).data
    view = _patch_view(user_input.image, patch.d)
    cell_seeds = _seed_sequence(seed).spawn(len(bounds))

    def fit_cell(index: int) -> GaussianMixture | None:
        row0, row1, col0, col1 = bounds[index]
        rows_in, cols_in = np.nonzero(usable[row0:row1, col0:col1])
        pixels = (rows_in + row0) * width + (cols_in + col0)
        if pixels.size < n_components:
            return None
        sample_seed, em_seed = cell_seeds[index].spawn(2)
        patches = _sample_patches(
            view,
            pixels,
            min(n_samples_per_cell, pixels.size),
            np.random.default_rng(sample_seed),
        )
        return fit_em(patches, n_components, seed=em_seed)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        fitted = list(executor.map(fit_cell, range(len(bounds))))

    available = [index for index, mixture in enumerate(fitted) if mixture is not None]
    if not available:
        raise InsufficientDataError(
            "every background cell is covered by the dilated worm mask"
        )
    centers = np.array([_cell_center(cell) for cell in bounds])
    models: list[GaussianMixture] = []
    for index, mixture in enumerate(fitted):
        if mixture is None:
            distances = np.hypot(*(centers[available] - centers[index]).T)
            source = available[int(np.argmin(distances))]
            _LOGGER.info(
                "Background cell=%d covered by worm, copying model from cell=%d",
                index,
                source,
            )
            mixture = fitted[source]
            assert mixture is not None
        models.append(mixture)
    _LOGGER.info(
        "Learned background model grid=%dx%d fitted=%d copied=%d",
        rows,
        cols,
        len(available),
        len(bounds) - len(available),
    )
    return models


def learn_model(
    user_input: UserInput,
    n_components: int = DEFAULT_COMPONENTS,
    grid: tuple[int, int] = (DEFAULT_GRID_ROWS, DEFAULT_GRID_COLS),
    alpha0: float = DEFAULT_ALPHA0,
    alpha1: float = DEFAULT_ALPHA1,
    worm_samples: int = DEFAULT_WORM_SAMPLES,
    cell_samples: int = DEFAULT_CELL_SAMPLES,
    seed: Seed = DEFAULT_SEED,
    threads: int = 1,
) -> AppearanceModel:
    """Learn the full appearance model from one annotated frame."""
    height, width = user_input.image.shape
    d = compute_patch_size(user_input.worm_width, height, width, alpha0, alpha1)
    patch = PatchConfig(d, alpha0, alpha1)
    worm_seed, background_seed = _seed_sequence(seed).spawn(2)
    started = time.perf_counter()
    worm = learn_worm_model(user_input, patch, n_components, worm_samples, worm_seed)
    cells = learn_background_model(
        user_input, patch, n_components, grid, cell_samples, background_seed, threads
    )
    _LOGGER.info(
        "Appearance model ready d=%d cells=%d elapsed=%.3fs",
        d,
        len(cells),
        time.perf_counter() - started,
    )
    return AppearanceModel(
        worm=worm,
        background_cells=tuple(cells),
        grid_rows=grid[0],
        grid_cols=grid[1],
        patch=patch,
        n_components=n_components,
        height=height,
        width=width,
        worm_width=float(user_input.worm_width),
    )


def _check_mode(mode: str) -> None:
    """Reject unknown ratio modes."""
    if mode not in RATIO_MODES:
        raise ValueError(f"unknown ratio mode {mode!r}, expected one of {RATIO_MODES}")


def _log_ratio_batch(
    worm: GaussianMixture,
    cell: GaussianMixture,
    batch: NDArray[np.float64],
    mode: str,
) -> NDArray[np.float64]:
    """Return per-row log ratios of worm to cell appearance."""
    if mode == RATIO_COMPONENTWISE:
        # Components are paired by index; only meaningful for study.
        return logsumexp(
            weighted_log_components(worm, batch)
            - weighted_log_components(cell, batch),
            axis=1,
        )
    return log_density(worm, batch) - log_density(cell, batch)


def log_likelihood_ratio(
    model: AppearanceModel,
    x: ArrayLike,
    cell_index: int,
    mode: str = RATIO_DENSITY,
) -> float:
    """Return log(F_W(x) / F_B^c(x))."""
    _check_mode(mode)
    if not 0 <= cell_index < model.n_cells:
        raise IndexError(f"cell index {cell_index} outside [0, {model.n_cells})")
    vector = np.asarray(x, dtype=np.float64).reshape(-1)
    if vector.shape[0] != model.patch.dim:
        raise DimensionMismatchError(
            f"feature dimension {vector.shape[0]} does not match "
            f"model dimension {model.patch.dim}"
        )
    batch = vector.reshape(1, -1)
    cell = model.background_cells[cell_index]
    return float(_log_ratio_batch(model.worm, cell, batch, mode)[0])


def likelihood_ratio(
    model: AppearanceModel,
    x: ArrayLike,
    cell_index: int,
    mode: str = RATIO_DENSITY,
) -> float:
    """Return F_W(x) / F_B^c(x), clamped to the positive finite floats."""
    log_ratio = log_likelihood_ratio(model, x, cell_index, mode)
    with np.errstate(over="ignore", under="ignore"):
        ratio = np.exp(log_ratio)
    limits = np.finfo(np.float64)
    return float(np.clip(ratio, limits.tiny, limits.max))


def raw_segmentation(
    model: AppearanceModel, frame: GrayImage, mode: str = RATIO_DENSITY
) -> BinaryMask:
    """Label pixels whose likelihood ratio strictly exceeds one."""
    _check_mode(mode)
    if frame.shape != model.shape:
        raise DimensionMismatchError(
            f"frame {frame.shape} does not match model grid {model.shape}"
        )
    view = _patch_view(frame, model.patch.d)
    labels = np.zeros(frame.shape, dtype=bool)
    for index, (row0, row1, col0, col1) in enumerate(model.cells):
        block = view[row0:row1, col0:col1].reshape(-1, model.patch.dim)
        ratios = _log_ratio_batch(
            model.worm,
            model.background_cells[index],
            block.astype(np.float64),
            mode,
        )
        labels[row0:row1, col0:col1] = (ratios > 0.0).reshape(
            row1 - row0, col1 - col0
        )
    return BinaryMask(labels)


def segment_frame(
    model: AppearanceModel,
    frame: GrayImage,
    smooth_radius: int | None = None,
    keep_largest: bool = True,
    mode: str = RATIO_DENSITY,
) -> BinaryMask:
    """Segment one frame: ratio rule, open/close smoothing, largest region.

    smooth_radius None uses the width-derived default; 0 skips smoothing.
    """
    mask = raw_segmentation(model, frame, mode)
    if smooth_radius is None:
        smooth_radius = default_smooth_radius(model.worm_width)
    if smooth_radius > 0:
        mask = morph_open_close(mask, smooth_radius)
    if keep_largest:
        mask = largest_component(mask)
    return mask


def segment_sequence(
    model: AppearanceModel,
    sequence: ImageSequence,
    threads: int = 1,
    smooth_radius: int | None = None,
    keep_largest: bool = True,
    mode: str = RATIO_DENSITY,
) -> list[BinaryMask]:
    """Segment every frame; output order follows the sequence."""
    if sequence.shape != model.shape:
        raise DimensionMismatchError(
            f"sequence frames {sequence.shape} do not match "
            f"model grid {model.shape}"
        )

    def run(index: int) -> BinaryMask:
        started = time.perf_counter()
        mask = segment_frame(
            model, sequence[index], smooth_radius, keep_largest, mode
        )
        _LOGGER.info(
            "Segmented frame=%d worm_pixels=%d elapsed=%.3fs",
            index,
            mask.count,
            time.perf_counter() - started,
        )
        if mask.is_empty():
            _LOGGER.warning("Frame=%d produced an empty segmentation", index)
        return mask

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        return list(executor.map(run, range(len(sequence))))


def load_user_input(manifest_path: PathLike) -> UserInput:
    """Load the annotation frame, its mask and the worm width from a manifest."""
    manifest = read_manifest(manifest_path)
    return UserInput(
        image=load_image(manifest[CONF_FRAME]),
        worm_mask=load_mask(manifest[CONF_MASK]),
        worm_width=float(manifest[CONF_WIDTH_PX]),
    )


def _format_floats(values: Sequence[float] | NDArray[np.float64]) -> str:
    """Return floats in a form that parses back to the same value."""
    return " ".join(repr(float(value)) for value in values)


def _mixture_lines(name: str, mixture: GaussianMixture) -> list[str]:
    """Serialize one mixture as a header plus one line per component."""
    lines = [f"mixture {name}"]
    lines.extend(
        "component "
        + _format_floats(
            [mixture.weights[index], *mixture.means[index], *mixture.variances[index]]
        )
        for index in range(mixture.n_components)
    )
    return lines


def save_model(model: AppearanceModel, path: PathLike) -> None:
    """Write the model as versioned plain text."""
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"components {model.n_components}",
        f"patch {model.patch.d} {model.patch.alpha0!r} {model.patch.alpha1!r}",
        f"grid {model.grid_rows} {model.grid_cols}",
        f"shape {model.height} {model.width}",
        f"worm_width {model.worm_width!r}",
        *_mixture_lines("worm", model.worm),
    ]
    for index, cell in enumerate(model.background_cells):
        lines.extend(_mixture_lines(f"cell {index}", cell))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _LOGGER.info("Saved model path=%s cells=%d", path, model.n_cells)


class _ModelReader:
    """Sequential reader over the lines of a model file."""

    def __init__(self, lines: list[str], path: Path) -> None:
        """Initialize the reader."""
        self._lines = lines
        self._path = path
        self._position = 0

    def fields(self, keyword: str, count: int | None = None) -> list[str]:
        """Return the fields of the next line, which must start with keyword."""
        if self._position >= len(self._lines):
            raise ModelFormatError(f"{self._path}: expected '{keyword}', got EOF")
        parts = self._lines[self._position].split()
        self._position += 1
        if not parts or parts[0] != keyword:
            raise ModelFormatError(
                f"{self._path}:{self._position}: expected '{keyword}'"
            )
        if count is not None and len(parts) - 1 != count:
            raise ModelFormatError(
                f"{self._path}:{self._position}: '{keyword}' needs {count} values"
            )
        return parts[1:]

    def mixture(self, name: str, n_components: int, dim: int) -> GaussianMixture:
        """Read one mixture block."""
        if self.fields("mixture") != name.split():
            raise ModelFormatError(f"{self._path}: expected mixture '{name}'")
        rows = [
            [float(value) for value in self.fields("component", 1 + 2 * dim)]
            for _ in range(n_components)
        ]
        table = np.array(rows, dtype=np.float64)
        try:
            return GaussianMixture(
                table[:, 0], table[:, 1 : 1 + dim], table[:, 1 + dim :]
            )
        except ValueError as err:
            raise ModelFormatError(f"{self._path}: mixture '{name}': {err}") from err

    def finish(self) -> None:
        """Require that nothing follows the last block."""
        if self._position != len(self._lines):
            raise ModelFormatError(f"{self._path}: trailing content")


def load_model(path: PathLike) -> AppearanceModel:
    """Read a model written by save_model."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ModelFormatError(f"cannot read model {path}: {err}") from err
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].split()[:1] != [MODEL_MAGIC]:
        raise ModelFormatError(f"{path} is not a {MODEL_MAGIC} file")
    header = lines[0].split()
    if header[1:] != [str(MODEL_VERSION)]:
        raise ModelFormatError(
            f"{path}: unsupported model version {' '.join(header[1:])}"
        )
    reader = _ModelReader(lines[1:], path)
    try:
        (components,) = reader.fields("components", 1)
        d, alpha0, alpha1 = reader.fields("patch", 3)
        rows, cols = reader.fields("grid", 2)
        height, width = reader.fields("shape", 2)
        (worm_width,) = reader.fields("worm_width", 1)
        n_components = int(components)
        patch = PatchConfig(int(d), float(alpha0), float(alpha1))
        worm = reader.mixture("worm", n_components, patch.dim)
        cells = tuple(
            reader.mixture(f"cell {index}", n_components, patch.dim)
            for index in range(int(rows) * int(cols))
        )
        reader.finish()
    except ValueError as err:
        raise ModelFormatError(f"{path}: {err}") from err
    model = AppearanceModel(
        worm=worm,
        background_cells=cells,
        grid_rows=int(rows),
        grid_cols=int(cols),
        patch=patch,
        n_components=n_components,
        height=int(height),
        width=int(width),
        worm_width=float(worm_width),
    )
    _LOGGER.info("Loaded model path=%s d=%d cells=%d", path, patch.d, model.n_cells)
    return model
