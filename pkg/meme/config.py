"""Flat key=value configuration files and their validation schemas."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    BACKGROUND_UNIFORM,
    BACKGROUNDS,
    CONF_ALPHA0,
    CONF_ALPHA1,
    CONF_BACKGROUND,
    CONF_BACKGROUND_LEVEL,
    CONF_BASELINE_BG_THRESHOLD,
    CONF_BASELINE_HIGH,
    CONF_BASELINE_LOW,
    CONF_BASELINE_SUBTRACTION,
    CONF_CELL_SAMPLES,
    CONF_COMPONENTS,
    CONF_FRAME,
    CONF_FRAME_RATE,
    CONF_GRADIENT_HIGH,
    CONF_GRADIENT_LOW,
    CONF_GRID_COLS,
    CONF_GRID_ROWS,
    CONF_KEEP_LARGEST,
    CONF_MANIFEST,
    CONF_MASK,
    CONF_MODEL_PATH,
    CONF_N_FRAMES,
    CONF_N_POINTS,
    CONF_NOISE_SIGMA,
    CONF_OUTPUT_DIR,
    CONF_PERIOD_FRAMES,
    CONF_PILLAR_LEVEL,
    CONF_PILLAR_RADIUS,
    CONF_PILLAR_SPACING,
    CONF_PRIOR_FLOOR,
    CONF_RATIO_MODE,
    CONF_SCENE_HEIGHT,
    CONF_SCENE_WIDTH,
    CONF_SEED,
    CONF_SEQUENCE_DIR,
    CONF_SEQUENCE_NAME,
    CONF_SKELETON_SMOOTHING,
    CONF_SMOOTH_RADIUS,
    CONF_THREADS,
    CONF_TRUTH_DIR,
    CONF_WIDTH_PX,
    CONF_WORM_AMPLITUDE,
    CONF_WORM_FREQUENCY,
    CONF_WORM_INTENSITY,
    CONF_WORM_INTENSITY_SIGMA,
    CONF_WORM_LENGTH,
    CONF_WORM_SAMPLES,
    CONF_WORM_SPEED,
    CONF_WORM_WAVELENGTH,
    CONF_WORM_WIDTH,
    DEFAULT_ALPHA0,
    DEFAULT_ALPHA1,
    DEFAULT_BG_THRESHOLD,
    DEFAULT_CELL_SAMPLES,
    DEFAULT_COMPONENTS,
    DEFAULT_GRID_COLS,
    DEFAULT_GRID_ROWS,
    DEFAULT_N_POINTS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_PRIOR_FLOOR,
    DEFAULT_SEED,
    DEFAULT_SKELETON_SMOOTHING,
    DEFAULT_WORM_SAMPLES,
    MODEL_FILE,
    PATH_KEYS,
    RATIO_DENSITY,
    RATIO_MODES,
    SCENE_DEFAULTS,
)
from .exceptions import ConfigError

_LOGGER = logging.getLogger(__name__)

type PathLike = str | Path

_INTENSITY = vol.All(vol.Coerce(float), vol.Range(min=0, max=255))
_INTENSITY_INT = vol.All(vol.Coerce(int), vol.Range(min=0, max=255))
_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))


def _optional_path(value: Any) -> Path | None:
    """Coerce a path value; an empty string means unset."""
    if value is None or str(value).strip() == "":
        return None
    return Path(str(value).strip())


def _integer(value: Any) -> int:
    """Coerce an integer, including negative seeds."""
    try:
        return int(value)
    except (TypeError, ValueError) as err:
        raise vol.Invalid(f"expected an integer, got {value!r}") from err


PIPELINE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEQUENCE_DIR, default=None): _optional_path,
        vol.Optional(CONF_MANIFEST, default=None): _optional_path,
        vol.Optional(CONF_OUTPUT_DIR, default=DEFAULT_OUTPUT_DIR): _optional_path,
        vol.Optional(CONF_MODEL_PATH, default=None): _optional_path,
        vol.Optional(CONF_TRUTH_DIR, default=None): _optional_path,
        vol.Optional(CONF_SEQUENCE_NAME, default=None): vol.Any(None, str),
        vol.Optional(CONF_COMPONENTS, default=DEFAULT_COMPONENTS): _POSITIVE_INT,
        vol.Optional(CONF_GRID_ROWS, default=DEFAULT_GRID_ROWS): _POSITIVE_INT,
        vol.Optional(CONF_GRID_COLS, default=DEFAULT_GRID_COLS): _POSITIVE_INT,
        vol.Optional(CONF_ALPHA0, default=DEFAULT_ALPHA0): vol.Coerce(float),
        vol.Optional(CONF_ALPHA1, default=DEFAULT_ALPHA1): vol.Coerce(float),
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): _integer,
        vol.Optional(CONF_WORM_SAMPLES, default=DEFAULT_WORM_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_CELL_SAMPLES, default=DEFAULT_CELL_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_SMOOTH_RADIUS, default=None): vol.Any(
            None, _NON_NEGATIVE_INT
        ),
        vol.Optional(CONF_KEEP_LARGEST, default=True): vol.Boolean(),
        vol.Optional(CONF_RATIO_MODE, default=RATIO_DENSITY): vol.In(RATIO_MODES),
        vol.Optional(CONF_N_POINTS, default=DEFAULT_N_POINTS): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional(CONF_PRIOR_FLOOR, default=DEFAULT_PRIOR_FLOOR): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=0.125)
        ),
        vol.Optional(
            CONF_SKELETON_SMOOTHING, default=DEFAULT_SKELETON_SMOOTHING
        ): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_FRAME_RATE, default=None): vol.Any(None, _POSITIVE_FLOAT),
        vol.Optional(CONF_PERIOD_FRAMES, default=None): vol.Any(None, _POSITIVE_INT),
        vol.Optional(CONF_THREADS, default=1): _POSITIVE_INT,
        vol.Optional(CONF_BASELINE_LOW, default=None): vol.Any(None, _INTENSITY_INT),
        vol.Optional(CONF_BASELINE_HIGH, default=None): vol.Any(None, _INTENSITY_INT),
        vol.Optional(CONF_BASELINE_SUBTRACTION, default=True): vol.Boolean(),
        vol.Optional(
            CONF_BASELINE_BG_THRESHOLD, default=DEFAULT_BG_THRESHOLD
        ): _INTENSITY,
    }
)

MANIFEST_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_FRAME): _optional_path,
        vol.Required(CONF_MASK): _optional_path,
        vol.Required(CONF_WIDTH_PX): vol.All(vol.Coerce(float), vol.Range(min=1)),
    }
)

SCENE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_OUTPUT_DIR, default=DEFAULT_OUTPUT_DIR): _optional_path,
        vol.Optional(
            CONF_SCENE_WIDTH, default=SCENE_DEFAULTS[CONF_SCENE_WIDTH]
        ): _POSITIVE_INT,
        vol.Optional(
            CONF_SCENE_HEIGHT, default=SCENE_DEFAULTS[CONF_SCENE_HEIGHT]
        ): _POSITIVE_INT,
        vol.Optional(CONF_BACKGROUND, default=BACKGROUND_UNIFORM): vol.In(
            BACKGROUNDS
        ),
        vol.Optional(
            CONF_BACKGROUND_LEVEL, default=SCENE_DEFAULTS[CONF_BACKGROUND_LEVEL]
        ): _INTENSITY,
        vol.Optional(
            CONF_GRADIENT_LOW, default=SCENE_DEFAULTS[CONF_GRADIENT_LOW]
        ): _INTENSITY,
        vol.Optional(
            CONF_GRADIENT_HIGH, default=SCENE_DEFAULTS[CONF_GRADIENT_HIGH]
        ): _INTENSITY,
        vol.Optional(
            CONF_PILLAR_SPACING, default=SCENE_DEFAULTS[CONF_PILLAR_SPACING]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_PILLAR_RADIUS, default=SCENE_DEFAULTS[CONF_PILLAR_RADIUS]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_PILLAR_LEVEL, default=SCENE_DEFAULTS[CONF_PILLAR_LEVEL]
        ): _INTENSITY,
        vol.Optional(
            CONF_NOISE_SIGMA, default=SCENE_DEFAULTS[CONF_NOISE_SIGMA]
        ): _NON_NEGATIVE_FLOAT,
        vol.Optional(
            CONF_WORM_LENGTH, default=SCENE_DEFAULTS[CONF_WORM_LENGTH]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_WORM_WIDTH, default=SCENE_DEFAULTS[CONF_WORM_WIDTH]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_WORM_AMPLITUDE, default=SCENE_DEFAULTS[CONF_WORM_AMPLITUDE]
        ): _NON_NEGATIVE_FLOAT,
        vol.Optional(
            CONF_WORM_WAVELENGTH, default=SCENE_DEFAULTS[CONF_WORM_WAVELENGTH]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_WORM_FREQUENCY, default=SCENE_DEFAULTS[CONF_WORM_FREQUENCY]
        ): _NON_NEGATIVE_FLOAT,
        vol.Optional(
            CONF_WORM_SPEED, default=SCENE_DEFAULTS[CONF_WORM_SPEED]
        ): vol.Coerce(float),
        vol.Optional(
            CONF_WORM_INTENSITY, default=SCENE_DEFAULTS[CONF_WORM_INTENSITY]
        ): _INTENSITY,
        vol.Optional(
            CONF_WORM_INTENSITY_SIGMA,
            default=SCENE_DEFAULTS[CONF_WORM_INTENSITY_SIGMA],
        ): _NON_NEGATIVE_FLOAT,
        vol.Optional(
            CONF_FRAME_RATE, default=SCENE_DEFAULTS[CONF_FRAME_RATE]
        ): _POSITIVE_FLOAT,
        vol.Optional(
            CONF_N_FRAMES, default=SCENE_DEFAULTS[CONF_N_FRAMES]
        ): _POSITIVE_INT,
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): _integer,
    }
)


def parse_key_value_lines(lines: Iterable[str], source: str) -> dict[str, str]:
    """Parse key=value lines; '#' starts a comment and blank lines are skipped."""
    values: dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, separator, value = line.partition("=")
        key = key.strip()
        if not separator or not key:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def read_key_value_file(path: PathLike) -> dict[str, str]:
    """Read a key=value file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from err
    return parse_key_value_lines(text.splitlines(), str(path))


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    """Parse command-line key=value overrides; later items win."""
    values: dict[str, str] = {}
    for item in items:
        key, separator, value = item.partition("=")
        key = key.strip()
        if not separator or not key:
            raise ConfigError(f"override must be key=value, got {item!r}")
        values[key] = value.strip()
    return values


def validate(
    schema: vol.Schema, values: Mapping[str, Any], source: str
) -> dict[str, Any]:
    """Validate values against a schema, reporting problems as ConfigError."""
    try:
        return dict(schema(dict(values)))
    except vol.Invalid as err:
        raise ConfigError(f"{source}: {err}") from err


def _resolve(path: Path | None, base: Path) -> Path | None:
    """Resolve a relative path against base."""
    if path is None or path.is_absolute():
        return path
    return base / path


def _resolve_paths(values: dict[str, Any], base: Path) -> dict[str, Any]:
    """Resolve every path-valued entry against base."""
    return {
        key: _resolve(value, base) if key in PATH_KEYS else value
        for key, value in values.items()
    }


def read_manifest(path: PathLike) -> dict[str, Any]:
    """Read an annotation manifest; paths resolve against its directory."""
    path = Path(path)
    values = validate(MANIFEST_SCHEMA, read_key_value_file(path), str(path))
    for key in (CONF_FRAME, CONF_MASK):
        if values[key] is None:
            raise ConfigError(f"{path}: '{key}' must name a file")
    return _resolve_paths(values, path.parent)


def write_manifest(path: PathLike, frame: str, mask: str, width_px: float) -> None:
    """Write an annotation manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        f"{CONF_FRAME}={frame}\n{CONF_MASK}={mask}\n{CONF_WIDTH_PX}={width_px!r}\n",
        encoding="utf-8",
    )


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    """Validated settings for every pipeline stage."""

    sequence_dir: Path | None
    manifest: Path | None
    output_dir: Path
    model: Path
    truth_dir: Path | None
    sequence_name: str
    components: int
    grid_rows: int
    grid_cols: int
    alpha0: float
    alpha1: float
    seed: int
    worm_samples: int
    cell_samples: int
    smooth_radius: int | None
    keep_largest: bool
    ratio_mode: str
    n_points: int
    prior_floor: float
    skeleton_smoothing: float
    frame_rate: float | None
    period_frames: int | None
    threads: int
    baseline_low: int | None
    baseline_high: int | None
    baseline_subtraction: bool
    baseline_bg_threshold: float

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> PipelineConfig:
        """Build a config from validated schema output."""
        output_dir = values[CONF_OUTPUT_DIR] or Path(DEFAULT_OUTPUT_DIR)
        sequence_dir = values[CONF_SEQUENCE_DIR]
        name = values[CONF_SEQUENCE_NAME]
        if name is None:
            name = sequence_dir.name if sequence_dir is not None else "sequence"
        low = values[CONF_BASELINE_LOW]
        high = values[CONF_BASELINE_HIGH]
        if (low is None) != (high is None):
            raise ConfigError(
                f"set both '{CONF_BASELINE_LOW}' and '{CONF_BASELINE_HIGH}' "
                "or neither"
            )
        if low is not None and low > high:
            raise ConfigError(f"baseline_low {low} exceeds baseline_high {high}")
        return cls(
            sequence_dir=sequence_dir,
            manifest=values[CONF_MANIFEST],
            output_dir=output_dir,
            model=values[CONF_MODEL_PATH] or output_dir / MODEL_FILE,
            truth_dir=values[CONF_TRUTH_DIR],
            sequence_name=name,
            components=values[CONF_COMPONENTS],
            grid_rows=values[CONF_GRID_ROWS],
            grid_cols=values[CONF_GRID_COLS],
            alpha0=values[CONF_ALPHA0],
            alpha1=values[CONF_ALPHA1],
            seed=values[CONF_SEED],
            worm_samples=values[CONF_WORM_SAMPLES],
            cell_samples=values[CONF_CELL_SAMPLES],
            smooth_radius=values[CONF_SMOOTH_RADIUS],
            keep_largest=values[CONF_KEEP_LARGEST],
            ratio_mode=values[CONF_RATIO_MODE],
            n_points=values[CONF_N_POINTS],
            prior_floor=values[CONF_PRIOR_FLOOR],
            skeleton_smoothing=values[CONF_SKELETON_SMOOTHING],
            frame_rate=values[CONF_FRAME_RATE],
            period_frames=values[CONF_PERIOD_FRAMES],
            threads=values[CONF_THREADS],
            baseline_low=low,
            baseline_high=high,
            baseline_subtraction=values[CONF_BASELINE_SUBTRACTION],
            baseline_bg_threshold=values[CONF_BASELINE_BG_THRESHOLD],
        )


def merge_sources(
    config_path: PathLike | None, overrides: Mapping[str, str]
) -> tuple[dict[str, str], Path]:
    """Return file values updated by overrides, plus the path base directory."""
    values: dict[str, str] = {}
    base = Path.cwd()
    if config_path is not None:
        config_path = Path(config_path)
        values = read_key_value_file(config_path)
        base = config_path.parent
    values.update(overrides)
    return values, base


def load_pipeline_config(
    config_path: PathLike | None = None,
    overrides: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Load, override and validate a pipeline configuration.

    Relative paths resolve against the configuration file's directory.
    """
    values, base = merge_sources(config_path, overrides or {})
    source = str(config_path) if config_path is not None else "configuration"
    validated = _resolve_paths(validate(PIPELINE_SCHEMA, values, source), base)
    _LOGGER.debug("Pipeline configuration keys=%s", sorted(values))
    return PipelineConfig.from_mapping(validated)


def load_scene_config(
    config_path: PathLike | None = None,
    overrides: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """Load, override and validate a synthetic scene description."""
    values, base = merge_sources(config_path, overrides or {})
    source = str(config_path) if config_path is not None else "scene"
    return _resolve_paths(validate(SCENE_SCHEMA, values, source), base)
