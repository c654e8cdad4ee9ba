"""Constants for the MEME nematode analysis pipeline."""

from __future__ import annotations

from typing import Final

# Package identity used in file headers and logger names
DOMAIN: Final = "meme"

# Pipeline stages runnable from the command line
SUBCOMMAND_LEARN = "learn"
SUBCOMMAND_SEGMENT = "segment"
SUBCOMMAND_SKELETON = "skeleton"
SUBCOMMAND_MOTILITY = "motility"
SUBCOMMAND_EVAL = "eval"
SUBCOMMAND_SYNTH = "synth"
SUBCOMMAND_ALL = "all"
SUBCOMMANDS = (
    SUBCOMMAND_LEARN,
    SUBCOMMAND_SEGMENT,
    SUBCOMMAND_SKELETON,
    SUBCOMMAND_MOTILITY,
    SUBCOMMAND_EVAL,
    SUBCOMMAND_SYNTH,
    SUBCOMMAND_ALL,
)

# Pipeline configuration keys
CONF_SEQUENCE_DIR = "sequence_dir"
CONF_MANIFEST = "manifest"
CONF_OUTPUT_DIR = "output_dir"
CONF_MODEL_PATH = "model"
CONF_TRUTH_DIR = "truth_dir"
CONF_COMPONENTS = "components"
CONF_GRID_ROWS = "grid_rows"
CONF_GRID_COLS = "grid_cols"
CONF_ALPHA0 = "alpha0"
CONF_ALPHA1 = "alpha1"
CONF_SEED = "seed"
CONF_WORM_SAMPLES = "worm_samples"
CONF_CELL_SAMPLES = "cell_samples"
CONF_SMOOTH_RADIUS = "smooth_radius"
CONF_KEEP_LARGEST = "keep_largest"
CONF_RATIO_MODE = "ratio_mode"
CONF_N_POINTS = "n_points"
CONF_PRIOR_FLOOR = "prior_floor"
CONF_SKELETON_SMOOTHING = "skeleton_smoothing"
CONF_FRAME_RATE = "frame_rate"
CONF_PERIOD_FRAMES = "period_frames"
CONF_THREADS = "threads"
CONF_BASELINE_LOW = "baseline_low"
CONF_BASELINE_HIGH = "baseline_high"
CONF_BASELINE_SUBTRACTION = "baseline_subtraction"
CONF_BASELINE_BG_THRESHOLD = "baseline_bg_threshold"
CONF_SEQUENCE_NAME = "sequence_name"

# Annotation manifest keys
CONF_FRAME = "frame"
CONF_MASK = "mask"
CONF_WIDTH_PX = "width_px"

# Scene keys
CONF_SCENE_WIDTH = "scene_width"
CONF_SCENE_HEIGHT = "scene_height"
CONF_BACKGROUND = "background"
CONF_BACKGROUND_LEVEL = "background_level"
CONF_GRADIENT_LOW = "gradient_low"
CONF_GRADIENT_HIGH = "gradient_high"
CONF_PILLAR_SPACING = "pillar_spacing"
CONF_PILLAR_RADIUS = "pillar_radius"
CONF_PILLAR_LEVEL = "pillar_level"
CONF_NOISE_SIGMA = "noise_sigma"
CONF_WORM_LENGTH = "worm_length"
CONF_WORM_WIDTH = "worm_width"
CONF_WORM_AMPLITUDE = "worm_amplitude"
CONF_WORM_WAVELENGTH = "worm_wavelength"
CONF_WORM_FREQUENCY = "worm_frequency"
CONF_WORM_SPEED = "worm_speed"
CONF_WORM_INTENSITY = "worm_intensity"
CONF_WORM_INTENSITY_SIGMA = "worm_intensity_sigma"
CONF_N_FRAMES = "n_frames"

BACKGROUND_UNIFORM = "uniform"
BACKGROUND_GRADIENT = "gradient"
BACKGROUND_PILLARS = "pillars"
BACKGROUNDS = (BACKGROUND_UNIFORM, BACKGROUND_GRADIENT, BACKGROUND_PILLARS)

# Image formats
IMAGE_SUFFIXES = (".png", ".pgm")
MASK_ON = 255
MASK_THRESHOLD = 127

# Morphology
DEFAULT_CONNECTIVITY = 8
SMOOTH_RADIUS_WIDTH_FRACTION = 0.1

# Gaussian mixtures
DEFAULT_COMPONENTS = 2  # K
VARIANCE_FLOOR = 1.0  # intensity^2
DEFAULT_MAX_ITER = 100
DEFAULT_TOLERANCE = 1e-4  # mean log-likelihood per sample
WEIGHT_SUM_TOLERANCE = 1e-9

# Appearance learning
DEFAULT_ALPHA0 = 1.0
DEFAULT_ALPHA1 = 100.0
DEFAULT_GRID_ROWS = 10
DEFAULT_GRID_COLS = 10
DEFAULT_WORM_SAMPLES = 2000
DEFAULT_CELL_SAMPLES = 500
DEFAULT_SEED = 0
RATIO_DENSITY = "density"
RATIO_COMPONENTWISE = "componentwise"
RATIO_MODES = (RATIO_DENSITY, RATIO_COMPONENTWISE)

# Model file
MODEL_MAGIC = "meme-model"
MODEL_VERSION = 1

# Skeleton tracing
DEFAULT_PRIOR_FLOOR = 1e-3
RIDGE_TOLERANCE = 0.5  # D below the best admissible neighbour
DEFAULT_N_POINTS = 49
DEFAULT_SKELETON_SMOOTHING = 1.5  # pixels along the polyline
MIN_CORNER_STEP = 3
CONTOUR_SMOOTHING = 1.0
COIL_LENGTH_FRACTION = 0.5
HEADING_WINDOW = 3  # steps summed into the walker heading

# Motility
BODY_BAND = (0.2, 0.8)
MIN_SPECTRAL_FRAMES = 16
PHASE_RESIDUAL_LIMIT = 0.5  # radians RMS
MIN_PHASE_SLOPE = 1e-6

# Baseline thresholding
MIN_SUBTRACTION_FRAMES = 10
DEFAULT_BG_THRESHOLD = 30
THRESHOLD_SWEEP_STEP = 5

# Output file names
MODEL_FILE = "model.txt"
MASKS_DIR = "masks"
FRAMES_DIR = "frames"
TRUTH_DIR = "truth"
SKELETON_CSV = "skeletons.csv"
CURVATURE_CSV = "curvature.csv"
TRAJECTORY_CSV = "trajectory.csv"
ENVELOPE_CSV = "envelope.csv"
SUMMARY_CSV = "summary.csv"
COMPARISON_CSV = "comparison.csv"
TRUTH_CENTERLINE_CSV = "truth_centerlines.csv"
TRUTH_MOTILITY_CSV = "truth_motility.csv"
MANIFEST_FILE = "annotation.txt"
SCENE_FILE = "scene.cfg"
CSV_FLOAT_FORMAT = "%.9g"

# Default run directory and the configuration keys that hold paths
DEFAULT_OUTPUT_DIR = "meme-output"
PATH_KEYS = frozenset(
    {
        CONF_SEQUENCE_DIR,
        CONF_MANIFEST,
        CONF_OUTPUT_DIR,
        CONF_MODEL_PATH,
        CONF_TRUTH_DIR,
        CONF_FRAME,
        CONF_MASK,
    }
)

# Synthetic scenes
SCENE_DEFAULTS: Final[dict[str, float]] = {
    CONF_SCENE_WIDTH: 640,
    CONF_SCENE_HEIGHT: 480,
    CONF_BACKGROUND_LEVEL: 200,
    CONF_GRADIENT_LOW: 120,
    CONF_GRADIENT_HIGH: 230,
    CONF_PILLAR_SPACING: 110,
    CONF_PILLAR_RADIUS: 30,
    CONF_PILLAR_LEVEL: 100,
    CONF_NOISE_SIGMA: 8,
    CONF_WORM_LENGTH: 200,
    CONF_WORM_WIDTH: 12,
    CONF_WORM_AMPLITUDE: 15,
    CONF_WORM_WAVELENGTH: 120,
    CONF_WORM_FREQUENCY: 1.5,
    CONF_WORM_SPEED: 20,
    CONF_WORM_INTENSITY: 60,
    CONF_WORM_INTENSITY_SIGMA: 5,
    CONF_FRAME_RATE: 30,
    CONF_N_FRAMES: 60,
}

# Per-background overrides applied on top of SCENE_DEFAULTS
SCENE_PRESETS: Final[dict[str, dict[str, float | str]]] = {
    BACKGROUND_UNIFORM: {CONF_BACKGROUND: BACKGROUND_UNIFORM},
    BACKGROUND_GRADIENT: {CONF_BACKGROUND: BACKGROUND_GRADIENT},
    # Pillars share the worm's intensity range.
    BACKGROUND_PILLARS: {
        CONF_BACKGROUND: BACKGROUND_PILLARS,
        CONF_WORM_INTENSITY: 90,
        CONF_WORM_INTENSITY_SIGMA: 20,
    },
}
SUPERSAMPLING = 4
COVERAGE_THRESHOLD = 0.5
