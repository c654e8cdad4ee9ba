"""Synthetic swimming-worm sequences with exact ground truth."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .config import SCENE_SCHEMA, validate, write_manifest
from .const import (
    BACKGROUND_GRADIENT,
    BACKGROUND_PILLARS,
    CONF_BACKGROUND,
    CONF_BACKGROUND_LEVEL,
    CONF_FRAME_RATE,
    CONF_GRADIENT_HIGH,
    CONF_GRADIENT_LOW,
    CONF_N_FRAMES,
    CONF_NOISE_SIGMA,
    CONF_PILLAR_LEVEL,
    CONF_PILLAR_RADIUS,
    CONF_PILLAR_SPACING,
    CONF_SCENE_HEIGHT,
    CONF_SCENE_WIDTH,
    CONF_SEED,
    CONF_WORM_AMPLITUDE,
    CONF_WORM_FREQUENCY,
    CONF_WORM_INTENSITY,
    CONF_WORM_INTENSITY_SIGMA,
    CONF_WORM_LENGTH,
    CONF_WORM_SPEED,
    CONF_WORM_WAVELENGTH,
    CONF_WORM_WIDTH,
    COVERAGE_THRESHOLD,
    CSV_FLOAT_FORMAT,
    DEFAULT_N_POINTS,
    FRAMES_DIR,
    MANIFEST_FILE,
    SCENE_FILE,
    SCENE_PRESETS,
    SUPERSAMPLING,
    TRUTH_CENTERLINE_CSV,
    TRUTH_DIR,
    TRUTH_MOTILITY_CSV,
)
from .exceptions import ConfigError
from .imagecore import (
    BinaryMask,
    GrayImage,
    ImageSequence,
    PathLike,
    save_image,
    save_mask,
)
from .motility import MotilityReport, summary_frame, track_trajectory
from .skeleton import Skeleton, resample_skeleton, skeletons_frame

_LOGGER = logging.getLogger(__name__)

# Sampling step along x for the dense analytic centerline, in pixels.
_DENSE_STEP = 0.1


@dataclass(frozen=True, slots=True)
class WormSpec:
    """Shape, gait and appearance of the synthetic worm."""

    length: float
    width: float
    amplitude: float
    wavelength: float
    frequency: float
    speed: float
    intensity: float
    intensity_sigma: float


@dataclass(frozen=True, slots=True)
class SceneSpec:
    """A synthetic scene: frame size, background, noise, worm and timing."""

    width: int
    height: int
    background: str
    background_level: float
    gradient_low: float
    gradient_high: float
    pillar_spacing: float
    pillar_radius: float
    pillar_level: float
    noise_sigma: float
    worm: WormSpec
    frame_rate: float
    n_frames: int
    seed: int

    @classmethod
    def from_config(cls, values: Mapping[str, Any]) -> SceneSpec:
        """Build a scene from validated scene configuration values."""
        return cls(
            width=int(values[CONF_SCENE_WIDTH]),
            height=int(values[CONF_SCENE_HEIGHT]),
            background=str(values[CONF_BACKGROUND]),
            background_level=float(values[CONF_BACKGROUND_LEVEL]),
            gradient_low=float(values[CONF_GRADIENT_LOW]),
            gradient_high=float(values[CONF_GRADIENT_HIGH]),
            pillar_spacing=float(values[CONF_PILLAR_SPACING]),
            pillar_radius=float(values[CONF_PILLAR_RADIUS]),
            pillar_level=float(values[CONF_PILLAR_LEVEL]),
            noise_sigma=float(values[CONF_NOISE_SIGMA]),
            worm=WormSpec(
                length=float(values[CONF_WORM_LENGTH]),
                width=float(values[CONF_WORM_WIDTH]),
                amplitude=float(values[CONF_WORM_AMPLITUDE]),
                wavelength=float(values[CONF_WORM_WAVELENGTH]),
                frequency=float(values[CONF_WORM_FREQUENCY]),
                speed=float(values[CONF_WORM_SPEED]),
                intensity=float(values[CONF_WORM_INTENSITY]),
                intensity_sigma=float(values[CONF_WORM_INTENSITY_SIGMA]),
            ),
            frame_rate=float(values[CONF_FRAME_RATE]),
            n_frames=int(values[CONF_N_FRAMES]),
            seed=int(values[CONF_SEED]),
        )

    def to_config(self) -> dict[str, Any]:
        """Return the scene as configuration key/value pairs."""
        worm = self.worm
        return {
            CONF_SCENE_WIDTH: self.width,
            CONF_SCENE_HEIGHT: self.height,
            CONF_BACKGROUND: self.background,
            CONF_BACKGROUND_LEVEL: self.background_level,
            CONF_GRADIENT_LOW: self.gradient_low,
            CONF_GRADIENT_HIGH: self.gradient_high,
            CONF_PILLAR_SPACING: self.pillar_spacing,
            CONF_PILLAR_RADIUS: self.pillar_radius,
            CONF_PILLAR_LEVEL: self.pillar_level,
            CONF_NOISE_SIGMA: self.noise_sigma,
            CONF_WORM_LENGTH: worm.length,
            CONF_WORM_WIDTH: worm.width,
            CONF_WORM_AMPLITUDE: worm.amplitude,
            CONF_WORM_WAVELENGTH: worm.wavelength,
            CONF_WORM_FREQUENCY: worm.frequency,
            CONF_WORM_SPEED: worm.speed,
            CONF_WORM_INTENSITY: worm.intensity,
            CONF_WORM_INTENSITY_SIGMA: worm.intensity_sigma,
            CONF_FRAME_RATE: self.frame_rate,
            CONF_N_FRAMES: self.n_frames,
            CONF_SEED: self.seed,
        }

    def with_worm(self, **changes: float) -> SceneSpec:
        """Return a copy with some worm parameters replaced."""
        return replace(self, worm=replace(self.worm, **changes))


@dataclass(frozen=True, slots=True, eq=False)
class SyntheticResult:
    """A generated sequence with its ground truth."""

    spec: SceneSpec
    sequence: ImageSequence
    truth_masks: tuple[BinaryMask, ...]
    centerlines: tuple[Skeleton, ...]
    report: MotilityReport


def scene_preset(name: str, **overrides: Any) -> SceneSpec:
    """Return a preset scene ('uniform', 'gradient' or 'pillars')."""
    if name not in SCENE_PRESETS:
        raise ConfigError(f"unknown scene preset {name!r}")
    values = {**SCENE_PRESETS[name], **overrides}
    return SceneSpec.from_config(validate(SCENE_SCHEMA, values, f"preset {name}"))


def _sinusoid(
    amplitude: float, wavelength: float, x: NDArray[np.float64], phase: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return y and dy/dx of A sin(2 pi x / lambda - phase)."""
    angle = 2.0 * math.pi * x / wavelength - phase
    y = amplitude * np.sin(angle)
    slope = amplitude * 2.0 * math.pi / wavelength * np.cos(angle)
    return y, slope


def _cumulative_arc(slope: NDArray[np.float64], step: float) -> NDArray[np.float64]:
    """Return cumulative arc length of a graph sampled every step in x."""
    speed = np.sqrt(1.0 + slope * slope)
    return np.concatenate(([0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * step)))


def sinusoid_arc_length(
    amplitude: float, wavelength: float, x_span: float, phase: float = 0.0
) -> float:
    """Return the arc length of A sin(2 pi x / lambda - phase) over [0, x_span]."""
    count = max(2, math.ceil(x_span / _DENSE_STEP) + 1)
    x = np.linspace(0.0, x_span, count)
    _, slope = _sinusoid(amplitude, wavelength, x, phase)
    return float(_cumulative_arc(slope, x[1] - x[0])[-1])


def centerline(worm: WormSpec, t: float) -> NDArray[np.float64]:
    """Return the dense body-frame centerline (xi, y) of arc length L at time t.

    The head sits at xi = 0 and the bending wave travels towards the tail.
    """
    phase = 2.0 * math.pi * worm.frequency * t
    upper = worm.length + _DENSE_STEP
    x = np.arange(0.0, upper + _DENSE_STEP, _DENSE_STEP)
    _, slope = _sinusoid(worm.amplitude, worm.wavelength, x, phase)
    arc = _cumulative_arc(slope, _DENSE_STEP)
    span = float(np.interp(worm.length, arc, x))
    xi = np.linspace(0.0, span, max(2, math.ceil(span / _DENSE_STEP) + 1))
    y, _ = _sinusoid(worm.amplitude, worm.wavelength, xi, phase)
    return np.column_stack([xi, y])


def _extend_tips(curve: NDArray[np.float64], extension: float) -> NDArray[np.float64]:
    """Extend a polyline straight along its end tangents by extension."""
    head_dir = curve[0] - curve[1]
    tail_dir = curve[-1] - curve[-2]
    head_dir /= np.linalg.norm(head_dir)
    tail_dir /= np.linalg.norm(tail_dir)
    steps = np.linspace(extension, 0.0, max(2, math.ceil(extension / _DENSE_STEP) + 1))
    head = curve[0] + steps[:-1, None] * head_dir
    tail = curve[-1] + steps[::-1][1:, None] * tail_dir
    return np.vstack([head, curve, tail])


def _background(spec: SceneSpec) -> NDArray[np.float64]:
    """Render the static background."""
    if spec.background == BACKGROUND_GRADIENT:
        row = np.linspace(spec.gradient_low, spec.gradient_high, spec.width)
        return np.tile(row, (spec.height, 1))
    image = np.full((spec.height, spec.width), spec.background_level, dtype=np.float64)
    if spec.background == BACKGROUND_PILLARS:
        rows, cols = np.mgrid[0 : spec.height, 0 : spec.width]
        pitch = spec.pillar_spacing * math.sqrt(3.0) / 2.0
        offset = spec.pillar_spacing / 2.0
        for index, cy in enumerate(np.arange(offset, spec.height + pitch, pitch)):
            shift = offset * (index % 2)
            centres = np.arange(
                offset + shift, spec.width + offset, spec.pillar_spacing
            )
            for cx in centres:
                disk = (cols - cx) ** 2 + (rows - cy) ** 2 <= spec.pillar_radius**2
                image[disk] = spec.pillar_level
    return image


def _coverage(
    spec: SceneSpec, curve: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Return the fraction of each pixel inside the band of half-width W/2."""
    half = spec.worm.width / 2.0
    coverage = np.zeros((spec.height, spec.width))
    x0 = max(0, math.floor(curve[:, 0].min() - half) - 1)
    x1 = min(spec.width, math.ceil(curve[:, 0].max() + half) + 2)
    y0 = max(0, math.floor(curve[:, 1].min() - half) - 1)
    y1 = min(spec.height, math.ceil(curve[:, 1].max() + half) + 2)
    samples = SUPERSAMPLING
    offsets = (np.arange(samples) + 0.5) / samples - 0.5
    xs = (np.arange(x0, x1)[:, None] + offsets).reshape(-1)
    ys = (np.arange(y0, y1)[:, None] + offsets).reshape(-1)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    distance, _ = cKDTree(curve).query(
        np.column_stack([grid_x.reshape(-1), grid_y.reshape(-1)])
    )
    inside = (distance <= half).reshape(y1 - y0, samples, x1 - x0, samples)
    coverage[y0:y1, x0:x1] = inside.mean(axis=(1, 3))
    return coverage


def generate_sequence(spec: SceneSpec) -> SyntheticResult:
    """Render frames, truth masks, tip-to-tip centerlines and the truth report."""
    worm = spec.worm
    if spec.noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    times = np.arange(spec.n_frames) / spec.frame_rate
    curves = [centerline(worm, float(t)) for t in times]

    travel = worm.speed * float(times[-1])
    span = max(float(curve[:, 0].max()) for curve in curves)
    left = min(0.0, -travel)
    right = span + max(0.0, -travel)
    x_start = (spec.width - (right - left)) / 2.0 - left
    y_centre = spec.height / 2.0
    margin = worm.amplitude + worm.width

    placed = []
    for t, curve in zip(times, curves, strict=True):
        shifted = curve + np.array([x_start - worm.speed * t, y_centre])
        xs, ys = shifted[:, 0], shifted[:, 1]
        if (
            xs.min() - margin < 0
            or xs.max() + margin > spec.width - 1
            or ys.min() - margin < 0
            or ys.max() + margin > spec.height - 1
        ):
            raise ConfigError(
                f"worm exceeds the {spec.width}x{spec.height} frame at t={t:.3f}s"
            )
        placed.append(shifted)

    background = _background(spec)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_frames)
    frames: list[GrayImage] = []
    masks: list[BinaryMask] = []
    centerlines: list[Skeleton] = []
    for index, curve in enumerate(placed):
        rng = np.random.default_rng(seeds[index])
        coverage = _coverage(spec, curve)
        texture = rng.normal(worm.intensity, worm.intensity_sigma, background.shape)
        image = (1.0 - coverage) * background + coverage * texture
        if spec.noise_sigma > 0:
            image += rng.normal(0.0, spec.noise_sigma, image.shape)
        frames.append(GrayImage(np.clip(np.rint(image), 0, 255).astype(np.uint8)))
        masks.append(BinaryMask(coverage >= COVERAGE_THRESHOLD))
        tips = Skeleton.from_points(_extend_tips(curve.copy(), worm.width / 2.0))
        centerlines.append(resample_skeleton(tips, DEFAULT_N_POINTS))

    body_length = worm.length + worm.width
    wave_length = sinusoid_arc_length(worm.amplitude, worm.wavelength, worm.wavelength)
    report = MotilityReport.build(
        frequency=worm.frequency,
        wave_speed=worm.frequency * wave_length / body_length,
        direction=1,
        trajectory=track_trajectory(centerlines),
        amplitude=worm.amplitude,
        period=1.0 / worm.frequency if worm.frequency > 0 else math.nan,
    )
    _LOGGER.info(
        "Generated scene background=%s frames=%d size=%dx%d",
        spec.background,
        spec.n_frames,
        spec.width,
        spec.height,
    )
    return SyntheticResult(
        spec=spec,
        sequence=ImageSequence(tuple(frames), spec.frame_rate),
        truth_masks=tuple(masks),
        centerlines=tuple(centerlines),
        report=report,
    )


def write_scene_config(spec: SceneSpec, path: PathLike) -> None:
    """Write a scene as key=value lines."""
    lines = [f"{key}={value}" for key, value in spec.to_config().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_dataset(result: SyntheticResult, output_dir: PathLike) -> None:
    """Write frames, truth masks, truth tables, an annotation manifest and the scene."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(result.sequence):
        save_image(frame, output_dir / FRAMES_DIR / f"frame_{index:04d}.png")
    for index, mask in enumerate(result.truth_masks):
        save_mask(mask, output_dir / TRUTH_DIR / f"{index:04d}.png")
    skeletons_frame(dict(enumerate(result.centerlines))).to_csv(
        output_dir / TRUTH_CENTERLINE_CSV, index=False, float_format=CSV_FLOAT_FORMAT
    )
    summary_frame(result.report).to_csv(
        output_dir / TRUTH_MOTILITY_CSV, index=False, float_format=CSV_FLOAT_FORMAT
    )
    write_manifest(
        output_dir / MANIFEST_FILE,
        frame=f"{FRAMES_DIR}/frame_0000.png",
        mask=f"{TRUTH_DIR}/0000.png",
        width_px=result.spec.worm.width,
    )
    write_scene_config(result.spec, output_dir / SCENE_FILE)
    _LOGGER.info(
        "Wrote synthetic dataset dir=%s frames=%d", output_dir, len(result.sequence)
    )

