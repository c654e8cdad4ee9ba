"""Motility metrics from per-frame skeletons."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.signal.windows import hann

from .const import (
    BODY_BAND,
    CSV_FLOAT_FORMAT,
    CURVATURE_CSV,
    ENVELOPE_CSV,
    MIN_PHASE_SLOPE,
    MIN_SPECTRAL_FRAMES,
    PHASE_RESIDUAL_LIMIT,
    SUMMARY_CSV,
    TRAJECTORY_CSV,
)
from .exceptions import MotilityError
from .imagecore import PathLike
from .skeleton import Skeleton

_LOGGER = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["frame", "head_x", "head_y", "tail_x", "tail_y"]


@dataclass(frozen=True, slots=True, eq=False)
class CurvatureField:
    """Signed curvature per frame (rows) and body coordinate (columns)."""

    values: NDArray[np.float64]
    body_coord: NDArray[np.float64]
    times: NDArray[np.float64]
    frames: NDArray[np.int64]
    frame_rate: float

    def __post_init__(self) -> None:
        """Check grid consistency."""
        if self.values.shape != (len(self.times), len(self.body_coord)):
            raise MotilityError(
                f"curvature grid {self.values.shape} does not match "
                f"{len(self.times)} times x {len(self.body_coord)} positions"
            )
        if len(self.body_coord) < 2 or np.any(np.diff(self.body_coord) <= 0):
            raise MotilityError("body coordinates must be strictly increasing")

    def band(self) -> NDArray[np.bool_]:
        """Return the columns inside the body-interior band."""
        low, high = BODY_BAND
        return (self.body_coord >= low - 1e-12) & (self.body_coord <= high + 1e-12)


@dataclass(frozen=True, slots=True, eq=False)
class PostureEnvelope:
    """Skeletons of one period in their centred principal frame."""

    aligned: NDArray[np.float64]
    frames: NDArray[np.int64]
    period: float | None

    @property
    def amplitude(self) -> float:
        """Return sqrt(2) times the RMS lateral deviation, averaged over frames."""
        lateral = self.aligned[:, :, 1]
        return float(np.mean(math.sqrt(2.0) * np.sqrt(np.mean(lateral**2, axis=1))))

    @property
    def max_lateral(self) -> float:
        """Return the largest lateral excursion in the envelope."""
        return float(np.max(np.abs(self.aligned[:, :, 1])))


@dataclass(frozen=True, slots=True, eq=False)
class MotilityReport:
    """Undulation summary with the head and tail tracks."""

    frequency: float
    wave_speed: float
    wavelength: float
    direction: int
    trajectory: pd.DataFrame
    amplitude: float = math.nan
    period: float = math.nan

    @classmethod
    def build(
        cls,
        frequency: float,
        wave_speed: float,
        direction: int,
        trajectory: pd.DataFrame,
        amplitude: float = math.nan,
        period: float = math.nan,
    ) -> MotilityReport:
        """Create a report with wavelength = wave_speed / frequency."""
        if frequency < 0:
            raise MotilityError(f"frequency must be >= 0, got {frequency}")
        wavelength = (
            wave_speed / frequency
            if frequency > 0 and math.isfinite(wave_speed)
            else math.nan
        )
        return cls(
            frequency, wave_speed, wavelength, direction, trajectory, amplitude, period
        )


@dataclass(frozen=True, slots=True, eq=False)
class MotilityAnalysis:
    """Everything the motility stage produces for one sequence."""

    report: MotilityReport
    curvature: CurvatureField
    envelope: PostureEnvelope | None


def orient_skeletons(skeletons: Sequence[Skeleton]) -> list[Skeleton]:
    """Reverse skeletons whose ends match the previous frame's ends swapped."""
    oriented: list[Skeleton] = []
    for skeleton in skeletons:
        if oriented:
            previous = oriented[-1]
            same = np.linalg.norm(skeleton.head - previous.head) + np.linalg.norm(
                skeleton.tail - previous.tail
            )
            swapped = np.linalg.norm(skeleton.head - previous.tail) + np.linalg.norm(
                skeleton.tail - previous.head
            )
            if swapped < same:
                skeleton = skeleton.reversed()
        oriented.append(skeleton)
    return oriented


def tangent_angles(skeleton: Skeleton) -> NDArray[np.float64]:
    """Return the unwrapped tangent angle to the x axis, y pointing up."""
    arclen = skeleton.arclen
    dx = np.gradient(skeleton.points[:, 0], arclen)
    dy = np.gradient(skeleton.points[:, 1], arclen)
    return np.unwrap(np.arctan2(-dy, dx))


def curvature_field(
    skeletons: Sequence[Skeleton],
    frame_rate: float,
    frames: Sequence[int] | None = None,
) -> CurvatureField:
    """Return kappa(s, t) = dphi/ds on the shared arc-length grid."""
    if frame_rate <= 0:
        raise MotilityError(f"frame rate must be positive, got {frame_rate}")
    if not skeletons:
        raise MotilityError("no skeletons to measure")
    n_points = len(skeletons[0])
    rows = []
    for index, skeleton in enumerate(skeletons):
        if len(skeleton) != n_points:
            raise MotilityError(
                f"skeleton {index} has {len(skeleton)} points, expected {n_points}"
            )
        if skeleton.length <= 0:
            raise MotilityError(f"skeleton {index} has zero length")
        rows.append(np.gradient(tangent_angles(skeleton), skeleton.arclen))
    frame_numbers = np.arange(len(skeletons)) if frames is None else np.asarray(frames)
    return CurvatureField(
        values=np.array(rows),
        body_coord=np.linspace(0.0, 1.0, n_points),
        times=frame_numbers / frame_rate,
        frames=frame_numbers.astype(np.int64),
        frame_rate=float(frame_rate),
    )


def _align(points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Centre points, put the first principal axis on +x and the head at x >= 0."""
    centred = points - points.mean(axis=0)
    if not np.any(centred):
        raise MotilityError("cannot align a skeleton with zero covariance")
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axis = vt[0]
    normal = np.array([-axis[1], axis[0]])
    aligned = np.column_stack([centred @ axis, centred @ normal])
    if aligned[0, 0] < 0:
        aligned = -aligned
    return aligned


def posture_envelope(
    skeletons: Sequence[Skeleton],
    period_frames: int,
    frame_rate: float | None = None,
    frames: Sequence[int] | None = None,
) -> PostureEnvelope:
    """Align one period of skeletons by principal component analysis."""
    if period_frames < 1:
        raise MotilityError(f"period must span at least one frame, got {period_frames}")
    if len(skeletons) < period_frames:
        raise MotilityError(
            f"{len(skeletons)} skeletons cannot cover a {period_frames}-frame period"
        )
    aligned = np.stack([_align(s.points) for s in skeletons[:period_frames]])
    if frames is None:
        frames = range(period_frames)
    frame_numbers = np.asarray(frames)[:period_frames]
    return PostureEnvelope(
        aligned=aligned,
        frames=frame_numbers.astype(np.int64),
        period=period_frames / frame_rate if frame_rate else None,
    )


def _is_flat(column: NDArray[np.float64]) -> bool:
    """Return True when a time series carries no variation."""
    return bool(np.ptp(column) <= 1e-12 * max(1.0, float(np.abs(column).max())))


def beat_frequency(field: CurvatureField) -> float:
    """Return the median spectral peak of kappa over the body-interior band."""
    n_frames = len(field.times)
    if n_frames < MIN_SPECTRAL_FRAMES:
        raise MotilityError(
            f"{n_frames} frames are too few for a spectrum "
            f"(need {MIN_SPECTRAL_FRAMES})"
        )
    window = hann(n_frames, sym=False)
    frequencies = np.fft.rfftfreq(n_frames, d=1.0 / field.frame_rate)
    peaks = []
    for column in field.values[:, field.band()].T:
        if _is_flat(column):
            peaks.append(0.0)
            continue
        spectrum = np.abs(np.fft.rfft((column - column.mean()) * window))
        peaks.append(float(frequencies[1 + np.argmax(spectrum[1:])]))
    frequency = float(np.median(peaks))
    _LOGGER.debug(
        "Beat frequency=%.4f Hz from positions=%d resolution=%.4f Hz",
        frequency,
        len(peaks),
        frequencies[1],
    )
    return frequency


def phase_profile(
    field: CurvatureField, frequency: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return band positions and the unwrapped phase of kappa at frequency."""
    band = field.band()
    columns = field.values[:, band]
    kernel = np.exp(-2j * np.pi * frequency * field.times)
    components = (columns - columns.mean(axis=0)).T @ kernel
    return field.body_coord[band], np.unwrap(np.angle(components))


def wave_speed(field: CurvatureField, frequency: float) -> tuple[float, int]:
    """Return (c in body lengths per second, direction).

    c = 2 pi f / |dtheta/d(s/L)| from a line fitted to the phase of kappa at
    frequency f. Direction is +1 for head-to-tail travel, -1 otherwise.
    """
    if frequency <= 0:
        raise MotilityError(f"wave speed needs a positive frequency, got {frequency}")
    positions, phase = phase_profile(field, frequency)
    slope, intercept = np.polyfit(positions, phase, 1)
    residual = math.sqrt(
        float(np.mean((phase - (slope * positions + intercept)) ** 2))
    )
    if residual > PHASE_RESIDUAL_LIMIT or abs(slope) < MIN_PHASE_SLOPE:
        raise MotilityError(
            f"curvature is not a travelling wave (phase slope {slope:.4g} rad, "
            f"residual {residual:.3f} rad)"
        )
    speed = 2.0 * math.pi * frequency / abs(slope)
    direction = 1 if slope < 0 else -1
    _LOGGER.debug(
        "Wave speed=%.4f direction=%d slope=%.4f residual=%.4f",
        speed,
        direction,
        slope,
        residual,
    )
    return speed, direction


def track_trajectory(
    skeletons: Sequence[Skeleton], frames: Sequence[int] | None = None
) -> pd.DataFrame:
    """Return per-frame head and tail coordinates with consistent identity."""
    oriented = orient_skeletons(skeletons)
    frame_numbers = list(range(len(oriented))) if frames is None else list(frames)
    return pd.DataFrame(
        {
            "frame": frame_numbers,
            "head_x": [s.head[0] for s in oriented],
            "head_y": [s.head[1] for s in oriented],
            "tail_x": [s.tail[0] for s in oriented],
            "tail_y": [s.tail[1] for s in oriented],
        },
        columns=TRAJECTORY_COLUMNS,
    )


def _contiguous(skeletons: Mapping[int, Skeleton]) -> tuple[list[int], list[Skeleton]]:
    """Return the longest gap-free run of frames and its skeletons.

    Equal runs resolve to the earliest. Missing frames are logged.
    """
    frames = sorted(skeletons)
    if not frames:
        raise MotilityError("no skeletons to analyse")
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    runs = np.split(np.asarray(frames), breaks)
    longest = max(runs, key=len).tolist()
    missing = sorted(set(range(frames[0], frames[-1] + 1)) - set(frames))
    if missing:
        _LOGGER.warning(
            "Skeletons missing for frames %s, analysing frames %d-%d",
            missing,
            longest[0],
            longest[-1],
        )
    return longest, [skeletons[frame] for frame in longest]


def analyze_motility(
    skeletons: Mapping[int, Skeleton],
    frame_rate: float,
    period_frames: int | None = None,
) -> MotilityAnalysis:
    """Compute curvature, envelope, frequency, wave speed and trajectory.

    Frequency and wave speed fall back to NaN with a warning when the data
    cannot support them.
    """
    frames, ordered = _contiguous(skeletons)
    oriented = orient_skeletons(ordered)
    field = curvature_field(oriented, frame_rate, frames)

    frequency = math.nan
    try:
        frequency = beat_frequency(field)
    except MotilityError as err:
        _LOGGER.warning("Beat frequency unavailable: %s", err)

    speed, direction = math.nan, 0
    if frequency > 0:
        try:
            speed, direction = wave_speed(field, frequency)
        except MotilityError as err:
            _LOGGER.warning("Wave speed unavailable: %s", err)

    if period_frames is None:
        period_frames = (
            min(len(oriented), max(1, round(frame_rate / frequency)))
            if frequency > 0
            else len(oriented)
        )
    envelope: PostureEnvelope | None = None
    try:
        envelope = posture_envelope(oriented, period_frames, frame_rate, frames)
    except MotilityError as err:
        _LOGGER.warning("Posture envelope unavailable: %s", err)

    report = MotilityReport.build(
        frequency=frequency,
        wave_speed=speed,
        direction=direction,
        trajectory=track_trajectory(oriented, frames),
        amplitude=envelope.amplitude if envelope is not None else math.nan,
        period=envelope.period if envelope and envelope.period else math.nan,
    )
    _LOGGER.info(
        "Motility frequency=%.4f Hz wave_speed=%.4f L/s wavelength=%.4f L "
        "direction=%d frames=%d",
        report.frequency,
        report.wave_speed,
        report.wavelength,
        report.direction,
        len(frames),
    )
    return MotilityAnalysis(report, field, envelope)


def curvature_frame(field: CurvatureField) -> pd.DataFrame:
    """Return the curvature field as rows of frame, s_over_l, kappa."""
    n_frames, n_points = field.values.shape
    return pd.DataFrame(
        {
            "frame": np.repeat(field.frames, n_points),
            "s_over_l": np.tile(field.body_coord, n_frames),
            "kappa": field.values.reshape(-1),
        }
    )


def envelope_frame(envelope: PostureEnvelope) -> pd.DataFrame:
    """Return aligned envelope points as rows of frame, point_index, x, y."""
    n_frames, n_points, _ = envelope.aligned.shape
    return pd.DataFrame(
        {
            "frame": np.repeat(envelope.frames, n_points),
            "point_index": np.tile(np.arange(n_points), n_frames),
            "x": envelope.aligned[:, :, 0].reshape(-1),
            "y": envelope.aligned[:, :, 1].reshape(-1),
        }
    )


def summary_frame(report: MotilityReport) -> pd.DataFrame:
    """Return the one-row summary table."""
    return pd.DataFrame(
        [
            {
                "frequency": report.frequency,
                "wave_speed": report.wave_speed,
                "wavelength": report.wavelength,
                "direction": report.direction,
                "amplitude": report.amplitude,
                "period": report.period,
            }
        ]
    )


def write_motility_csvs(analysis: MotilityAnalysis, output_dir: PathLike) -> None:
    """Write curvature, trajectory, envelope and summary CSVs."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    tables = {
        CURVATURE_CSV: curvature_frame(analysis.curvature),
        TRAJECTORY_CSV: analysis.report.trajectory,
        SUMMARY_CSV: summary_frame(analysis.report),
    }
    if analysis.envelope is not None:
        tables[ENVELOPE_CSV] = envelope_frame(analysis.envelope)
    for name, table in tables.items():
        table.to_csv(output_dir / name, index=False, float_format=CSV_FLOAT_FORMAT)
    _LOGGER.info("Wrote motility tables dir=%s files=%d", output_dir, len(tables))
