"""Centerline extraction: distance field, corner endpoint and the MAP walk."""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from skimage.measure import find_contours

from .const import (
    COIL_LENGTH_FRACTION,
    CONTOUR_SMOOTHING,
    CSV_FLOAT_FORMAT,
    DEFAULT_N_POINTS,
    DEFAULT_PRIOR_FLOOR,
    DEFAULT_SKELETON_SMOOTHING,
    HEADING_WINDOW,
    MIN_CORNER_STEP,
    RIDGE_TOLERANCE,
)
from .exceptions import SkeletonError
from .imagecore import BinaryMask, PathLike

_LOGGER = logging.getLogger(__name__)

type Pixel = tuple[int, int]

# Steps (dx, dy) in row-major order over the 3x3 neighbourhood.
DIRECTIONS: tuple[Pixel, ...] = tuple(
    (dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)
)
_STEPS = np.array(DIRECTIONS, dtype=np.int64)

SKELETON_COLUMNS = ["frame", "point_index", "x", "y", "arclen"]


@dataclass(frozen=True, slots=True, eq=False)
class DistanceField:
    """Distance of each worm pixel to the nearest worm boundary pixel."""

    values: NDArray[np.float64]
    mask: BinaryMask

    @property
    def shape(self) -> tuple[int, int]:
        """Return (height, width)."""
        return self.mask.shape

    def at(self, pixel: Pixel) -> float:
        """Return D at an (x, y) pixel, zero outside the image."""
        x, y = pixel
        if 0 <= y < self.values.shape[0] and 0 <= x < self.values.shape[1]:
            return float(self.values[y, x])
        return 0.0


@dataclass(frozen=True, slots=True, eq=False)
class Skeleton:
    """Ordered (x, y) centerline points with cumulative arc length."""

    points: NDArray[np.float64]
    arclen: NDArray[np.float64]

    def __post_init__(self) -> None:
        """Validate the polyline."""
        points = np.array(self.points, dtype=np.float64)
        arclen = np.array(self.arclen, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
            raise SkeletonError(
                f"a skeleton needs at least 2 (x, y) points, got {points.shape}"
            )
        if arclen.shape != (points.shape[0],):
            raise SkeletonError("arc length must hold one value per point")
        if arclen[0] != 0 or np.any(np.diff(arclen) < 0):
            raise SkeletonError("arc length must start at 0 and never decrease")
        for name, array in (("points", points), ("arclen", arclen)):
            array.flags.writeable = False
            object.__setattr__(self, name, array)

    @classmethod
    def from_points(cls, points: ArrayLike) -> Skeleton:
        """Build a skeleton whose arc length follows its chord lengths."""
        array = np.asarray(points, dtype=np.float64)
        steps = np.hypot(*np.diff(array, axis=0).T) if len(array) > 1 else []
        return cls(array, np.concatenate(([0.0], np.cumsum(steps))))

    def __len__(self) -> int:
        """Return the number of points M."""
        return int(self.points.shape[0])

    @property
    def length(self) -> float:
        """Return the total arc length."""
        return float(self.arclen[-1])

    @property
    def head(self) -> NDArray[np.float64]:
        """Return the first point."""
        return self.points[0]

    @property
    def tail(self) -> NDArray[np.float64]:
        """Return the last point."""
        return self.points[-1]

    def reversed(self) -> Skeleton:
        """Return the same curve traversed from the other end."""
        return Skeleton(self.points[::-1], self.length - self.arclen[::-1])


def boundary_pixels(mask: BinaryMask) -> NDArray[np.bool_]:
    """Return worm pixels with a non-worm 8-neighbour or on the image edge."""
    interior = ndimage.binary_erosion(
        mask.data, structure=np.ones((3, 3), dtype=bool), border_value=0
    )
    return mask.data & ~interior


def chamfer_transform(mask: BinaryMask) -> DistanceField:
    """Return the exact Euclidean distance to the nearest boundary pixel."""
    boundary = boundary_pixels(mask)
    if not boundary.any():
        return DistanceField(np.zeros(mask.shape), mask)
    distances = ndimage.distance_transform_edt(~boundary)
    values = np.where(mask.data, distances, 0.0)
    values.flags.writeable = False
    return DistanceField(values, mask)


def estimate_worm_width(field: DistanceField) -> float:
    """Return 2 max(D) + 1, the width implied by the medial ridge."""
    return 2.0 * float(field.values.max()) + 1.0


def _closed_contour(mask: BinaryMask) -> NDArray[np.float64]:
    """Return the longest outer contour as (row, col) points about 1 px apart."""
    padded = np.pad(mask.data.astype(np.float64), 1)
    contours = find_contours(padded, 0.5)
    contour = max(contours, key=len) - 1.0
    if np.array_equal(contour[0], contour[-1]):
        contour = contour[:-1]
    closed = np.vstack([contour, contour[:1]])
    steps = np.hypot(*np.diff(closed, axis=0).T)
    cumulative = np.concatenate(([0.0], np.cumsum(steps)))
    perimeter = cumulative[-1]
    count = max(8, round(perimeter))
    targets = np.linspace(0.0, perimeter, count, endpoint=False)
    resampled = np.column_stack(
        [np.interp(targets, cumulative, closed[:, axis]) for axis in (0, 1)]
    )
    return ndimage.gaussian_filter1d(
        resampled, CONTOUR_SMOOTHING, axis=0, mode="wrap"
    )


def _corner_angles(contour: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """Return the k-cosine angle at each contour point, inf where concave."""
    before = np.roll(contour, k, axis=0) - contour
    after = np.roll(contour, -k, axis=0) - contour
    norms = np.linalg.norm(before, axis=1) * np.linalg.norm(after, axis=1)
    cosine = np.einsum("ij,ij->i", before, after) / np.maximum(norms, 1e-12)
    angles = np.arccos(np.clip(cosine, -1.0, 1.0))

    rows, cols = contour[:, 0], contour[:, 1]
    orientation = np.sign(np.sum(cols * np.roll(rows, -1) - np.roll(cols, -1) * rows))
    turn = -before[:, 1] * after[:, 0] + before[:, 0] * after[:, 1]
    convex = np.sign(turn) == orientation
    if convex.any():
        angles = np.where(convex, angles, np.inf)
    return angles


def find_endpoint(mask: BinaryMask, worm_width: float | None = None) -> Pixel:
    """Return the boundary pixel with the sharpest convex contour corner.

    The corner measure is the angle between the vectors to the contour
    points k steps before and after, k = max(3, round(W / 2)). Ties go to
    the smallest (row, column).
    """
    if mask.is_empty():
        raise SkeletonError("cannot find an endpoint on an empty mask")
    boundary = np.argwhere(boundary_pixels(mask))
    if mask.count < 3:
        row, col = boundary[0]
        return int(col), int(row)
    if worm_width is None:
        worm_width = estimate_worm_width(chamfer_transform(mask))

    contour = _closed_contour(mask)
    k = max(MIN_CORNER_STEP, round(worm_width / 2.0))
    k = max(1, min(k, (len(contour) - 1) // 2))
    angles = _corner_angles(contour, k)
    best = angles.min()
    candidates = contour[angles <= best + 1e-9]

    chosen: tuple[int, int] | None = None
    for point in candidates:
        nearest = boundary[
            np.argmin(np.sum((boundary - point) ** 2, axis=1))
        ]
        pixel = (int(nearest[0]), int(nearest[1]))
        if chosen is None or pixel < chosen:
            chosen = pixel
    assert chosen is not None
    _LOGGER.debug(
        "Endpoint row=%d col=%d angle=%.3f k=%d", chosen[0], chosen[1], best, k
    )
    return chosen[1], chosen[0]


def uniform_prior() -> NDArray[np.float64]:
    """Return the uniform distribution over the eight steps."""
    return np.full(len(DIRECTIONS), 1.0 / len(DIRECTIONS))


def floor_prior(prior: NDArray[np.float64], floor: float) -> NDArray[np.float64]:
    """Renormalize so every entry is at least floor and the sum is one."""
    if floor * len(prior) > 1.0 + 1e-12:
        raise ValueError(f"prior floor {floor} too large for {len(prior)} entries")
    result = np.asarray(prior, dtype=np.float64) / np.sum(prior)
    pinned = np.zeros(len(result), dtype=bool)
    while True:
        low = ~pinned & (result < floor)
        if not low.any():
            return result
        pinned |= low
        free = ~pinned
        remaining = 1.0 - floor * np.count_nonzero(pinned)
        result[pinned] = floor
        mass = result[free].sum()
        if mass > 0:
            result[free] *= remaining / mass
        elif free.any():
            result[free] = remaining / np.count_nonzero(free)


def _neighbour_values(values: NDArray[np.float64], pixel: Pixel) -> NDArray[np.float64]:
    """Return D at the eight neighbours, zero outside the image."""
    height, width = values.shape
    x, y = pixel
    result = np.zeros(len(DIRECTIONS))
    for index, (dx, dy) in enumerate(DIRECTIONS):
        nx, ny = x + dx, y + dy
        if 0 <= ny < height and 0 <= nx < width:
            result[index] = values[ny, nx]
    return result


def map_step(posterior: ArrayLike) -> int:
    """Return the MAP step index; exact ties go to the first in row-major order."""
    return int(np.argmax(np.asarray(posterior, dtype=np.float64)))


def ridge_start(field: DistanceField, l0: Pixel) -> Pixel:
    """Return the highest-D pixel within max(D) + 1 of l0.

    Ties go to the pixel nearest l0, then to the smaller (row, col).
    """
    values = field.values
    rows, cols = np.nonzero(values > 0)
    if rows.size == 0:
        raise SkeletonError("mask has no interior pixel")
    x, y = l0
    reach = float(values.max()) + 1.0
    distance = np.hypot(cols - x, rows - y)
    near = np.flatnonzero(distance <= reach)
    if near.size == 0:
        raise SkeletonError(f"no interior pixel within {reach:.1f} px of {l0}")
    depth = values[rows[near], cols[near]]
    top = near[depth >= depth.max()]
    pick = top[np.lexsort((cols[top], rows[top], distance[top]))[0]]
    return int(cols[pick]), int(rows[pick])


def _ahead(heading: NDArray[np.int64]) -> NDArray[np.bool_]:
    """Return which steps keep a positive component along heading."""
    if not heading.any():
        return np.ones(len(DIRECTIONS), dtype=bool)
    return (_STEPS @ heading) > 0


def _boundary_neighbours(
    field: DistanceField, pixel: Pixel, visited: set[Pixel]
) -> NDArray[np.bool_]:
    """Return which neighbours are unvisited worm pixels with D == 0."""
    height, width = field.shape
    result = np.zeros(len(DIRECTIONS), dtype=bool)
    for index, (dx, dy) in enumerate(DIRECTIONS):
        nx, ny = pixel[0] + dx, pixel[1] + dy
        if not (0 <= ny < height and 0 <= nx < width) or (nx, ny) in visited:
            continue
        result[index] = bool(field.mask.data[ny, nx]) and field.values[ny, nx] == 0
    return result


def trace_skeleton(
    field: DistanceField,
    l0: Pixel,
    prior_floor: float = DEFAULT_PRIOR_FLOOR,
) -> Skeleton:
    """Walk the distance ridge from the endpoint l0 by sequential MAP steps.

    The walk starts at the ridge pixel nearest l0 (see ridge_start). The
    likelihood of a step is D(l+v) / sum D(l+v') and the posterior is the
    likelihood times the direction prior; after each step D is zeroed at
    the visited pixel and the floored posterior becomes the next prior.
    The MAP step is taken over the admissible steps only: unvisited
    pixels with D > 0, ahead of the sum of the last few steps, and within
    RIDGE_TOLERANCE of the highest such D. When none is left the walk
    takes one last step onto the boundary (D == 0) by the prior alone.
    The walk never holds more points than the mask has pixels.
    """
    height, width = field.shape
    x, y = l0
    if not (0 <= y < height and 0 <= x < width):
        raise SkeletonError(f"start pixel {l0} lies outside {field.shape}")
    start = ridge_start(field, (int(x), int(y)))

    values = np.array(field.values, dtype=np.float64)
    max_points = field.mask.count
    prior = uniform_prior()
    current = start
    points = [current]
    visited = {current}
    values[current[1], current[0]] = 0.0
    steps: list[NDArray[np.int64]] = []
    inward = np.array([start[0] - x, start[1] - y], dtype=np.int64)

    def heading() -> NDArray[np.int64]:
        if not steps:
            return inward
        return np.sum(steps[-HEADING_WINDOW:], axis=0)

    while len(points) < max_points:
        neighbours = _neighbour_values(values, current)
        admissible = _ahead(heading()) & (neighbours > 0)
        if not admissible.any():
            break
        likelihood = neighbours / neighbours.sum()
        posterior = likelihood * prior
        ridge = admissible & (
            neighbours >= neighbours[admissible].max() - RIDGE_TOLERANCE
        )
        index = map_step(np.where(ridge, posterior, -1.0))
        step = _STEPS[index]
        current = (current[0] + int(step[0]), current[1] + int(step[1]))
        points.append(current)
        visited.add(current)
        values[current[1], current[0]] = 0.0
        prior = floor_prior(posterior, prior_floor)
        steps.append(step)

    if len(points) < max_points and field.values[current[1], current[0]] > 0:
        edge = _ahead(heading()) & _boundary_neighbours(field, current, visited)
        if edge.any():
            step = _STEPS[map_step(np.where(edge, prior, -1.0))]
            current = (current[0] + int(step[0]), current[1] + int(step[1]))
            points.append(current)

    if len(points) < 2:
        raise SkeletonError(f"walk from {l0} did not leave its start pixel")
    _LOGGER.debug(
        "Traced start=%s end=%s points=%d", start, current, len(points)
    )
    return Skeleton.from_points(points)


def resample_skeleton(skeleton: Skeleton, n_points: int) -> Skeleton:
    """Return n_points equally spaced in arc length, keeping both ends."""
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    if skeleton.length <= 0:
        raise SkeletonError("cannot resample a skeleton with zero length")
    targets = np.linspace(0.0, skeleton.length, n_points)
    points = np.column_stack(
        [
            np.interp(targets, skeleton.arclen, skeleton.points[:, axis])
            for axis in (0, 1)
        ]
    )
    return Skeleton(points, targets)


def smooth_skeleton(skeleton: Skeleton, sigma: float) -> Skeleton:
    """Gaussian-smooth the coordinates with fixed endpoints."""
    if sigma <= 0 or len(skeleton) < 3:
        return skeleton
    smoothed = ndimage.gaussian_filter1d(
        skeleton.points, sigma, axis=0, mode="nearest"
    )
    smoothed[0] = skeleton.points[0]
    smoothed[-1] = skeleton.points[-1]
    return Skeleton.from_points(smoothed)


def is_suspected_coil(skeleton: Skeleton, expected_length: float) -> bool:
    """Return True when the skeleton is far shorter than expected."""
    return skeleton.length < COIL_LENGTH_FRACTION * expected_length


def extract_skeleton(
    mask: BinaryMask,
    worm_width: float | None = None,
    n_points: int = DEFAULT_N_POINTS,
    prior_floor: float = DEFAULT_PRIOR_FLOOR,
    smooth_sigma: float = DEFAULT_SKELETON_SMOOTHING,
) -> Skeleton:
    """Run distance field, endpoint, walk, smoothing and resampling."""
    field = chamfer_transform(mask)
    l0 = find_endpoint(mask, worm_width)
    raw = trace_skeleton(field, l0, prior_floor)
    return resample_skeleton(smooth_skeleton(raw, smooth_sigma), n_points)


def skeletonize_masks(
    masks: Sequence[BinaryMask],
    worm_width: float | None = None,
    n_points: int = DEFAULT_N_POINTS,
    prior_floor: float = DEFAULT_PRIOR_FLOOR,
    smooth_sigma: float = DEFAULT_SKELETON_SMOOTHING,
    threads: int = 1,
) -> dict[int, Skeleton]:
    """Extract one skeleton per frame; frames that fail are logged and skipped."""

    def run(index: int) -> Skeleton | None:
        started = time.perf_counter()
        try:
            skeleton = extract_skeleton(
                masks[index], worm_width, n_points, prior_floor, smooth_sigma
            )
        except SkeletonError as err:
            _LOGGER.warning("No skeleton for frame=%d: %s", index, err)
            return None
        _LOGGER.info(
            "Skeleton frame=%d length=%.2f elapsed=%.3fs",
            index,
            skeleton.length,
            time.perf_counter() - started,
        )
        return skeleton

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(executor.map(run, range(len(masks))))

    skeletons: dict[int, Skeleton] = {}
    previous: Skeleton | None = None
    for index, skeleton in enumerate(results):
        if skeleton is None:
            continue
        if previous is not None and is_suspected_coil(skeleton, previous.length):
            _LOGGER.warning(
                "Frame=%d skeleton length=%.2f is under half of previous=%.2f; "
                "the worm may be coiled",
                index,
                skeleton.length,
                previous.length,
            )
        skeletons[index] = skeleton
        previous = skeleton
    return skeletons


def skeletons_frame(skeletons: Mapping[int, Skeleton]) -> pd.DataFrame:
    """Return skeletons as a long table, one row per point."""
    tables = [
        pd.DataFrame(
            {
                "frame": frame,
                "point_index": np.arange(len(skeleton)),
                "x": skeleton.points[:, 0],
                "y": skeleton.points[:, 1],
                "arclen": skeleton.arclen,
            }
        )
        for frame, skeleton in sorted(skeletons.items())
    ]
    if not tables:
        return pd.DataFrame(columns=SKELETON_COLUMNS)
    return pd.concat(tables, ignore_index=True)


def write_skeletons_csv(skeletons: Mapping[int, Skeleton], path: PathLike) -> None:
    """Write skeletons with columns frame, point_index, x, y, arclen."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    skeletons_frame(skeletons).to_csv(
        path, index=False, float_format=CSV_FLOAT_FORMAT
    )


def read_skeletons_csv(path: PathLike) -> dict[int, Skeleton]:
    """Read skeletons written by write_skeletons_csv."""
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise SkeletonError(f"cannot read skeletons from {path}: {err}") from err
    missing = [column for column in SKELETON_COLUMNS if column not in table]
    if missing:
        raise SkeletonError(f"{path} lacks columns {missing}")
    skeletons: dict[int, Skeleton] = {}
    for frame, group in table.groupby("frame", sort=True):
        ordered = group.sort_values("point_index")
        skeletons[int(frame)] = Skeleton(
            ordered[["x", "y"]].to_numpy(dtype=np.float64),
            ordered["arclen"].to_numpy(dtype=np.float64),
        )
    return skeletons
