"""Image and mask containers, sequence I/O and binary-mask post-processing."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError
from scipy import ndimage
from skimage.morphology import disk

from .const import (
    DEFAULT_CONNECTIVITY,
    IMAGE_SUFFIXES,
    MASK_ON,
    MASK_THRESHOLD,
    SMOOTH_RADIUS_WIDTH_FRACTION,
)
from .exceptions import DimensionMismatchError, ImageFormatError

_LOGGER = logging.getLogger(__name__)

type PathLike = str | Path

# Pillow modes that carry 8-bit samples; anything else is rejected.
_EIGHT_BIT_MODES = frozenset({"1", "L", "LA", "P", "RGB", "RGBA", "CMYK"})


def _frozen(array: NDArray) -> NDArray:
    """Return the array with writes disabled."""
    array.flags.writeable = False
    return array


@dataclass(frozen=True, slots=True, eq=False)
class GrayImage:
    """An n x m 8-bit intensity raster, stored row-major as (height, width)."""

    pixels: NDArray[np.uint8]

    def __post_init__(self) -> None:
        """Validate shape and intensity range."""
        array = np.asarray(self.pixels)
        if array.ndim != 2 or array.size == 0:
            raise DimensionMismatchError(
                f"image must be a non-empty 2-D raster, got shape {array.shape}"
            )
        if array.dtype != np.uint8:
            if array.min() < 0 or array.max() > 255:
                raise ImageFormatError("image intensities must lie in [0, 255]")
            array = np.rint(array).astype(np.uint8)
        else:
            array = array.copy()
        object.__setattr__(self, "pixels", _frozen(array))

    @property
    def height(self) -> int:
        """Return the number of rows (n)."""
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        """Return the number of columns (m)."""
        return int(self.pixels.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        """Return (height, width)."""
        return self.height, self.width


@dataclass(frozen=True, slots=True, eq=False)
class BinaryMask:
    """A boolean raster; True marks worm pixels."""

    data: NDArray[np.bool_]

    def __post_init__(self) -> None:
        """Coerce to a read-only boolean raster."""
        array = np.asarray(self.data)
        if array.ndim != 2:
            raise DimensionMismatchError(
                f"mask must be a 2-D raster, got shape {array.shape}"
            )
        object.__setattr__(self, "data", _frozen(array.astype(bool, copy=True)))

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> BinaryMask:
        """Return an all-false mask of the given (height, width)."""
        return cls(np.zeros(shape, dtype=bool))

    @property
    def height(self) -> int:
        """Return the number of rows."""
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        """Return the number of columns."""
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        """Return (height, width)."""
        return self.height, self.width

    @property
    def count(self) -> int:
        """Return the number of true pixels."""
        return int(np.count_nonzero(self.data))

    def is_empty(self) -> bool:
        """Return True when no pixel is set."""
        return not self.data.any()


@dataclass(frozen=True, slots=True, eq=False)
class ImageSequence:
    """Time-ordered frames sharing one size."""

    frames: tuple[GrayImage, ...]
    frame_rate: float | None = None

    def __post_init__(self) -> None:
        """Check the sequence is non-empty and uniformly sized."""
        frames = tuple(self.frames)
        if not frames:
            raise ImageFormatError("an image sequence needs at least one frame")
        shape = frames[0].shape
        for index, frame in enumerate(frames):
            if frame.shape != shape:
                raise DimensionMismatchError(
                    f"frame {index} is {frame.shape}, expected {shape}"
                )
        if self.frame_rate is not None and self.frame_rate <= 0:
            raise ImageFormatError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        """Return the number of frames (N)."""
        return len(self.frames)

    def __iter__(self) -> Iterator[GrayImage]:
        """Iterate frames in time order."""
        return iter(self.frames)

    def __getitem__(self, index: int) -> GrayImage:
        """Return one frame."""
        return self.frames[index]

    @property
    def shape(self) -> tuple[int, int]:
        """Return the common (height, width)."""
        return self.frames[0].shape

    def mean_image(self) -> NDArray[np.float64]:
        """Return the per-pixel temporal mean intensity."""
        total = np.zeros(self.shape, dtype=np.float64)
        for frame in self.frames:
            total += frame.pixels
        return total / len(self.frames)


def load_image(path: PathLike) -> GrayImage:
    """Read one PNG or PGM file, converting colour to Rec.601 luminance."""
    path = Path(path)
    try:
        with Image.open(path) as handle:
            if handle.mode not in _EIGHT_BIT_MODES:
                raise ImageFormatError(
                    f"{path} is not an 8-bit image (mode {handle.mode})"
                )
            gray = handle.convert("L") if handle.mode != "L" else handle.copy()
    except (OSError, UnidentifiedImageError) as err:
        raise ImageFormatError(f"cannot read image {path}: {err}") from err
    return GrayImage(np.asarray(gray, dtype=np.uint8))


def save_image(image: GrayImage, path: PathLike) -> None:
    """Write an image as PNG or binary PGM depending on the suffix."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageFormatError(f"unsupported image suffix: {path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(np.ascontiguousarray(image.pixels)).save(path)
    except OSError as err:
        raise ImageFormatError(f"cannot write image {path}: {err}") from err


def load_mask(path: PathLike) -> BinaryMask:
    """Read a mask stored with 0 for background and 255 for worm."""
    return BinaryMask(load_image(path).pixels > MASK_THRESHOLD)


def save_mask(mask: BinaryMask, path: PathLike) -> None:
    """Write a mask as an 8-bit image with 0/255 levels."""
    save_image(GrayImage(mask.data.astype(np.uint8) * MASK_ON), path)


def _image_files(directory: Path) -> list[Path]:
    """Return decodable image files of a directory in lexicographic order."""
    return sorted(
        (
            child
            for child in directory.iterdir()
            if child.is_file() and child.suffix.lower() in IMAGE_SUFFIXES
        ),
        key=lambda child: child.name,
    )


def load_sequence(
    path: PathLike | Sequence[PathLike], frame_rate: float | None = None
) -> ImageSequence:
    """Load a directory (or explicit list) of frames in time order."""
    if isinstance(path, (str, Path)):
        directory = Path(path)
        if not directory.is_dir():
            raise ImageFormatError(f"sequence directory not found: {directory}")
        files = _image_files(directory)
    else:
        files = [Path(item) for item in path]
    if not files:
        raise ImageFormatError(f"no PNG or PGM frames found in {path}")

    frames = [load_image(file) for file in files]
    _LOGGER.info(
        "Loaded sequence frames=%d height=%d width=%d",
        len(frames),
        frames[0].height,
        frames[0].width,
    )
    return ImageSequence(tuple(frames), frame_rate)


def default_smooth_radius(worm_width: float) -> int:
    """Return the morphology radius tied to the worm width."""
    return max(1, round(worm_width * SMOOTH_RADIUS_WIDTH_FRACTION))


def _require_radius(radius: int) -> None:
    """Reject structuring elements smaller than one pixel."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")


def morph_open_close(mask: BinaryMask, radius: int) -> BinaryMask:
    """Open then close with a disk; pixels outside the image count as false."""
    _require_radius(radius)
    if mask.is_empty():
        return BinaryMask.empty(mask.shape)
    footprint = disk(radius).astype(bool)
    pad = 2 * radius + 1
    padded = np.pad(mask.data, pad, constant_values=False)
    opened = ndimage.binary_opening(padded, structure=footprint)
    closed = ndimage.binary_closing(opened, structure=footprint)
    return BinaryMask(closed[pad:-pad, pad:-pad])


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilate with a disk of the given radius (0 returns the mask)."""
    if radius <= 0:
        return mask
    return BinaryMask(
        ndimage.binary_dilation(mask.data, structure=disk(radius).astype(bool))
    )


def largest_component(
    mask: BinaryMask, connectivity: int = DEFAULT_CONNECTIVITY
) -> BinaryMask:
    """Keep the largest connected region; ties go to the first in raster order."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, count = ndimage.label(mask.data, structure=structure)
    if count == 0:
        return BinaryMask.empty(mask.shape)

    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=count + 1)
    sizes[0] = 0
    first_pixel = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first_pixel, flat, np.arange(flat.size))
    candidates = np.flatnonzero(sizes == sizes.max())
    keep = candidates[np.argmin(first_pixel[candidates])]
    if count > 1:
        _LOGGER.debug(
            "Keeping component label=%d size=%d of components=%d",
            keep,
            sizes[keep],
            count,
        )
    return BinaryMask(labels == keep)
