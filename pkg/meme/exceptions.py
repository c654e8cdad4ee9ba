"""Errors raised by the MEME pipeline."""

from __future__ import annotations


class MemeError(Exception):
    """Base class for every pipeline error reported to the user."""


class ImageFormatError(MemeError):
    """An image or mask file could not be read or written."""


class DimensionMismatchError(MemeError):
    """Two rasters, vectors or a model and a frame disagree in shape."""


class InsufficientDataError(MemeError):
    """Too few samples, pixels or frames for the requested estimate."""


class ModelFormatError(MemeError):
    """A serialized appearance model is malformed or of another version."""


class SkeletonError(MemeError):
    """A centerline cannot be traced or resampled."""


class MotilityError(MemeError):
    """A motility metric is undefined for the given data."""


class ConfigError(MemeError):
    """A configuration, manifest or scene file is malformed."""
