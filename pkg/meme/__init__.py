"""MEME: one-shot appearance learning, worm segmentation and motility metrics."""

from __future__ import annotations

from .appearance import AppearanceModel, learn_model, segment_frame
from .exceptions import MemeError
from .imagecore import BinaryMask, GrayImage, ImageSequence
from .skeleton import Skeleton, extract_skeleton

__all__ = [
    "AppearanceModel",
    "BinaryMask",
    "GrayImage",
    "ImageSequence",
    "MemeError",
    "Skeleton",
    "extract_skeleton",
    "learn_model",
    "segment_frame",
]
