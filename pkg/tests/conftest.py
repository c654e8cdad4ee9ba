"""Shared fixtures for MEME tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from meme.appearance import UserInput
from meme.imagecore import BinaryMask, GrayImage, save_image, save_mask
from meme.synthgen import SceneSpec, scene_preset

SMALL_SCENE = {
    "scene_width": 240,
    "scene_height": 160,
    "worm_length": 100,
    "worm_width": 10,
    "worm_amplitude": 8,
    "worm_wavelength": 70,
    "worm_speed": 10,
    "n_frames": 4,
}


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def bar_mask() -> BinaryMask:
    """Return a 7x61 solid bar inside a 15x71 frame (rows 4-10, cols 5-65)."""
    data = np.zeros((15, 71), dtype=bool)
    data[4:11, 5:66] = True
    return BinaryMask(data)


def band_scene(
    rng: np.random.Generator,
    worm_level: float = 60.0,
    background_level: float = 200.0,
    sigma: float = 5.0,
) -> tuple[GrayImage, BinaryMask]:
    """Return an 80x120 image with a horizontal worm band and its mask."""
    truth = np.zeros((80, 120), dtype=bool)
    truth[36:44, 20:100] = True
    pixels = rng.normal(background_level, sigma, truth.shape)
    pixels[truth] = rng.normal(worm_level, sigma, truth.sum())
    return GrayImage(np.clip(np.rint(pixels), 0, 255)), BinaryMask(truth)


@pytest.fixture
def band_input(rng: np.random.Generator) -> UserInput:
    """Return an annotated band scene with an 8-pixel-wide worm."""
    image, mask = band_scene(rng)
    return UserInput(image, mask, 8.0)


@pytest.fixture
def small_scene() -> SceneSpec:
    """Return a small uniform scene that renders quickly."""
    return scene_preset("uniform", **SMALL_SCENE)


@pytest.fixture
def manifest_dir(tmp_path: Path, band_input: UserInput) -> Path:
    """Write the band scene and its manifest to a directory."""
    save_image(band_input.image, tmp_path / "frame.png")
    save_mask(band_input.worm_mask, tmp_path / "mask.png")
    (tmp_path / "annotation.txt").write_text(
        "frame=frame.png\nmask=mask.png\nwidth_px=8\n", encoding="utf-8"
    )
    return tmp_path
