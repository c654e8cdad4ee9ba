"""Test configuration parsing, validation and path resolution."""

from __future__ import annotations

from pathlib import Path

import pytest

from meme.config import (
    load_pipeline_config,
    load_scene_config,
    parse_key_value_lines,
    parse_overrides,
    read_manifest,
    write_manifest,
)
from meme.const import (
    DEFAULT_N_POINTS,
    DEFAULT_PRIOR_FLOOR,
    MODEL_FILE,
    RATIO_COMPONENTWISE,
    SCENE_DEFAULTS,
)
from meme.exceptions import ConfigError


def test_parse_lines_comments_and_blanks() -> None:
    """Test comments, blank lines and surrounding spaces are ignored."""
    values = parse_key_value_lines(
        ["# header", "", "  components = 3  # inline", "seed=7"], "test"
    )

    assert values == {"components": "3", "seed": "7"}


def test_parse_lines_rejects_duplicates() -> None:
    """Test a key may only appear once per file."""
    with pytest.raises(ConfigError, match="duplicate key 'seed'"):
        parse_key_value_lines(["seed=1", "seed=2"], "test")


def test_parse_lines_rejects_missing_separator() -> None:
    """Test a line without '=' names its position."""
    with pytest.raises(ConfigError, match="test:2"):
        parse_key_value_lines(["seed=1", "components"], "test")


def test_parse_overrides_later_wins() -> None:
    """Test repeated overrides keep the last value."""
    assert parse_overrides(["seed=1", "seed=2", "threads=4"]) == {
        "seed": "2",
        "threads": "4",
    }
    with pytest.raises(ConfigError):
        parse_overrides(["=3"])


def test_pipeline_defaults() -> None:
    """Test an empty configuration takes every default."""
    config = load_pipeline_config()

    assert config.components == 2
    assert (config.grid_rows, config.grid_cols) == (10, 10)
    assert config.n_points == DEFAULT_N_POINTS
    assert config.prior_floor == DEFAULT_PRIOR_FLOOR
    assert config.smooth_radius is None
    assert config.keep_largest
    assert config.frame_rate is None
    assert config.baseline_low is None
    assert config.model == config.output_dir / MODEL_FILE
    assert config.sequence_name == "sequence"


def test_pipeline_file_and_overrides(tmp_path: Path) -> None:
    """Test overrides beat the file and relative paths follow the file."""
    config_path = tmp_path / "run.cfg"
    config_path.write_text(
        "sequence_dir=frames\noutput_dir=out\ncomponents=3\n"
        "ratio_mode=componentwise\nkeep_largest=false\n",
        encoding="utf-8",
    )

    config = load_pipeline_config(config_path, {"components": "4"})

    assert config.components == 4
    assert config.sequence_dir == tmp_path / "frames"
    assert config.output_dir == tmp_path / "out"
    assert config.model == tmp_path / "out" / MODEL_FILE
    assert config.sequence_name == "frames"
    assert config.ratio_mode == RATIO_COMPONENTWISE
    assert not config.keep_largest


def test_pipeline_absolute_paths_kept(tmp_path: Path) -> None:
    """Test absolute paths are not rebased."""
    target = tmp_path / "elsewhere"
    config_path = tmp_path / "sub" / "run.cfg"
    config_path.parent.mkdir()
    config_path.write_text(f"truth_dir={target}\n", encoding="utf-8")

    assert load_pipeline_config(config_path).truth_dir == target


@pytest.mark.parametrize(
    "overrides",
    [
        {"colour": "blue"},
        {"components": "zero"},
        {"components": "0"},
        {"prior_floor": "0.2"},
        {"ratio_mode": "median"},
        {"n_points": "1"},
        {"frame_rate": "-3"},
    ],
)
def test_pipeline_rejects_bad_values(overrides: dict[str, str]) -> None:
    """Test unknown keys and out-of-range values are configuration errors."""
    with pytest.raises(ConfigError):
        load_pipeline_config(overrides=overrides)


def test_baseline_window_needs_both_ends() -> None:
    """Test the baseline window is set as a pair."""
    with pytest.raises(ConfigError, match="both"):
        load_pipeline_config(overrides={"baseline_low": "10"})
    with pytest.raises(ConfigError, match="exceeds"):
        load_pipeline_config(
            overrides={"baseline_low": "90", "baseline_high": "40"}
        )
    config = load_pipeline_config(
        overrides={"baseline_low": "40", "baseline_high": "90"}
    )
    assert (config.baseline_low, config.baseline_high) == (40, 90)


def test_missing_config_file(tmp_path: Path) -> None:
    """Test an unreadable configuration file is reported."""
    with pytest.raises(ConfigError, match="cannot read"):
        load_pipeline_config(tmp_path / "absent.cfg")


def test_manifest_round_trip(tmp_path: Path) -> None:
    """Test a written manifest reads back with resolved paths."""
    path = tmp_path / "data" / "annotation.txt"

    write_manifest(path, frame="frame.png", mask="masks/0.png", width_px=12.5)
    values = read_manifest(path)

    assert values["frame"] == tmp_path / "data" / "frame.png"
    assert values["mask"] == tmp_path / "data" / "masks" / "0.png"
    assert values["width_px"] == 12.5


def test_manifest_requires_every_key(tmp_path: Path) -> None:
    """Test a manifest without a mask names the missing key."""
    path = tmp_path / "annotation.txt"
    path.write_text("frame=f.png\nwidth_px=8\n", encoding="utf-8")

    with pytest.raises(ConfigError, match="mask"):
        read_manifest(path)


def test_manifest_width_at_least_one(tmp_path: Path) -> None:
    """Test a sub-pixel worm width is refused."""
    path = tmp_path / "annotation.txt"
    path.write_text("frame=f.png\nmask=m.png\nwidth_px=0.5\n", encoding="utf-8")

    with pytest.raises(ConfigError):
        read_manifest(path)


def test_scene_defaults() -> None:
    """Test an empty scene configuration takes the default scene."""
    values = load_scene_config()

    for key, default in SCENE_DEFAULTS.items():
        assert values[key] == default
    assert values["background"] == "uniform"


def test_scene_rejects_unknown_background() -> None:
    """Test only the three background kinds are accepted."""
    with pytest.raises(ConfigError):
        load_scene_config(overrides={"background": "agar"})
