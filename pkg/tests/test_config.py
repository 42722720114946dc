import math

import pytest

from opsk.channel import NOISE_FREE
from opsk.config import ConfigError, parse_config, parse_fnr, parse_text
from opsk.perceptual import BitAllocation


def test_defaults_fill_in():
    cfg = parse_text("distance = 0.1\n").scenario
    assert cfg.distance == 0.1
    assert (cfg.D, cfg.M, cfg.m_ratio, cfg.n_symbols) == (0.14e-4, 2.4e-9, 2.0, 10_000)
    assert cfg.fnr == (NOISE_FREE,) * 3


def test_missing_distance_is_named():
    cfg = parse_text("")
    with pytest.raises(ConfigError, match="distance"):
        cfg.require("distance")
    with pytest.raises(ConfigError, match="distance"):
        cfg.grid()


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_text("distance = 1\n# note\ndistance = 2\n", "c.conf")
    assert exc.value.line == 3
    assert "c.conf:3:" in str(exc.value)


@pytest.mark.parametrize(
    "text,line",
    [
        ("distance = 1\ncolour = red\n", 2),
        ("distance 1\n", 1),
        ("distance =\n", 1),
        ("distance = -1\n", 1),
        ("\n\nallocation = 4(1,1,1)\n", 3),
        ("fnr = 0\n", 1),
        ("repeat = 2\n", 1),
        ("sweep.colour = 1 2\n", 1),
        ("sweep.distance = log 0 1 3\n", 1),
        ("sweep.distance = log 1 2\n", 1),
        ("seed = -4\n", 1),
    ],
)
def test_bad_lines(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_text(text)
    assert exc.value.line == line


def test_out_of_range_value_in_scenario():
    with pytest.raises(ConfigError, match="quality"):
        parse_text("distance = 1\nquality = 1.5\n")


def test_comments_and_blanks():
    cfg = parse_text("# header\n\ndistance = 0.5   # metres\n  pn = 2\n").scenario
    assert cfg.distance == 0.5 and cfg.pn == 2.0


def test_flow_converts_to_ratio():
    cfg = parse_text("distance = 2\nflow = 0.5\n").scenario
    assert cfg.flow_ratio == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        parse_text("distance = 2\nflow = 0.5\nflow_ratio = 1\n")
    with pytest.raises(ConfigError):
        parse_text("distance = 2\nsweep.flow = 0.5 1\nflow_ratio = 1\n")


def test_sweeps():
    cfg = parse_text("sweep.distance = log 0.01 1 3\nsweep.allocation = 3(1,1,1) 5(3,1,1)\nfnr = 20\n")
    grid = cfg.grid()
    assert len(grid) == 6
    assert [g.distance for g in grid[::2]] == pytest.approx([0.01, 0.1, 1.0])
    assert grid[1].allocation == BitAllocation(3, 1, 1)
    assert cfg.axis_fields() == ["distance", "allocation"]
    lin = parse_text("distance = 1\nsweep.quality = lin 0.1 1 10\n").grid()
    assert [g.quality for g in lin] == pytest.approx([0.1 * k for k in range(1, 11)])


def test_fixed_and_swept():
    with pytest.raises(ConfigError):
        parse_text("distance = 1\nsweep.distance = 1 2\n")


def test_fnr_forms():
    assert parse_fnr("20") == (20.0, 20.0, 20.0)
    assert parse_fnr("10, inf, 30") == (10.0, NOISE_FREE, 30.0)
    assert parse_fnr("noise-free") == (NOISE_FREE,) * 3
    with pytest.raises(ValueError):
        parse_fnr("1,2")


def test_adaptive_keys():
    cfg = parse_text("N = 50\nE = 5%\nrepeat = 5\ncapsule_mass = 1e-6\n")
    pol = cfg.policy()
    assert (pol.N, pol.E_percent, pol.repeat) == (50, 5.0, 5)
    assert parse_text("E = 20\n").policy().E == 20.0
    assert parse_text("").policy().E == 1.0


def test_override():
    cfg = parse_text("distance = 1\nseed = 3\n").override(seed=9, pn=None)
    assert cfg.scenario.seed == 9
    assert cfg.scenario.pn == 0.0


def test_parse_config_file(tmp_path):
    p = tmp_path / "x.conf"
    p.write_text("distance = 0.25\n")
    assert parse_config(p).scenario.distance == 0.25
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.conf")


def test_shipped_recipes_parse():
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.conf"))
    assert len(files) >= 7
    for f in files:
        cfg = parse_config(f)
        if "adaptive" not in f.name:
            assert all(math.isfinite(g.distance) for g in cfg.grid())
