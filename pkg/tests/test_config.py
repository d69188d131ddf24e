from __future__ import annotations

import textwrap

import pytest

from memflow.builders import build_kernel, build_measure, build_scenario, build_solver
from memflow.config import SCHEMA, load_config, parse_config
from memflow.errors import ConfigError
from memflow.flow import Couette, HomogeneousBox
from memflow.kernels import MultiModeMaxwell
from memflow.runner import bundled_scenarios, resolve_config
from memflow.strain import KBKZ


def cfg_text(body: str) -> str:
    return textwrap.dedent(body).lstrip()


BASE = cfg_text(
    """
    [scenario]
    name = base
    geometry = couette

    [geometry]
    nx = 2
    ny = 8
    wall_speed = 1.5

    [fluid]
    re = 0.5
    we = 2.0
    omega = 0.25
    """
)


def test_defaults_fill_every_key():
    cfg = parse_config("[scenario]\nname = x\n")
    for section, keys in SCHEMA.items():
        assert set(cfg[section]) == set(keys)
    assert cfg["fluid"]["omega"] == 0.5
    assert cfg.name == "x"


def test_round_trip_is_canonical():
    cfg = parse_config(BASE, "base.ini")
    text = cfg.to_ini()
    again = parse_config(text)
    assert again.values == cfg.values
    assert again.to_ini() == text


@pytest.mark.parametrize(
    "text,field,line",
    [
        ("[fluid]\nwe = -1\n", "fluid.we", 2),
        ("[fluid]\nre = 1\nomega = 1.0\n", "fluid.omega", 3),
        ("[fluid]\nviscosity = 1\n", "fluid.viscosity", 2),
        ("[fluid]\nwe = fast\n", "fluid.we", 2),
        ("[kernel]\n\nvariant = gaussian\n", "kernel.variant", 3),
        ("[age_grid]\ntail_tol = 1e-3\nquad_tol = 1e-4\n", "age_grid.tail_tol", 2),
        ("[scenario]\ngeometry = channel\n[geometry]\nny = 3\n", "geometry.ny", 4),
        ("[scenario]\ngeometry = parallel_shear\n", "scenario.geometry", 2),
        ("[geometry]\nschedule = steps\ntimes = 1, 2\namplitudes = 1\n", "geometry.amplitudes", 4),
        ("[measure]\nvariant = kbkz\nphi1 = nosuch 1\n", "measure.phi1", 3),
        ("[output]\nrecord_every = 0\n", "output.record_every", 2),
        ("[kernel]\nvariant = multimode_maxwell\netas = 1, 2\nlams = 1\n", "kernel.variant", 2),
    ],
)
def test_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field
    assert info.value.line == line
    assert field in str(info.value) and f"line {line}" in str(info.value)


def test_unknown_section_and_duplicates():
    with pytest.raises(ConfigError) as info:
        parse_config("[solver]\nx = 1\n")
    assert info.value.field == "solver"
    with pytest.raises(ConfigError) as info:
        parse_config("[fluid]\nwe = 1\nwe = 2\n")
    assert info.value.line == 3
    with pytest.raises(ConfigError):
        parse_config("we = 1\n")


def test_inline_comments_and_lists():
    cfg = parse_config("[kernel]\nvariant = multimode_maxwell ; two modes\netas = 0.5 0.5\nlams = 1, 2\n")
    assert cfg["kernel"]["etas"] == (0.5, 0.5)
    assert isinstance(build_kernel(cfg), MultiModeMaxwell)


def test_overrides_revalidate():
    cfg = parse_config(BASE)
    assert cfg.with_overrides(fluid={"omega": 0.0})["fluid"]["omega"] == 0.0
    with pytest.raises(ConfigError):
        cfg.with_overrides(fluid={"omega": 2.0})
    with pytest.raises(ConfigError):
        cfg.with_overrides(fluid={"mu": 1.0})


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_builders_follow_config():
    cfg = parse_config(BASE)
    sc = build_scenario(cfg)
    assert isinstance(sc.geometry, Couette) and sc.geometry.wall_speed == 1.5
    solver = build_solver(cfg)
    assert solver.params.we == 2.0 and solver.space_order == 3
    kb = parse_config("[measure]\nvariant = kbkz\nphi1 = psm 4 1\nphi2 = constant 0.2\n")
    m = build_measure(kb)
    assert isinstance(m, KBKZ) and m.phi1 == ("psm", 4.0, 1.0)
    assert isinstance(build_scenario(parse_config("[scenario]\nname = h\n")).geometry, HomogeneousBox)


@pytest.mark.parametrize("name", sorted(bundled_scenarios()))
def test_bundled_scenarios_validate(name):
    cfg = resolve_config(name)
    assert cfg.name == name
    assert cfg["scenario"]["description"]


def test_unknown_reference():
    with pytest.raises(ConfigError):
        resolve_config("no_such_scenario")
