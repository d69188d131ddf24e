"""Run configuration: a sectioned INI file with a fixed, typed schema.

Unknown sections or keys are rejected. Errors name the offending field and
its line. Parsed configurations serialise back to a canonical INI text in
which every key appears with its effective value.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(t) for t in re.split(r"[,\s]+", text) if t)


def _phi(text: str) -> tuple:
    parts = text.split()
    if not parts:
        raise ValueError("empty phi definition")
    return (parts[0],) + tuple(float(p) for p in parts[1:])


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return t

    return parse


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], str):
            return " ".join([value[0]] + [repr(float(v)) for v in value[1:]])
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


GEOMETRIES = ("homogeneous", "channel", "couette", "poiseuille", "parallel_shear")
KERNELS = ("single_exponential", "multimode_maxwell", "doi_edwards", "power_law")
MEASURES = ("ucm", "lcm", "kbkz", "psm", "psm_norm", "wagner", "currie")

SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "scenario": {
        "name": (str, "unnamed"),
        "kind": (_choice("transient", "stationary"), "transient"),
        "geometry": (_choice(*GEOMETRIES), "homogeneous"),
        "description": (str, ""),
    },
    "geometry": {
        "nx": (_int, 2),
        "ny": (_int, 16),
        "height": (_float, 1.0),
        "length": (_float, 1.0),
        "wall_speed": (_float, 0.0),
        "body_force": (_floats, (0.0, 0.0)),
        "flow": (_choice("shear", "elongation"), "shear"),
        "rate": (_float, 1.0),
        "schedule": (_choice("constant", "ramp", "steps"), "constant"),
        "t_ramp": (_float, 1.0),
        "times": (_floats, ()),
        "amplitudes": (_floats, (1.0,)),
        "d": (_int, 2),
        "noise": (_float, 0.0),
    },
    "fluid": {
        "re": (_float, 0.0),
        "we": (_float, 1.0),
        "omega": (_float, 0.5),
    },
    "kernel": {
        "variant": (_choice(*KERNELS), "single_exponential"),
        "lam": (_float, 1.0),
        "etas": (_floats, (1.0,)),
        "lams": (_floats, (1.0,)),
        "betas": (_floats, (0.5,)),
        "truncation": (_int, 10_000),
        "s_min": (_float, 1e-3),
    },
    "measure": {
        "variant": (_choice(*MEASURES), "ucm"),
        "alpha": (_float, 4.0),
        "beta": (_float, 1.0),
        "phi1": (_phi, ("constant", 1.0)),
        "phi2": (_phi, ("constant", 0.0)),
    },
    "age_grid": {
        "tail_tol": (_float, 1e-8),
        "quad_tol": (_float, 1e-4),
        "age_order": (_int, 3),
        "space_order": (_int, 3),
    },
    "time": {
        "t_end": (_float, 1.0),
        "dt": (_float, 1e-3),
        "picard_tol": (_float, 1e-8),
        "max_picard": (_int, 50),
        "renormalize": (_bool, False),
        "monitor_c0": (_float, 0.5),
        "stress_enabled": (_bool, True),
    },
    "stationary": {
        "tol": (_float, 1e-8),
        "max_iters": (_int, 30),
        "forcing": (_float, 0.0),
        "c0": (_float, 0.5),
        "r1": (_float, 0.1),
        "f_cap": (_float, 0.1),
    },
    "output": {
        "record_every": (_int, 1),
        "checkpoint_every": (_int, 0),
        "stress_csv": (_bool, False),
    },
    "run": {
        "seed": (_int, 0),
    },
}


@dataclass
class RunConfig:
    """Validated configuration; ``values[section][key]`` holds typed values."""

    values: dict
    source: str = "<memory>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def name(self) -> str:
        return self.values["scenario"]["name"]

    def to_ini(self) -> str:
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {_fmt(self.values[section][key])}")
            out.append("")
        return "\n".join(out)

    def with_overrides(self, **sections: dict) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        for s, kv in sections.items():
            for k, v in kv.items():
                if k not in SCHEMA.get(s, {}):
                    raise ConfigError(f"unknown key {k!r}", field=f"{s}.{k}")
                vals[s][k] = v
        cfg = RunConfig(vals, self.source, self.lines)
        validate(cfg)
        return cfg


def _line_map(text: str) -> dict:
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = n
            continue
        m = re.match(r"^([A-Za-z0-9_.\-]+)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).lower())] = n
    return lines


def parse_config(text: str, source: str = "<memory>") -> RunConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        With ``field`` set to ``section.key`` and ``line`` to the source line.
    """
    parser = configparser.ConfigParser(
        inline_comment_prefixes=(";", "#"), strict=True, interpolation=None, default_section="__none__"
    )
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", field=f"{exc.section}.{exc.option}", line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", field=exc.section, line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"unparsable line: {exc.errors[0][1] if exc.errors else ''}", line=line) from None
    lines = _line_map(text)
    values: dict = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", field=section, line=lines.get((section, None)))
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r}", field=f"{section}.{key}", line=lines.get((section, key)))
            conv, _ = SCHEMA[section][key]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value {raw!r}: {exc}", field=f"{section}.{key}", line=lines.get((section, key))) from None
    cfg = RunConfig(values, source, lines)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path))


def validate(cfg: RunConfig) -> None:
    """Cross-field checks; constructs kernel and measure to surface bad parameters."""
    v = cfg.values

    def fail(msg: str, section: str, key: str):
        raise ConfigError(msg, field=f"{section}.{key}", line=cfg.lines.get((section, key)))

    fl = v["fluid"]
    if fl["re"] < 0:
        fail("Re must be non-negative", "fluid", "re")
    if not fl["we"] > 0:
        fail("We must be positive", "fluid", "we")
    if not 0 <= fl["omega"] < 1:
        fail("omega must lie in [0, 1)", "fluid", "omega")
    geo = v["scenario"]["geometry"]
    kind = v["scenario"]["kind"]
    g = v["geometry"]
    if g["d"] not in (2, 3):
        fail("d must be 2 or 3", "geometry", "d")
    if geo != "homogeneous":
        if g["d"] != 2:
            fail("spatial geometries are two-dimensional", "geometry", "d")
        if g["ny"] < 2 or g["nx"] < 1:
            fail("need nx >= 1 and ny >= 2", "geometry", "ny")
        if len(g["body_force"]) != 2:
            fail("body_force needs two components", "geometry", "body_force")
    if kind == "stationary" and geo not in ("homogeneous", "parallel_shear", "poiseuille"):
        fail("stationary runs support homogeneous, parallel_shear or poiseuille", "scenario", "geometry")
    if kind == "transient" and geo == "parallel_shear":
        fail("parallel_shear is a stationary geometry", "scenario", "geometry")
    if g["schedule"] == "steps" and len(g["amplitudes"]) != len(g["times"]) + 1:
        fail("steps need one more amplitude than times", "geometry", "amplitudes")
    ag = v["age_grid"]
    for key in ("tail_tol", "quad_tol"):
        if not 0 < ag[key] < 1:
            fail(f"{key} must lie in (0, 1)", "age_grid", key)
    if ag["tail_tol"] > ag["quad_tol"]:
        fail("tail_tol must not exceed quad_tol", "age_grid", "tail_tol")
    if ag["age_order"] not in (1, 3):
        fail("age_order must be 1 or 3", "age_grid", "age_order")
    if ag["space_order"] not in (1, 3):
        fail("space_order must be 1 or 3", "age_grid", "space_order")
    if geo != "homogeneous" and ag["space_order"] == 3 and g["ny"] < 4:
        fail("cubic spatial interpolation needs ny >= 4", "geometry", "ny")
    t = v["time"]
    if kind == "transient":
        if not t["t_end"] > 0:
            fail("t_end must be positive", "time", "t_end")
        if not t["dt"] > 0:
            fail("dt must be positive", "time", "dt")
    if v["output"]["record_every"] < 1:
        fail("record_every must be >= 1", "output", "record_every")
    from .builders import build_kernel, build_measure

    try:
        build_kernel(cfg)
    except (ValueError, TypeError) as exc:
        fail(f"invalid kernel: {exc}", "kernel", "variant")
    try:
        build_measure(cfg)
    except (ValueError, TypeError) as exc:
        key = "phi1" if "phi" in str(exc) else "variant"
        fail(f"invalid measure: {exc}", "measure", key)
