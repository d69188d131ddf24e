"""Compare a run's diagnostics with an oracle or with another run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .builders import build_flow, build_solver
from .config import RunConfig, load_config
from .deformation import HomogeneousFlow, maxwell_ode_oracle, simple_shear, startup_shear_closed_form
from .errors import SchemaMismatch
from .io import read_csv

ORACLES = ("startup", "ucm", "lcm", "newtonian")
STRESS_COLUMNS = ("tau11", "tau12", "tau22", "n1", "max_tau")


@dataclass
class ColumnDeviation:
    name: str
    max_abs: float
    max_rel: float
    l2: float
    passed: bool


@dataclass
class CompareReport:
    """Per-column deviations; ``max_rel`` is ``max|a - b| / max|b|``."""

    oracle: str
    tol: float
    columns: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.columns)

    @property
    def max_rel(self) -> float:
        return max((c.max_rel for c in self.columns), default=0.0)

    def lines(self) -> list[str]:
        out = [f"oracle: {self.oracle}  tol: {self.tol:g}"]
        for c in self.columns:
            mark = "PASS" if c.passed else "FAIL"
            out.append(f"{mark} {c.name:<16} max_abs={c.max_abs:.3e} max_rel={c.max_rel:.3e} l2={c.l2:.3e}")
        out.append("PASS" if self.passed else "FAIL")
        return out

    def to_dict(self) -> dict:
        return {
            "oracle": self.oracle,
            "tol": self.tol,
            "passed": self.passed,
            "max_rel": self.max_rel,
            "columns": [c.__dict__ for c in self.columns],
        }


def deviation(name: str, a, b, tol: float) -> ColumnDeviation:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise SchemaMismatch(f"column {name!r}: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    max_abs = float(diff.max()) if diff.size else 0.0
    ref = float(np.abs(b).max()) if b.size else 0.0
    max_rel = max_abs / ref if ref > 0 else max_abs
    l2 = float(np.sqrt(np.mean(diff**2))) if diff.size else 0.0
    return ColumnDeviation(name, max_abs, max_rel, l2, bool(max_rel <= tol))


def load_run(run_dir) -> tuple[RunConfig, list[str], np.ndarray]:
    run_dir = Path(run_dir)
    path = run_dir / "diagnostics.csv"
    if not path.exists():
        raise SchemaMismatch(f"{run_dir} has no diagnostics.csv")
    header, data = read_csv(path)
    return load_config(run_dir / "config.ini"), header, data


def _shear_flow(cfg: RunConfig) -> HomogeneousFlow:
    geo = cfg["scenario"]["geometry"]
    g = cfg["geometry"]
    if geo == "homogeneous":
        return build_flow(cfg)
    if geo in ("couette", "channel") and g["wall_speed"] != 0:
        return HomogeneousFlow(simple_shear(g["wall_speed"] / g["height"], 2))
    raise SchemaMismatch(f"no homogeneous shear oracle for geometry {geo!r}")


def _column(header: list[str], data: np.ndarray, name: str) -> np.ndarray:
    if name not in header:
        raise SchemaMismatch(f"missing column {name!r}")
    return data[:, header.index(name)]


def compare(run_dir, oracle: str, *, tol: float = 1e-3, scale: float = 1.0, columns=None) -> CompareReport:
    """Compare ``run_dir`` against ``oracle``.

    ``oracle`` is one of ``startup``, ``ucm``, ``lcm``, ``newtonian`` or the
    path of another run directory. For run-vs-run comparisons the columns of
    this run are checked against ``scale`` times the other run's columns.

    Raises
    ------
    SchemaMismatch
        Missing columns, different headers or mismatched time grids.
    """
    cfg, header, data = load_run(run_dir)
    t = _column(header, data, "t")
    report = CompareReport(str(oracle), tol)
    fl = cfg["fluid"]
    if oracle == "startup":
        flow = _shear_flow(cfg)
        if flow.schedule != "constant":
            raise SchemaMismatch("start-up closed form needs a constant shear rate")
        rate = float(flow.kappa0[1, 0])
        tau12, n1 = startup_shear_closed_form(rate, fl["we"], fl["omega"], t)
        report.columns.append(deviation("tau12", _column(header, data, "tau12"), tau12, tol))
        if cfg["measure"]["variant"] in ("ucm", "lcm"):
            report.columns.append(deviation("n1", _column(header, data, "n1"), n1, tol))
        return report
    if oracle in ("ucm", "lcm"):
        flow = _shear_flow(cfg)
        ref = maxwell_ode_oracle(flow, fl["we"], fl["omega"], t, model=oracle)
        for name, (i, j) in (("tau11", (0, 0)), ("tau12", (0, 1)), ("tau22", (1, 1))):
            report.columns.append(deviation(name, _column(header, data, name), ref[:, i, j], tol))
        return report
    if oracle == "newtonian":
        if cfg["scenario"]["geometry"] == "homogeneous":
            raise SchemaMismatch("Newtonian reference needs a spatial geometry")
        solver = build_solver(cfg, stress_enabled=False)
        tm = cfg["time"]
        traj = solver.time_advance(
            solver.initial_state(), tm["t_end"], tm["dt"], record_every=cfg["output"]["record_every"], monitor=False
        )
        ref_t = traj.column("t")
        if ref_t.shape != t.shape or not np.allclose(ref_t, t, rtol=0, atol=1e-12):
            raise SchemaMismatch("time grids differ from the Newtonian reference")
        for name in columns or ("kinetic_energy",):
            report.columns.append(deviation(name, _column(header, data, name), traj.column(name), tol))
        return report
    other = Path(oracle)
    if not other.is_dir():
        raise SchemaMismatch(f"unknown oracle {oracle!r}; expected one of {ORACLES} or a run directory")
    _, oheader, odata = load_run(other)
    if oheader != header:
        raise SchemaMismatch("diagnostics headers differ")
    if odata.shape != data.shape or not np.array_equal(_column(oheader, odata, "t"), t):
        raise SchemaMismatch("time grids differ")
    names = columns or [c for c in header if c not in ("step", "t", "dt")]
    for name in names:
        report.columns.append(deviation(name, _column(header, data, name), scale * _column(oheader, odata, name), tol))
    return report
