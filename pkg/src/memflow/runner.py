"""Run orchestration: configuration in, self-describing run directory out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .builders import build_solver, build_stationary
from .config import RunConfig, load_config, parse_config
from .deformation import write_checkpoint
from .errors import Aborted, ConfigError, DivergentStress, Inadmissible, NotConverged
from .flow import DIAGNOSTIC_COLUMNS
from .io import write_csv, write_json, write_manifest

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_NOT_CONVERGED = 4

STATIONARY_COLUMNS = ["cell", "y", "u", "tau11", "tau12", "tau22", "n1"]
ITERATION_COLUMNS = ["iteration", "change", "contraction"]


@dataclass
class RunArtifact:
    """Outcome of one run; ``files`` are paths relative to ``out_dir``."""

    out_dir: Path
    status: str
    exit_code: int
    files: list = field(default_factory=list)
    report: dict = field(default_factory=dict)


def bundled_scenarios() -> dict[str, str]:
    """Name -> one-line description of every bundled scenario."""
    out = {}
    root = resources.files("memflow") / "scenarios"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".ini"):
            cfg = parse_config(entry.read_text(), entry.name)
            out[entry.name[:-4]] = cfg["scenario"]["description"]
    return out


def resolve_config(ref) -> RunConfig:
    """Load a config from a path, or from a bundled scenario name."""
    path = Path(ref)
    if path.exists():
        return load_config(path)
    entry = resources.files("memflow") / "scenarios" / f"{ref}.ini"
    if entry.is_file():
        return parse_config(entry.read_text(), f"{ref}.ini")
    raise ConfigError(f"no config file or bundled scenario named {str(ref)!r}")


def _tensor_columns(d: int) -> list[str]:
    return [f"tau{i + 1}{j + 1}" for i in range(d) for j in range(d)]


def _stress_rows(tau: np.ndarray, mesh) -> tuple[list, list]:
    d = tau.shape[-1]
    cols = ["cell", "x", "y"] + _tensor_columns(d)
    xy = np.zeros((1, 2)) if mesh is None else mesh.flat_centers()
    rows = []
    for c in range(tau.shape[0]):
        rows.append([c, xy[c, 0], xy[c, 1]] + list(tau[c].reshape(-1)))
    return cols, rows


def _grid_summary(grid) -> dict:
    return {
        "size": int(grid.size),
        "s_max": float(grid.s_max),
        "grading": grid.grading,
        "mass": float(grid.mass),
        "mass_error": float(grid.mass_error),
    }


def run_config(cfg: RunConfig, out_dir, *, seed: int | None = None, emit_checkpoints: bool = False) -> RunArtifact:
    """Execute ``cfg`` and write the run directory.

    Solver failures do not raise; they set ``status`` and ``exit_code`` and
    still leave a complete, hashed artifact behind.
    """
    if seed is not None:
        cfg = cfg.with_overrides(run={"seed": int(seed)})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    timings: dict = {}
    t0 = time.perf_counter()
    if cfg["scenario"]["kind"] == "stationary":
        status, code, report = _run_stationary(cfg, out, timings)
    else:
        status, code, report = _run_transient(cfg, out, timings, emit_checkpoints)
    report.update(
        {
            "scenario": cfg.name,
            "kind": cfg["scenario"]["kind"],
            "status": status,
            "exit_code": code,
            "seed": cfg["run"]["seed"],
        }
    )
    write_json(out / "report.json", report)
    timings["total_s"] = time.perf_counter() - t0
    manifest = write_manifest(out, timings=timings, extra={"status": status, "exit_code": code})
    return RunArtifact(out, status, code, sorted(manifest["files"]), report)


def _run_transient(cfg: RunConfig, out: Path, timings: dict, emit_checkpoints: bool):
    t0 = time.perf_counter()
    solver = build_solver(cfg)
    state = solver.initial_state()
    timings["setup_s"] = time.perf_counter() - t0
    report: dict = {"age_grid": _grid_summary(solver.grid)}
    every = cfg["output"]["checkpoint_every"]
    ckdir = out / "checkpoints"

    def checkpoint(st, label="step"):
        ckdir.mkdir(exist_ok=True)
        write_checkpoint(st.gfield, ckdir / f"{label}_{st.step:07d}.csv", st.step)

    hook = None
    if emit_checkpoints and every > 0:

        def hook(st):
            if st.step % every == 0:
                checkpoint(st)

    t1 = time.perf_counter()
    status, code = "ok", 0
    try:
        traj = solver.time_advance(
            state, cfg["time"]["t_end"], cfg["time"]["dt"], record_every=cfg["output"]["record_every"], on_step=hook
        )
    except Aborted as exc:
        status, code = "aborted", EXIT_ABORTED
        report["error"] = exc.reason
        traj = exc.trajectory
        if exc.state is not None and solver.stress_enabled:
            checkpoint(exc.state, "last_valid")
    timings["integrate_s"] = time.perf_counter() - t1
    if traj is not None:
        write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, traj.rows)
        final = traj.state
        if final is not None:
            if emit_checkpoints and status == "ok" and solver.stress_enabled:
                if not (ckdir / f"step_{final.step:07d}.csv").exists():
                    checkpoint(final)
            if cfg["output"]["stress_csv"]:
                cols, rows = _stress_rows(final.tau, None if solver.homogeneous else solver.mesh)
                write_csv(out / "stress.csv", cols, rows)
            if not solver.homogeneous:
                m = solver.mesh
                prof = final.u.mean(axis=0)
                write_csv(out / "profile.csv", ["j", "y", "u"], [[j, m.centers()[1][0, j], prof[j]] for j in range(m.ny)])
            report["steps"] = final.step
            report["t_final"] = final.t
        report["warnings"] = sorted(set(traj.warnings))
        mon = traj.monitor
        if mon is not None and mon.proxies:
            ratio = [p / b for p, b in zip(mon.proxies, mon.bounds) if b > 0]
            report["norm_monitor"] = {
                "c0": mon.c0,
                "p": mon.p,
                "crossed": bool(mon.crossed),
                "crossings": list(mon.crossings),
                "max_ratio": max(ratio) if ratio else 0.0,
            }
        picard = [r["picard_iters"] for r in traj.rows[1:]]
        report["picard"] = {"max_iters": max(picard) if picard else 0, "max_residual": max((r["picard_residual"] for r in traj.rows), default=0.0)}
    return status, code, report


def _run_stationary(cfg: RunConfig, out: Path, timings: dict):
    from .stationary import HomogeneousStationary, stationary_fixed_point

    t0 = time.perf_counter()
    problem = build_stationary(cfg)
    report: dict = {"age_grid": _grid_summary(problem.grid)}
    st = cfg["stationary"]
    try:
        res = stationary_fixed_point(problem, st["tol"], st["max_iters"])
    except NotConverged as exc:
        timings["solve_s"] = time.perf_counter() - t0
        report["error"] = str(exc)
        report["iterations"] = exc.iterations
        report["contraction"] = exc.contraction
        return "not_converged", EXIT_NOT_CONVERGED, report
    except (Inadmissible, DivergentStress) as exc:
        timings["solve_s"] = time.perf_counter() - t0
        report["error"] = f"{type(exc).__name__}: {exc}"
        return "not_converged", EXIT_NOT_CONVERGED, report
    timings["solve_s"] = time.perf_counter() - t0
    adm = res.admissibility
    report["admissibility"] = None if adm is None else {
        "checked": adm.checked,
        "alpha": adm.alpha,
        "threshold": adm.threshold,
        "forcing_norm": adm.forcing_norm,
        "note": adm.note,
    }
    report["iterations"] = res.iterations
    rows = [[k + 1, c, res.contraction_factors[k - 1] if k >= 1 else float("nan")] for k, c in enumerate(res.changes)]
    write_csv(out / "iterations.csv", ITERATION_COLUMNS, rows)
    tau = res.tau
    if isinstance(problem.geometry, HomogeneousStationary):
        cols, srows = _stress_rows(tau, None)
        write_csv(out / "stress.csv", cols, srows)
    else:
        mesh = problem.geometry.mesh
        y = mesh.centers()[1][0]
        prof = []
        for j in range(mesh.ny):
            t = tau[j]
            prof.append([j, y[j], res.u[j], t[0, 0], t[0, 1], t[1, 1], t[0, 0] - t[1, 1]])
        write_csv(out / "profile.csv", STATIONARY_COLUMNS, prof)
    return "ok", EXIT_OK, report
