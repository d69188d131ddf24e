"""Turn a :class:`~memflow.config.RunConfig` into solver objects."""

from __future__ import annotations

import numpy as np

from .deformation import HomogeneousFlow, planar_elongation, simple_shear
from .flow import Couette, FluidParams, FlowSolver, HomogeneousBox, PeriodicChannel2D, Poiseuille, Scenario
from .kernels import DoiEdwards, MemoryKernel, MultiModeMaxwell, PowerLaw, SingleExponential, build_age_grid
from .stationary import HomogeneousStationary, ParallelShear, Smallness, StationaryProblem
from .strain import KBKZ, LCM, PSM, UCM, Currie, PSMNorm, StrainMeasure, Wagner, make_phi


def build_kernel(cfg) -> MemoryKernel:
    k = cfg["kernel"]
    variant = k["variant"]
    if variant == "single_exponential":
        return SingleExponential(k["lam"])
    if variant == "multimode_maxwell":
        return MultiModeMaxwell(k["etas"], k["lams"])
    if variant == "doi_edwards":
        return DoiEdwards(k["lam"], k["truncation"])
    return PowerLaw(k["etas"], k["betas"], k["lams"], k["s_min"])


def build_measure(cfg) -> StrainMeasure:
    m = cfg["measure"]
    variant = m["variant"]
    if variant == "ucm":
        return UCM()
    if variant == "lcm":
        return LCM()
    if variant == "kbkz":
        make_phi(*m["phi1"])
        make_phi(*m["phi2"])
        return KBKZ(m["phi1"], m["phi2"])
    if variant == "psm":
        return PSM(m["alpha"], m["beta"])
    if variant == "psm_norm":
        return PSMNorm()
    if variant == "wagner":
        return Wagner(m["alpha"], m["beta"])
    return Currie()


def build_params(cfg) -> FluidParams:
    f = cfg["fluid"]
    return FluidParams(f["re"], f["we"], f["omega"])


def build_flow(cfg) -> HomogeneousFlow:
    g = cfg["geometry"]
    d = g["d"]
    kappa = simple_shear(g["rate"], d) if g["flow"] == "shear" else planar_elongation(g["rate"], d)
    return HomogeneousFlow(kappa, g["schedule"], tuple(g["times"]), tuple(g["amplitudes"]), g["t_ramp"])


def build_scenario(cfg) -> Scenario:
    g = cfg["geometry"]
    geo = cfg["scenario"]["geometry"]
    common = dict(nx=g["nx"], ny=g["ny"], height=g["height"], length=g["length"])
    if geo == "homogeneous":
        geometry = HomogeneousBox(build_flow(cfg))
    elif geo == "couette":
        geometry = Couette(wall_speed=g["wall_speed"], body_force=tuple(g["body_force"]), **common)
    elif geo == "poiseuille":
        geometry = Poiseuille(wall_speed=g["wall_speed"], body_force=tuple(g["body_force"]), **common)
    else:
        geometry = PeriodicChannel2D(wall_speed=g["wall_speed"], body_force=tuple(g["body_force"]), **common)
    u0 = None
    if geo != "homogeneous" and g["noise"] > 0:
        rng = np.random.default_rng(cfg["run"]["seed"])
        # streamwise noise varying only in y stays divergence-free
        prof = g["noise"] * rng.standard_normal(g["ny"])
        u0 = (np.tile(prof, (g["nx"], 1)), np.zeros((g["nx"], g["ny"] + 1)))
    return Scenario(geometry, u0=u0, name=cfg.name)


def build_solver(cfg, stress_enabled: bool | None = None) -> FlowSolver:
    kernel = build_kernel(cfg)
    ag = cfg["age_grid"]
    grid = build_age_grid(kernel, ag["tail_tol"], ag["quad_tol"])
    t = cfg["time"]
    return FlowSolver(
        build_scenario(cfg),
        build_params(cfg),
        kernel,
        grid,
        build_measure(cfg),
        picard_tol=t["picard_tol"],
        max_picard=t["max_picard"],
        stress_enabled=t["stress_enabled"] if stress_enabled is None else stress_enabled,
        age_order=ag["age_order"],
        space_order=ag["space_order"],
        renormalize=t["renormalize"],
        monitor_c0=t["monitor_c0"],
    )


def build_stationary(cfg) -> StationaryProblem:
    kernel = build_kernel(cfg)
    ag = cfg["age_grid"]
    grid = build_age_grid(kernel, ag["tail_tol"], ag["quad_tol"])
    st = cfg["stationary"]
    g = cfg["geometry"]
    if cfg["scenario"]["geometry"] == "homogeneous":
        geometry = HomogeneousStationary(build_flow(cfg).kappa0)
    else:
        geometry = ParallelShear(g["ny"], g["height"])
    return StationaryProblem(
        build_params(cfg),
        kernel,
        grid,
        build_measure(cfg),
        geometry,
        st["forcing"],
        Smallness(st["c0"], st["r1"], None, st["f_cap"]),
    )
