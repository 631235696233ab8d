"""Scenario generation and experiment orchestration."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__, calibration
from .config import RunConfig, config_to_text
from .constraints import constraint_reports, write_reports_csv
from .errors import SmcfValidationError
from .fixtures import bump_immersion, cliff_fixture, flat_immersion
from .gauge_init import (
    build_coulomb_frame,
    check_elliptic_h,
    harmonic_defect,
    pullback_immersion,
    solve_harmonic_coordinates,
    solve_initial_A,
)
from .geometry import (
    Immersion,
    SecondForm,
    christoffel,
    curvature,
    induced_metric,
    second_form,
)
from .grid import Grid, GridField, write_field
from .norms import (
    DiagnosticsCSV,
    EnvelopeParams,
    frequency_envelope,
    sobolev_norm,
    y0_lo_norm_upper,
    y0_norm_upper,
)
from .parabolic import GaugeState, gauge_state_from, step_parabolic
from .reconstruction import frame_from_normal_basis, reconstruct, write_reconstruction_csv
from .schrodinger import picard_evolve
from .trajectory import Trajectory, save_trajectory


@dataclass
class ScenarioBundle:
    grid: Grid
    immersion: Immersion
    nu1: np.ndarray
    nu2: np.ndarray
    gauge: GaugeState
    sf: SecondForm
    residuals: dict = field(default_factory=dict)


def make_grid(cfg: RunConfig) -> Grid:
    return Grid(
        d=cfg.grid_dimension_d,
        n=cfg.grid_points_n,
        L=cfg.box_length_L,
        dealias_fraction=cfg.dealias_fraction,
    )


def generate_scenario(cfg: RunConfig) -> ScenarioBundle:
    """Initial-data bundle: immersion, gauged frame, (h0, A0, lambda0)."""
    cfg = cfg.resolve()
    grid = make_grid(cfg)
    d = grid.d

    if cfg.scenario_kind == "flat":
        F = flat_immersion(grid)
        m = curvature(christoffel(induced_metric(F)))
        nu1 = np.zeros((d + 2,) + grid.shape)
        nu2 = np.zeros((d + 2,) + grid.shape)
        nu1[d] = 1.0
        nu2[d + 1] = 1.0
        sf = second_form(F, (nu1, nu2), m)
        gauge = gauge_state_from(grid, m.g, np.zeros((d,) + grid.shape))
        return ScenarioBundle(grid, F, nu1, nu2, gauge, sf, residuals={"harmonic_defect_l2": 0.0})

    if cfg.scenario_kind == "cliff":
        fix = cliff_fixture(grid, cfg.cliff_radius_r)
        m = curvature(christoffel(induced_metric(fix.immersion)))
        sf = second_form(fix.immersion, (fix.nu1, fix.nu2), m)
        gauge = gauge_state_from(grid, m.g, np.zeros((d,) + grid.shape))
        res = {"harmonic_defect_l2": grid.l2(harmonic_defect(m))}
        return ScenarioBundle(grid, fix.immersion, fix.nu1, fix.nu2, gauge, sf, residuals=res)

    # bump: graph data -> harmonic coordinates -> Coulomb frame
    fix = bump_immersion(grid, cfg.bump_epsilon, cfg.bump_delta, cfg.bump_profile_width_w)
    m0 = christoffel(induced_metric(fix.immersion))
    change = solve_harmonic_coordinates(
        m0,
        tol=cfg.solver_tol,
        max_iter=cfg.solver_max_iter,
        small_data_threshold=cfg.small_data_threshold,
        s=cfg.envelope_s,
        delta=cfg.envelope_delta,
    )
    F = pullback_immersion(fix.immersion, change)
    m = curvature(christoffel(induced_metric(F)))
    nu1, nu2, A, coulomb_report = build_coulomb_frame(
        F, m, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter
    )
    sf = second_form(F, (nu1, nu2), m)
    gauge = gauge_state_from(grid, m.g, A)
    A_solve, _, divcurl = solve_initial_A(sf, m, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    A_cent = A - A.mean(axis=tuple(range(1, d + 1)), keepdims=True)
    _, elliptic = check_elliptic_h(m, sf)
    residuals = {
        "harmonic_defect_l2": grid.l2(harmonic_defect(m)),
        "harmonic_iterations": change.report.iterations,
        "coulomb_divergence_l2": coulomb_report.residual,
        "initial_A_div_l2": divcurl["div_l2"],
        "initial_A_curl_l2": divcurl["curl_l2"],
        "initial_A_route_gap_linf": float(np.max(np.abs(A_solve - A_cent))),
        "elliptic_h_rel": elliptic["rel"],
    }
    return ScenarioBundle(grid, F, nu1, nu2, gauge, sf, residuals=residuals)


def norm_suite_rows(cfg: RunConfig, grid: Grid, gauge: GaugeState, sf: SecondForm):
    """Deterministic diagnostics rows for one state."""
    params = EnvelopeParams(s=cfg.envelope_s, delta=cfg.envelope_delta)
    sigma_d = params.sigma_d(grid.d)
    rows = []
    lam_norm2 = 0.0
    env_acc = None
    for a in range(grid.d):
        for b in range(grid.d):
            f = GridField(grid, sf.lam[a, b])
            lam_norm2 += sobolev_norm(f, cfg.envelope_s) ** 2
            env = frequency_envelope(f, params)
            env_acc = env.values if env_acc is None else np.maximum(env_acc, env.values)
    rows.append(("lambda_Hs", float(np.sqrt(lam_norm2))))
    rows.append(("lambda_l2", grid.l2(sf.lam)))
    for j, aj in enumerate(env_acc):
        rows.append((f"lambda_envelope_a{j}", float(aj)))
    h_y0 = 0.0
    h_lo = 0.0
    for a in range(grid.d):
        for b in range(a, grid.d):
            f = GridField.from_real(grid, gauge.metric.h[a, b])
            h_y0 += y0_norm_upper(f, cfg.envelope_s + 2, cfg.envelope_delta) ** 2
            h_lo += y0_lo_norm_upper(f, cfg.envelope_delta) ** 2
    rows.append(("h_Y0_upper", float(np.sqrt(h_y0))))
    rows.append(("h_Y0lo_upper", float(np.sqrt(h_lo))))
    rows.append(("h_l2", grid.l2(gauge.metric.h)))
    rows.append(("A_l2", grid.l2(gauge.A)))
    rows.append(("metric_eig_min", gauge.metric.eig_min()))
    rows.append(("sigma_d", sigma_d))
    return rows


def write_manifest(path, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write(f"# smcflab {__version__} run manifest\n")
        fh.write(config_to_text(cfg))
        fh.write("# frozen calibration constants\n")
        for name, value in calibration.ALL.items():
            fh.write(f"{name} = {value!r}\n")


def run_heat_gauge(cfg: RunConfig, bundle: ScenarioBundle, lam_traj: Trajectory | None = None) -> Trajectory:
    """Parabolic system alone, driven by frozen lambda input.

    Without lam_traj the scenario's initial lambda is held constant; with a
    loaded trajectory its stored lambda path is prescribed (not evolved) and
    the gauge system is re-solved along it at the stored times.
    """
    cfg = cfg.resolve()
    grid = bundle.grid
    from .trajectory import TrajectoryRecord

    if lam_traj is None:
        nsteps = max(1, int(round(cfg.final_time_T / cfg.time_step_dt)))
        dt = cfg.final_time_T / nsteps
        times = [i * dt for i in range(nsteps + 1)]
        lam_path = [bundle.sf] * (nsteps + 1)
    else:
        if not grid.same_grid(lam_traj.grid):
            raise SmcfValidationError("lambda snapshots live on a different grid than the scenario")
        times = list(lam_traj.times)
        lam_path = [rec.second_form(grid) for rec in lam_traj.records]

    s = bundle.gauge
    records = [
        TrajectoryRecord(times[0], s.metric.g.copy(), s.A.copy(), lam_path[0].lam.copy(), lam_path[0].psi.copy())
    ]
    for i in range(1, len(times)):
        dt_i = times[i] - times[i - 1]
        s = step_parabolic(s, (lam_path[i - 1], lam_path[i]), dt_i, cfg.sign_variant)
        if i % cfg.snapshot_every_steps == 0 or i == len(times) - 1:
            sf_now = SecondForm.from_lambda(grid, lam_path[i].lam, s.metric)
            records.append(
                TrajectoryRecord(times[i], s.metric.g.copy(), s.A.copy(), sf_now.lam.copy(), sf_now.psi.copy())
            )
    return Trajectory(grid=grid, records=records, meta={"mode": "frozen-lambda"})


class _Stage:
    """Tag escaping errors with the pipeline stage they came from."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        from .errors import SmcfError

        if exc is not None and isinstance(exc, SmcfError):
            exc.args = (f"[{self.name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        return False


def run_experiment(cfg: RunConfig) -> dict:
    """Full pipeline: scenario, evolution, constraints, reconstruction, outputs.

    Outputs are flushed stage by stage, so a failing run leaves every
    completed artifact behind and its error message names the stage.
    """
    cfg = cfg.resolve()
    outdir = cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    write_manifest(os.path.join(outdir, "manifest.txt"), cfg)

    with _Stage("gauge-init"):
        bundle = generate_scenario(cfg)
    grid = bundle.grid
    init_csv = DiagnosticsCSV(os.path.join(outdir, "gauge_init.csv"))
    init_csv.append_many(0.0, sorted(bundle.residuals.items()))

    with _Stage("evolve"):
        traj = picard_evolve(
            bundle.sf,
            bundle.gauge,
            T=cfg.final_time_T,
            dt=cfg.time_step_dt,
            sweeps=cfg.picard_sweeps,
            tol=cfg.picard_tol or None,
            mode=cfg.coupling_mode,
            sign_variant=cfg.sign_variant,
            snapshot_every=cfg.snapshot_every_steps,
            blowup_threshold=cfg.blowup_threshold,
        )
    save_trajectory(os.path.join(outdir, "snapshots"), traj)

    diag = DiagnosticsCSV(os.path.join(outdir, "diagnostics.csv"))
    for rec in traj.records:
        s = rec.gauge(grid)
        sf = rec.second_form(grid)
        diag.append_many(rec.t, norm_suite_rows(cfg, grid, s, sf))

    with _Stage("check-constraints"):
        reports = constraint_reports(traj)
    write_reports_csv(os.path.join(outdir, "constraints.csv"), reports)

    frame0 = frame_from_normal_basis(bundle.immersion, bundle.nu1, bundle.nu2)
    with _Stage("reconstruct"):
        result = reconstruct(
            traj,
            frame0,
            bundle.immersion,
            drift_tol=cfg.frame_drift_tol,
            consistency_tol=cfg.consistency_tol,
            holonomy_tol=cfg.holonomy_tol,
            spatial_audit=True,
        )
    write_reconstruction_csv(os.path.join(outdir, "reconstruction.csv"), result)
    recon_dir = os.path.join(outdir, "immersions")
    os.makedirs(recon_dir, exist_ok=True)
    for i, imm in enumerate(result.immersions):
        for comp in range(imm.ambient_dim):
            fld = GridField.from_real(grid, imm.dev[comp], name=f"F{comp}")
            write_field(os.path.join(recon_dir, f"imm_{i:06d}_F{comp}.smcf"), fld)

    return {
        "trajectory": traj,
        "reports": reports,
        "reconstruction": result,
        "bundle": bundle,
        "output_dir": outdir,
    }
