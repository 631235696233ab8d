"""Covariant Schroedinger evolution of the second fundamental form.

One step is a Strang split: the flat Laplacian propagates through its exact
unitary spectral phase, and the remainder (variable-coefficient divergence
form, magnetic advection, and the assembled nonlinearity) integrates with an
explicit Heun stage at the midpoint gauge.  The coupled driver re-solves the
parabolic gauge every step (default) or runs whole-slab Picard sweeps in
which each sweep solves a linear equation with coefficients and sources from
the previous iterate.
"""

from __future__ import annotations

import numpy as np

from .errors import BlowupError, IterationDivergenceError, SmcfValidationError
from .geometry import SecondForm, covariant_derivative
from .grid import Grid
from .parabolic import GaugeState, gauge_state_from, step_parabolic
from .trajectory import Trajectory, TrajectoryRecord


def _identity(grid):
    out = np.zeros((grid.d, grid.d) + grid.shape)
    for a in range(grid.d):
        out[a, a] = 1.0
    return out


def assemble_nonlinearity(sf: SecondForm, s: GaugeState, breakdown=False):
    """The nonlinearity F of the iteration form of the lambda equation:

        i d_t lam + d_a(g^{ab} d_b lam) + 2i A^a d_a lam = F.

    Every product is dealiased; cubic chains are nested binary products.
    With breakdown=True a dict of the individual named terms is returned too.
    """
    grid = s.grid
    m = s.metric
    lam = sf.lam
    psi = sf.psi
    d = grid.d

    dlam = np.stack([grid.deriv(lam, a) for a in range(d)])  # [c, a, b]

    # d_m(g^{mn} d_n lam) - nabla^s nabla_s lam
    div_form = sum(
        grid.deriv(grid.dealias(np.einsum("...,ab...->ab...", m.ginv[mu, nu], dlam[nu])), mu)
        for mu in range(d)
        for nu in range(d)
    )
    first = covariant_derivative(lam, m, valence="ll")  # [c, a, b]
    second = covariant_derivative(first, m, valence="lll")  # [e, c, a, b]
    cov_lap = grid.dealias(np.einsum("ec...,ecab...->ab...", m.ginv, second))
    term_pdiff = div_form - cov_lap

    # i V^s nabla_s lam
    term_adv = 1j * grid.dealias(np.einsum("s...,sab...->ab...", s.V, first))

    # 2i A^s (nabla_s - d_s) lam, the covariant completion of the magnetic term
    A_up = grid.dealias(np.einsum("gs...,s...->g...", m.ginv, s.A))
    term_a_gamma = -2j * grid.dealias(np.einsum("s...,sab...->ab...", A_up, first - dlam))

    # -i (nabla_s A^s) lam + (B + A_s A^s - V_s A^s) lam
    term_divA = -1j * grid.dealias(np.einsum("...,ab...->ab...", s.B, lam))
    AA = grid.dealias(np.einsum("s...,s...->...", A_up, s.A))
    VA = grid.dealias(np.einsum("s...,s...->...", s.V, s.A))
    term_pot = grid.dealias(np.einsum("...,ab...->ab...", s.B + AA - VA, lam))

    # i lam^g_a nabla_b V_g + i lam^g_b nabla_a V_g
    lam_up = grid.dealias(np.einsum("gs...,sa...->ga...", m.ginv, lam))
    V_low = grid.dealias(np.einsum("gs...,s...->g...", m.g, s.V))
    nabV = covariant_derivative(V_low, m, valence="l")  # [b, g]
    half = grid.dealias(np.einsum("ga...,bg...->ab...", lam_up, nabV))
    term_lamV = 1j * (half + np.swapaxes(half, 0, 1))

    # psi Re(lam_{ad} lambar^d_b)
    quad = grid.dealias(np.real(np.einsum("as...,sb...->ab...", lam, np.conj(lam_up))))
    term_psi = grid.dealias(np.einsum("...,ab...->ab...", psi, quad))

    # -Re(lam_{sd} lambar_{ab} - lam_{sb} lambar_{ad}) lam^{sd}
    lam_upup = grid.dealias(np.einsum("sc...,dm...,cm...->sd...", m.ginv, m.ginv, lam))
    re_part = grid.dealias(
        np.real(
            np.einsum("sd...,ab...->sdab...", lam, np.conj(lam))
            - np.einsum("sb...,ad...->sdab...", lam, np.conj(lam))
        )
    )
    term_curv = -grid.dealias(np.einsum("sdab...,sd...->ab...", re_part, lam_upup))

    # -lam_{am} lambar^m_s lam^s_b
    chain = grid.dealias(np.einsum("am...,ms...->as...", lam, np.conj(lam_up)))
    term_chain = -grid.dealias(np.einsum("as...,sb...->ab...", chain, lam_up))

    terms = {
        "principal_difference": term_pdiff,
        "advection": term_adv,
        "magnetic_covariant_correction": term_a_gamma,
        "div_A": term_divA,
        "potential": term_pot,
        "lambda_grad_V": term_lamV,
        "psi_quadratic": term_psi,
        "curvature_cubic": term_curv,
        "cubic_chain": term_chain,
    }
    total = sum(terms.values())
    total = 0.5 * (total + np.swapaxes(total, 0, 1))
    if breakdown:
        return total, terms
    return total


def _remainder(grid: Grid, s: GaugeState, lam, F):
    """W(lam) with d_t lam = i Lap lam + W; the flat phase is handled exactly."""
    d = grid.d
    ginv_dev = s.metric.ginv - _identity(grid)
    dlam = np.stack([grid.deriv(lam, a) for a in range(d)])
    flux = sum(
        grid.deriv(grid.dealias(np.einsum("...,ab...->ab...", ginv_dev[mu, nu], dlam[nu])), mu)
        for mu in range(d)
        for nu in range(d)
    )
    A_up = grid.dealias(np.einsum("gs...,s...->g...", s.metric.ginv, s.A))
    adv = grid.dealias(np.einsum("s...,sab...->ab...", A_up, dlam))
    return 1j * flux - 2.0 * adv - 1j * F


def step_schrodinger(sf: SecondForm, s_mid: GaugeState, dt, frozen_source: SecondForm | None = None) -> SecondForm:
    """One Strang-split step at the midpoint gauge.

    With frozen_source the nonlinearity is evaluated on that second form (the
    linear solve of one Picard sweep); otherwise F is re-evaluated on the
    current stage values.
    """
    if dt <= 0:
        raise SmcfValidationError(f"dt must be positive, got {dt}")
    grid = s_mid.grid
    phase = np.exp(-1j * grid.k_sq * dt / 2.0)

    def free_half(lam):
        return grid.ifft(phase * grid.fft(lam))

    if frozen_source is not None:
        F_frozen = assemble_nonlinearity(frozen_source, s_mid)

    def W(lam):
        if frozen_source is not None:
            F = F_frozen
        else:
            F = assemble_nonlinearity(SecondForm.from_lambda(grid, lam, s_mid.metric), s_mid)
        return _remainder(grid, s_mid, lam, F)

    lam1 = free_half(sf.lam)
    k1 = W(lam1)
    k2 = W(lam1 + dt * k1)
    lam2 = lam1 + 0.5 * dt * (k1 + k2)
    lam3 = free_half(lam2)
    if not np.all(np.isfinite(lam3)):
        raise BlowupError("second form became non-finite during a step", t=s_mid.t)
    return SecondForm.from_lambda(grid, lam3, s_mid.metric)


# -- trajectory drivers ----------------------------------------------------------


def _record(t, s: GaugeState, sf: SecondForm):
    return TrajectoryRecord(t=t, g=s.metric.g.copy(), A=s.A.copy(), lam=sf.lam.copy(), psi=sf.psi.copy())


def _basic_diagnostics(grid, t, s, sf):
    return {
        "t": t,
        "lambda_l2": grid.l2(sf.lam),
        "lambda_linf": grid.linf(sf.lam),
        "h_l2": grid.l2(s.metric.h),
        "A_l2": grid.l2(s.A),
        "metric_eig_min": s.metric.eig_min(),
    }


def _check_blowup(grid, lam, t, threshold):
    worst = grid.linf(lam)
    if not np.isfinite(worst) or worst > threshold:
        raise BlowupError(f"|lambda| reached {worst:.3e} at t={t:.6g}", t=t)


def _midpoint_gauge(grid, s0: GaugeState, s1: GaugeState):
    return gauge_state_from(grid, 0.5 * (s0.metric.g + s1.metric.g), 0.5 * (s0.A + s1.A), t=0.5 * (s0.t + s1.t))


def evolve_coupled(
    sf0: SecondForm,
    gauge0: GaugeState,
    T,
    dt,
    sign_variant="minus",
    snapshot_every=1,
    blowup_threshold=1e3,
) -> Trajectory:
    """Per-step re-coupling: predictor lambda step, gauge step, midpoint correction."""
    grid = gauge0.grid
    nsteps = max(1, int(round(T / dt)))
    dt = T / nsteps
    s, sf = gauge0, sf0
    traj = Trajectory(grid=grid, records=[_record(0.0, s, sf)], meta={"dt": dt, "mode": "perstep"})
    traj.diagnostics.append(_basic_diagnostics(grid, 0.0, s, sf))
    for step in range(1, nsteps + 1):
        t_new = step * dt
        sf_pred = step_schrodinger(sf, s, dt)
        s_pred = step_parabolic(s, (sf, sf_pred), dt, sign_variant)
        s_mid = _midpoint_gauge(grid, s, s_pred)
        sf_new = step_schrodinger(sf, s_mid, dt)
        s_new = step_parabolic(s, (sf, sf_new), dt, sign_variant)
        sf_new = SecondForm.from_lambda(grid, sf_new.lam, s_new.metric)
        _check_blowup(grid, sf_new.lam, t_new, blowup_threshold)
        s, sf = s_new, sf_new
        if step % snapshot_every == 0 or step == nsteps:
            traj.records.append(_record(t_new, s, sf))
            traj.diagnostics.append(_basic_diagnostics(grid, t_new, s, sf))
    return traj


def evolve_slab(
    sf0: SecondForm,
    gauge0: GaugeState,
    T,
    dt,
    sweeps=3,
    tol=None,
    sign_variant="minus",
    blowup_threshold=1e3,
) -> Trajectory:
    """Whole-slab Picard iteration with trivial initialization.

    Each sweep solves the parabolic system on [0, T] driven by the previous
    lambda iterate, then the linear Schroedinger equation with those
    coefficients and the previous iterate in the source.
    """
    grid = gauge0.grid
    nsteps = max(1, int(round(T / dt)))
    dt = T / nsteps
    zero_sf = SecondForm(
        grid,
        np.zeros((grid.d, grid.d) + grid.shape, dtype=complex),
        np.zeros(grid.shape, dtype=complex),
    )
    lam_path = [zero_sf] * (nsteps + 1)
    distances = []
    gauge_path = None
    for sweep in range(1, sweeps + 1):
        gauge_path = [gauge0]
        s = gauge0
        for i in range(nsteps):
            s = step_parabolic(s, (lam_path[i], lam_path[i + 1]), dt, sign_variant)
            gauge_path.append(s)
        new_path = [sf0]
        sf = sf0
        for i in range(nsteps):
            s_mid = _midpoint_gauge(grid, gauge_path[i], gauge_path[i + 1])
            src = SecondForm(
                grid,
                0.5 * (lam_path[i].lam + lam_path[i + 1].lam),
                0.5 * (lam_path[i].psi + lam_path[i + 1].psi),
            )
            sf = step_schrodinger(sf, s_mid, dt, frozen_source=src)
            _check_blowup(grid, sf.lam, (i + 1) * dt, blowup_threshold)
            new_path.append(sf)
        distance = max(
            grid.l2(new_path[i].lam - lam_path[i].lam) for i in range(nsteps + 1)
        )
        distances.append(distance)
        lam_path = new_path
        if len(distances) >= 3 and distances[-1] > distances[-2] > distances[-3]:
            raise IterationDivergenceError(
                f"Picard sweep distances grew over three sweeps: {distances[-3:]}"
            )
        if tol is not None and distance <= tol:
            break
    traj = Trajectory(grid=grid, records=[], meta={"dt": dt, "mode": "slab", "sweep_distances": distances})
    for i in range(nsteps + 1):
        s = gauge_path[i]
        sf = SecondForm.from_lambda(grid, lam_path[i].lam, s.metric)
        traj.records.append(_record(i * dt, s, sf))
        traj.diagnostics.append(_basic_diagnostics(grid, i * dt, s, sf))
    return traj


def picard_evolve(
    sf0: SecondForm,
    gauge0: GaugeState,
    T,
    dt,
    sweeps=3,
    tol=None,
    mode="perstep",
    sign_variant="minus",
    snapshot_every=1,
    blowup_threshold=1e3,
) -> Trajectory:
    """Evolve the coupled system on [0, T]; see the module docstring for modes."""
    if T <= 0 or dt <= 0:
        raise SmcfValidationError("T and dt must be positive")
    if mode == "perstep":
        return evolve_coupled(
            sf0, gauge0, T, dt, sign_variant=sign_variant, snapshot_every=snapshot_every, blowup_threshold=blowup_threshold
        )
    if mode == "slab":
        return evolve_slab(
            sf0, gauge0, T, dt, sweeps=sweeps, tol=tol, sign_variant=sign_variant, blowup_threshold=blowup_threshold
        )
    raise SmcfValidationError(f"mode must be 'perstep' or 'slab', got {mode!r}")
