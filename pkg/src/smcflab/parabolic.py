"""Heat-gauge dynamics: the parabolic system for (h, A) driven by lambda.

The stepper is an exponential-integrator two-stage scheme (ETD2RK): the flat
Laplacian is applied through its exact spectral exponential, the
variable-coefficient correction (g^{ab} - delta^{ab}) d^2 and every
lower-order term are explicit, evaluated at the midpoint lambda supplied by
the caller.  On spatially homogeneous states the scheme degenerates to Heun's
method on the reduced ODE system, which the tests exploit.

The advection field V and temporal connection component B are never
integrated; they are recomputed from their defining contractions each time a
state is published, so the gauge identities hold on exit by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SmcfValidationError, StepRejectedError
from .geometry import (
    MetricState,
    SecondForm,
    christoffel,
    covariant_derivative,
    curvature,
    ricci_from_lambda,
)
from .grid import Grid

SIGN_VARIANTS = ("minus", "plus")


@dataclass
class GaugeState:
    """Metric with curvature, connection A, and the derived gauge sources V, B."""

    metric: MetricState
    A: np.ndarray  # (d, *shape) real
    B: np.ndarray  # (*shape,) real
    V: np.ndarray  # (d, *shape) real, upper index
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.metric.grid


def compute_gauge_sources(metric: MetricState, A):
    """V^g = g^{ab} Gamma^g_{ab} and B = nabla^a A_a (heat-gauge contractions)."""
    if metric.gamma_u is None:
        metric = christoffel(metric)
    grid = metric.grid
    V = grid.dealias(np.einsum("ab...,gab...->g...", metric.ginv, metric.gamma_u))
    nab_A = covariant_derivative(A, metric, valence="l")  # [b, a] = nabla_b A_a
    B = grid.dealias(np.einsum("ba...,ba...->...", metric.ginv, nab_A))
    return V, B


def gauge_state_from(grid: Grid, g, A, t=0.0) -> GaugeState:
    """Build a fully derived state (Christoffel, curvature, V, B) from (g, A)."""
    metric = curvature(christoffel(MetricState(grid, np.asarray(g, dtype=float))))
    A = np.asarray(A, dtype=float)
    V, B = compute_gauge_sources(metric, A)
    return GaugeState(metric=metric, A=A, B=B, V=V, t=t)


def _lambda_raised(metric: MetricState, lam):
    """lambda^g_a = g^{gs} lambda_{sa}."""
    return metric.grid.dealias(np.einsum("gs...,sa...->ga...", metric.ginv, lam))


def heat_rhs_h(s: GaugeState, sf: SecondForm):
    """Everything on the metric-flow right side except the principal term.

    The Ricci term enters through its second-fundamental-form representation,
    which keeps the right side quadratic; its defect against the curvature of
    g is exactly the T1 monitor.
    """
    m = s.metric
    grid = s.grid
    d = grid.d
    ric_rep = ricci_from_lambda(m, sf.lam, sf.psi)
    term_im = 2.0 * np.imag(np.einsum("...,ab...->ab...", sf.psi, np.conj(sf.lam)))
    term_gg = -2.0 * np.einsum("ab...,mbs...,san...->mn...", m.ginv, m.gamma_l, m.gamma_u)
    dginv = np.stack([np.stack([grid.grad(m.ginv[a, b]) for b in range(d)], axis=1) for a in range(d)], axis=1)
    # dginv[mu, a, b] = d_mu g^{ab}
    term_dg = np.einsum("mab...,abn...->mn...", dginv, m.gamma_l)
    term_dg = term_dg + np.einsum("mn...->nm...", term_dg)
    out = 2.0 * ric_rep + grid.dealias(term_im + term_gg + term_dg)
    return 0.5 * (out + np.swapaxes(out, 0, 1))


def heat_rhs_A(s: GaugeState, sf: SecondForm, sign_variant="minus"):
    """Lower-order terms of the connection flow; the quadratic-curl term's sign
    is the configurable variant."""
    if sign_variant not in SIGN_VARIANTS:
        raise SmcfValidationError(f"sign_variant must be one of {SIGN_VARIANTS}")
    sign = -1.0 if sign_variant == "minus" else 1.0
    m = s.metric
    grid = s.grid
    lam_up = _lambda_raised(m, sf.lam)
    w = grid.dealias(np.imag(np.einsum("ga...,sg...->as...", lam_up, np.conj(sf.lam))))
    nab_w = covariant_derivative(w, m, valence="ll")  # [b, a, s]
    div_w = grid.dealias(np.einsum("sb...,bas...->a...", m.ginv, nab_w))
    A_up = grid.dealias(np.einsum("ds...,s...->d...", m.ginv, s.A))
    ric_rep = ricci_from_lambda(m, sf.lam, sf.psi)
    ric_term = grid.dealias(np.einsum("ad...,d...->a...", ric_rep, A_up))
    dpsi_cov = grid.grad(sf.psi) + 1j * grid.dealias(np.einsum("g...,...->g...", s.A, sf.psi))
    re_term = grid.dealias(np.real(np.einsum("ga...,g...->a...", lam_up, np.conj(dpsi_cov))))
    v_term = grid.dealias(np.einsum("as...,s...->a...", w, s.V))
    return sign * div_w - ric_term + re_term - v_term


def _cov_laplacian_oneform(m: MetricState, A):
    """nabla_s nabla^s A_a for a real one-form."""
    first = covariant_derivative(A, m, valence="l")  # [b, a]
    second = covariant_derivative(first, m, valence="ll")  # [c, b, a]
    return m.grid.dealias(np.einsum("cb...,cba...->a...", m.ginv, second))


def _phi_factors(z):
    """phi1 = (e^z - 1)/z, phi2 = (e^z - 1 - z)/z^2 with stable small-z limits."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-7
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1.0 + z / 2.0, np.expm1(zs) / zs)
    phi2 = np.where(small, 0.5 + z / 6.0, (np.expm1(zs) - zs) / zs**2)
    return phi1, phi2


def step_parabolic(s: GaugeState, lam_path, dt, sign_variant="minus") -> GaugeState:
    """One exponential-integrator step of the (h, A) system.

    lam_path supplies the two second-form slices bracketing the step; the
    lower-order terms are evaluated at their midpoint.
    """
    if dt <= 0:
        raise SmcfValidationError(f"dt must be positive, got {dt}")
    grid = s.grid
    sf_a, sf_b = lam_path
    lam_mid = 0.5 * (sf_a.lam + sf_b.lam)

    ident = np.zeros_like(s.metric.g)
    for a in range(grid.d):
        ident[a, a] = 1.0

    def nonlinear(g, A):
        state = gauge_state_from(grid, g, A, t=s.t)
        m = state.metric
        # psi is retraced with the stage metric: freezing it at the averaged
        # metric leaves an O(dt) coefficient bias that costs one global order
        sf_mid = SecondForm.from_lambda(grid, lam_mid, m)
        d2g = np.empty((grid.d, grid.d) + g.shape[: 2] + grid.shape)
        # d2g[a, b, mu, nu] = d^2_{ab} g_{mu nu}
        for a in range(grid.d):
            for b in range(a, grid.d):
                if a == b:
                    d2g[a, a] = grid.deriv(g, a, 2)
                else:
                    d2g[a, b] = grid.deriv(grid.deriv(g, a), b)
                    d2g[b, a] = d2g[a, b]
        coeff = m.ginv - ident
        Nh = grid.dealias(np.einsum("ab...,abmn...->mn...", coeff, d2g)) + heat_rhs_h(state, sf_mid)
        NA = (
            _cov_laplacian_oneform(m, A)
            - np.stack([grid.laplacian(A[a]) for a in range(grid.d)])
            + heat_rhs_A(state, sf_mid, sign_variant)
        )
        return 0.5 * (Nh + np.swapaxes(Nh, 0, 1)), NA

    z = -grid.k_sq * dt
    E = np.exp(z)
    phi1, phi2 = _phi_factors(z)

    def predict(u, N):
        return grid.ifft(E * grid.fft(u) + dt * phi1 * grid.fft(N)).real

    def correct(u_star, N0, N1):
        return u_star + grid.ifft(dt * phi2 * grid.fft(N1 - N0)).real

    g0, A0 = s.metric.g, s.A
    Nh0, NA0 = nonlinear(g0, A0)
    g_star = predict(g0, Nh0)
    A_star = predict(A0, NA0)
    Nh1, NA1 = nonlinear(g_star, A_star)
    g1 = correct(g_star, Nh0, Nh1)
    A1 = correct(A_star, NA0, NA1)

    g1 = 0.5 * (g1 + np.swapaxes(g1, 0, 1))
    from .geometry import metric_eig_min

    if not np.all(np.isfinite(g1)) or metric_eig_min(grid, g1) <= 0.0:
        raise StepRejectedError(f"metric degenerate after parabolic step at t={s.t + dt}")
    return gauge_state_from(grid, g1, A1, t=s.t + dt)
