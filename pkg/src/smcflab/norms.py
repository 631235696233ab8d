"""Discrete norms and frequency envelopes used as diagnostics and assertions.

The Y-type norms are infima over atomic decompositions and cannot be computed
exactly; every function here with an ``_upper`` suffix evaluates the canonical
one-term decomposition (the full dyadic block at cube scale 2^|j|) and is
therefore an UPPER BOUND surrogate: monotone, reproducible, and guaranteed to
dominate the true norm.

Scale conventions: the dyadic index j = 0 sits at physical wavenumber 1, and
cube partitions are measured in box units (the box length L is the only unit
carrier).  Cube scales larger than the box are capped at one cube covering
the whole box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScaleExceedsBoxError, SmcfValidationError
from .grid import Grid, GridField, _smoothstep


@dataclass(frozen=True)
class EnvelopeParams:
    """Sobolev index s, slack delta, and the derived low-frequency weight."""

    s: float
    delta: float

    def __post_init__(self):
        # the slack must leave room under s - d/2 for every supported d;
        # the d-dependent part of the check happens where a grid is known
        if not self.delta > 0:
            raise SmcfValidationError(f"delta must be positive, got {self.delta}")

    def validate_for(self, d: int):
        if not self.delta < self.s - d / 2:
            raise SmcfValidationError(
                f"need 0 < delta < s - d/2, got delta={self.delta}, s={self.s}, d={d}"
            )

    def sigma_d(self, d: int) -> float:
        return d / 2 - self.delta


@dataclass
class Envelope:
    """Slowly varying majorant of the dyadic block norms of one field."""

    values: np.ndarray
    delta: float

    def is_slowly_varying(self, tol=1e-12):
        a = self.values
        j = np.arange(len(a))
        bound = a[None, :] * 2.0 ** (self.delta * np.abs(j[:, None] - j[None, :]))
        return bool(np.all(a[:, None] <= bound + tol * np.max(a, initial=0.0)))


def _japanese_bracket_sq(grid: Grid, s: float):
    return (1.0 + grid.k_sq) ** s


def sobolev_norm(f: GridField, s: float) -> float:
    """Inhomogeneous H^s norm with grid measure."""
    if not -4.0 <= s <= 6.0:
        raise SmcfValidationError(f"s must lie in [-4, 6], got {s}")
    grid = f.grid
    hat = f.hat
    weight = _japanese_bracket_sq(grid, s)
    total = np.sum(weight * np.abs(hat) ** 2) * grid.L**grid.d / grid.n ** (2 * grid.d)
    return float(np.sqrt(total))


def _as_field_series(series):
    out = []
    for item in series:
        if isinstance(item, GridField):
            out.append(item)
        else:
            out.append(item[1])
    if not out:
        raise SmcfValidationError("empty time series")
    return out


def s_block_norms(f: GridField, s_weight=None):
    """L2 norms of the S_j blocks, j = 0..J (J covers the resolvable spectrum)."""
    grid = f.grid
    J = max(0, max(grid.lp_band_range()))
    hat = f.hat
    meas = grid.L**grid.d / grid.n ** (2 * grid.d)
    out = np.zeros(J + 1)
    for j in range(J + 1):
        mult = grid.lp_multiplier(j, "S")
        w = np.abs(mult * hat) ** 2
        if s_weight is not None:
            w = w * s_weight
        out[j] = np.sqrt(np.sum(w) * meas)
    return out


def z_norm(series, sigma: float, s: float) -> float:
    """Time-sup inside each dyadic block, then weighted l2 across blocks."""
    fields = _as_field_series(series)
    grid = fields[0].grid
    J = max(0, max(grid.lp_band_range()))
    sup = np.zeros(J + 1)
    for f in fields:
        hat = f.hat
        meas = grid.L**grid.d / grid.n ** (2 * grid.d)
        for j in range(J + 1):
            mult = grid.lp_multiplier(j, "S")
            if j == 0 and sigma != 0.0:
                mag = np.where(grid.k_mag > 0, grid.k_mag, 1.0)
                frac = np.where(grid.k_mag > 0, mag**sigma, 0.0)
                mult = mult * frac
            val = np.sqrt(np.sum(np.abs(mult * hat) ** 2) * meas)
            sup[j] = max(sup[j], val)
    weights = np.array([1.0] + [2.0 ** (2 * s * j) for j in range(1, J + 1)])
    return float(np.sqrt(np.sum(weights * sup**2)))


# -- cube partitions -------------------------------------------------------


def _axis_weights(grid: Grid, m: int):
    """Smooth 1D partition of unity with m cells and 10%-width overlap.

    Adjacent transitions use the exp-smoothstep, whose two halves sum to one
    exactly, so the cell weights sum to 1 without renormalization.
    """
    if m == 1:
        return np.ones((1, grid.n))
    c = grid.L / m
    x = grid.x1d
    w = np.zeros((m, grid.n))
    half_overlap = 0.05 * c
    for i in range(m):
        center = (i + 0.5) * c
        u = np.abs((x - center + grid.L / 2) % grid.L - grid.L / 2)  # periodic distance
        t = (c / 2 + half_overlap - u) / (2 * half_overlap)
        w[i] = np.clip(_smoothstep(np.clip(t, 0.0, 1.0)), 0.0, 1.0)
        w[i][u <= c / 2 - half_overlap] = 1.0
        w[i][u >= c / 2 + half_overlap] = 0.0
    return w


def cube_weights(grid: Grid, scale: float):
    """Partition-of-unity weights chi_Q at the given physical scale.

    Returns an array (n_cubes, *grid.shape); the weights sum to 1 pointwise.
    """
    m = max(1, int(round(grid.L / scale)))
    per = _axis_weights(grid, m)
    if grid.d == 1:
        return per
    if grid.d == 2:
        return np.einsum("ix,jy->ijxy", per, per).reshape(m * m, grid.n, grid.n)
    return np.einsum("ix,jy,kz->ijkxyz", per, per, per).reshape(m**3, *grid.shape)


def cube_partition_norm(f: GridField, j: int, p, inner: str = "l2") -> float:
    """l^p over cubes of side ~2^j of the inner norm of chi_Q * f."""
    grid = f.grid
    scale = 2.0**j
    if scale > grid.L * (1 + 1e-12):
        raise ScaleExceedsBoxError(f"cube scale 2^{j} exceeds box length {grid.L}")
    return _lp_cubes(grid, f.values, scale, p, inner)


def _lp_cubes(grid: Grid, values, scale, p, inner):
    chis = cube_weights(grid, scale)
    vals = np.abs(np.asarray(values))
    if inner == "l2":
        per = np.sqrt(np.sum((chis * vals) ** 2, axis=tuple(range(1, grid.d + 1))) * grid.cell_volume)
    elif inner == "linf":
        per = np.max(chis * vals, axis=tuple(range(1, grid.d + 1)))
    else:
        raise SmcfValidationError(f"inner norm must be 'l2' or 'linf', got {inner!r}")
    if p in (np.inf, "inf"):
        return float(np.max(per))
    if p == 1:
        return float(np.sum(per))
    if p == 2:
        return float(np.sqrt(np.sum(per**2)))
    raise SmcfValidationError(f"p must be 1, 2 or 'inf', got {p!r}")


# -- Y-norm upper-bound surrogates -------------------------------------------


def _y0j_upper(grid: Grid, pj_values, j: int) -> float:
    """Canonical one-term decomposition value for one dyadic block.

    Uses h_{j,|j|} = P_j h, i.e. the l1 cube sum at scale 2^|j| with unit
    weight.  Cube scales beyond the box collapse to a single cube.
    """
    scale = min(2.0 ** abs(j), grid.L)
    return _lp_cubes(grid, pj_values, scale, 1, "l2")


def y0_norm_upper(f: GridField, s: float, delta: float) -> float:
    """Upper bound for the weighted-in-frequency cube-l1 norm of f."""
    grid = f.grid
    total = 0.0
    for j in grid.lp_band_range():
        pj = grid.lp_project(f.values, j, "P")
        block = _y0j_upper(grid, pj, j)
        if block == 0.0:
            continue
        w = 2.0 ** ((grid.d / 2 - delta) * min(j, 0) + s * max(j, 0))
        total += (w * block) ** 2
    return float(np.sqrt(total))


def y0_lo_norm_upper(f: GridField, delta: float) -> float:
    """Low-frequency variant: high band measured once, l2 over negative bands."""
    grid = f.grid
    hat = f.hat
    lo_mult = sum(grid.lp_multiplier(j, "P") for j in grid.lp_band_range() if j < 0)
    hi = grid.ifft(hat * (1.0 - lo_mult))
    hi_val = max(_y0j_upper(grid, hi, 0), grid.linf(hi))
    total = hi_val**2
    for j in grid.lp_band_range():
        if j >= 0:
            continue
        pj = grid.lp_project(f.values, j, "P")
        block = _y0j_upper(grid, pj, j)
        total += (2.0 ** ((grid.d / 2 - delta) * j) * block) ** 2
    return float(np.sqrt(total))


# -- frequency envelopes -----------------------------------------------------


def frequency_envelope(f: GridField, params: EnvelopeParams) -> Envelope:
    """a_j = 2^{-delta j} ||u|| + max_k 2^{-delta |j-k|} ||S_k u||, U = H^s."""
    grid = f.grid
    params.validate_for(grid.d)
    weight = _japanese_bracket_sq(grid, params.s)
    blocks = s_block_norms(f, s_weight=weight)
    total = sobolev_norm(f, params.s)
    J = len(blocks) - 1
    j = np.arange(J + 1)
    damp = 2.0 ** (-params.delta * np.abs(j[:, None] - j[None, :]))
    a = 2.0 ** (-params.delta * j) * total + np.max(damp * blocks[None, :], axis=1)
    return Envelope(values=a, delta=params.delta)


# -- diagnostics output --------------------------------------------------------


class DiagnosticsCSV:
    """Append-only (t, name, value) rows with fixed 17-significant-digit text."""

    def __init__(self, path):
        self.path = path
        with open(self.path, "w") as fh:
            fh.write("t,name,value\n")

    def append(self, t, name, value):
        with open(self.path, "a") as fh:
            fh.write(f"{t:.17g},{name},{value:.17g}\n")

    def append_many(self, t, pairs):
        with open(self.path, "a") as fh:
            for name, value in pairs:
                fh.write(f"{t:.17g},{name},{value:.17g}\n")
