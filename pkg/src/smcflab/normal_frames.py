"""Shared helper: orthonormal normal frames and connections on fixture data."""

from __future__ import annotations

import numpy as np

from .geometry import Immersion, MetricState, gram_schmidt_normal


def graph_normal_bundle(F: Immersion, m: MetricState):
    """Orthonormalized graph frame and its connection A_a = d_a nu1 . nu2."""
    grid = F.grid
    amb = F.ambient_dim
    nu1 = np.zeros((amb,) + grid.shape)
    nu2 = np.zeros((amb,) + grid.shape)
    nu1[grid.d] = 1.0
    nu2[grid.d + 1] = 1.0
    nu1, nu2 = gram_schmidt_normal(F, m, nu1, nu2)
    dnu1 = np.stack([np.stack([grid.deriv(nu1[i], a) for i in range(amb)]) for a in range(grid.d)])
    A = grid.dealias(np.einsum("ai...,i...->a...", dnu1, nu2))
    return nu1, nu2, A
