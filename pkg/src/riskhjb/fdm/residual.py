"""Pointwise residual of the nonlinear HJB equation for a computed value field."""

from __future__ import annotations

import numpy as np


def _spatial_terms(problem, stencils, J, t):
    """``V + f.grad J - 1/2 grad J^T g R^-1 g^T grad J + 1/2 Tr(sigma sigma^T Hess J)``."""
    grid = stencils.grid
    rows = grid.interior_idx
    x = grid.points[rows]
    J = np.asarray(J, dtype=float).ravel()
    d = grid.ndim
    grad = np.stack([(stencils.first[a] @ J)[rows] for a in range(d)], axis=-1)
    model = problem.model
    g = model.control_matrix(x, t)
    R = problem.cost.control_weight(x, t)
    gtp = np.einsum("pij,pi->pj", g, grad)
    quad = np.einsum("pj,pj->p", gtp, np.linalg.solve(R, gtp[..., None])[..., 0])
    a = model.diffusion(x, t)
    out = problem.cost.running(x, t) + np.einsum("pi,pi->p", model.drift(x, t), grad) - 0.5 * quad
    for i in range(d):
        out += 0.5 * a[:, i, i] * (stencils.second[i] @ J)[rows]
        for j in range(i + 1, d):
            if np.any(a[:, i, j] != 0):
                out += a[:, i, j] * (stencils.mixed(i, j) @ J)[rows]
    return out


def hjb_residual(problem, stencils, J_a, J_b, t_a, t_b):
    """HJB residual at interior nodes at the midpoint of two value slices.

    The time derivative is the difference quotient of ``J_b`` and ``J_a``;
    spatial terms use the given stencils averaged over both slices, so the
    result is centered in time at ``(t_a + t_b) / 2``.
    """
    dt = t_b - t_a
    if not dt > 0:
        raise ValueError("t_b must exceed t_a")
    J_a = np.asarray(J_a, dtype=float).ravel()
    J_b = np.asarray(J_b, dtype=float).ravel()
    rows = stencils.grid.interior_idx
    J_t = (J_b[rows] - J_a[rows]) / dt
    space = 0.5 * (_spatial_terms(problem, stencils, J_a, t_a)
                   + _spatial_terms(problem, stencils, J_b, t_b))
    return J_t + space
