"""Semi-discrete generators of the desirability and risk PDEs.

Both PDEs are written in reverse time ``s = T - t`` so that the solve marches
forward in ``s``::

    d xi / ds = f . grad xi + 1/2 Tr(sigma sigma^T Hess xi) - (V / lam) xi
    d J  / ds = (f + g u) . grad J + 1/2 Tr(sigma sigma^T Hess J)

On the interior nodes this reads ``dy/ds = A y + B y_b`` where ``y_b`` holds
the Dirichlet data on the boundary nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .stencils import upwind_operators


@dataclass
class Generator:
    A: sp.csr_matrix
    B: sp.csr_matrix

    def apply(self, y, y_boundary):
        return self.A @ y + self.B @ y_boundary

    def forcing(self, y_boundary):
        return self.B @ y_boundary


def generator_from_coefficients(grid, stencils, drift, diffusion, potential=None):
    """Assemble ``drift . grad + 1/2 Tr(diffusion Hess) - potential``.

    ``drift`` is ``(n_nodes, d)``, ``diffusion`` is ``(n_nodes, d, d)`` and
    ``potential`` is ``(n_nodes,)``; only interior rows are read.
    """
    rows = grid.interior_idx
    d = grid.ndim
    L = sp.csr_matrix((rows.size, grid.size))
    for a in range(d):
        L = L + sp.diags(drift[rows, a]) @ stencils.first[a][rows]
        L = L + sp.diags(0.5 * diffusion[rows, a, a]) @ stencils.second[a][rows]
    for a in range(d):
        for b in range(a + 1, d):
            coef = diffusion[rows, a, b]
            if np.any(coef != 0):
                L = L + sp.diags(coef) @ stencils.mixed(a, b)[rows]
    if potential is not None:
        P = sp.csr_matrix((-potential[rows], (np.arange(rows.size), rows)),
                          shape=(rows.size, grid.size))
        L = L + P
    return _split(grid, L)


def assemble_generator(problem, grid, stencils, t=None):
    """Reverse-time generator of the linearized (Cole-Hopf) HJB equation."""
    t = problem.t0 if t is None else t
    x = grid.points
    drift = problem.model.drift(x, t)
    diffusion = problem.model.diffusion(x, t)
    potential = problem.cost.running(x, t) / problem.lam
    return generator_from_coefficients(grid, stencils, drift, diffusion, potential)


def _split(grid, L):
    L = L.tocsc()
    A = L[:, grid.interior_idx].tocsr()
    B = L[:, grid.boundary_idx].tocsr()
    A.eliminate_zeros()
    B.eliminate_zeros()
    return Generator(A, B)


class RiskOperator:
    """Risk generator with the policy-independent part assembled once.

    Only the control drift ``g u`` changes between time slices, so each
    evaluation rescales the rows of precomputed first-derivative blocks.
    ``advection`` selects the drift discretization: ``"centered"`` uses the
    stencil set, ``"upwind"``/``"upwind2"`` use one-sided differences
    oriented along the drift, which keeps the operator monotone.
    ``"fitted"`` is the exponentially fitted three-point scheme: centered
    differences with the axis diffusion ``D`` raised to ``D Pe coth(Pe)``,
    ``Pe = v h / 2D``.  It is monotone for every cell Peclet number and
    second order where diffusion dominates.  Requires a time-invariant model.
    """

    def __init__(self, problem, grid, stencils, advection="fitted"):
        if not problem.model.time_invariant:
            raise ValueError("RiskOperator needs a time-invariant model")
        self.problem, self.grid, self.advection = problem, grid, advection
        x = grid.points
        t = problem.t0
        rows = grid.interior_idx
        self.g = problem.model.control_matrix(x, t)[rows]
        self.f = problem.model.drift(x, t)[rows]
        zero = np.zeros_like(x)
        diffusion = problem.model.diffusion(x, t)
        if advection == "fitted":
            self.D = 0.5 * np.einsum("pii->pi", diffusion[rows])
            off = diffusion.copy()
            for a in range(grid.ndim):
                off[:, a, a] = 0.0
            diffusion = off
        self.base = generator_from_coefficients(grid, stencils, zero, diffusion)
        if advection == "fitted":
            self.first = []
            for a in range(grid.ndim):
                fwd, bwd = upwind_operators(grid, a, 1)
                self.first.append((_split(grid, 0.5 * (fwd + bwd)[rows]),
                                   _split(grid, ((fwd - bwd) / grid.h[a])[rows])))
        elif advection == "centered":
            self.first = [(_split(grid, stencils.first[a][rows]),) for a in range(grid.ndim)]
        elif advection in ("upwind", "upwind2"):
            k = 2 if advection == "upwind2" else 1
            self.first = [tuple(_split(grid, D[rows]) for D in upwind_operators(grid, a, k))
                          for a in range(grid.ndim)]
        else:
            raise ValueError(f"unknown advection scheme {advection!r}")

    def __call__(self, controls):
        v = self.f + np.einsum("pij,pj->pi", self.g, controls[self.grid.interior_idx])
        A, B = self.base.A, self.base.B
        for a, ops in enumerate(self.first):
            if self.advection == "fitted":
                parts = [(v[:, a], ops[0]), (_fitted_diffusion(v[:, a], self.D[:, a],
                                                               self.grid.h[a]), ops[1])]
            elif len(ops) == 1:
                parts = [(v[:, a], ops[0])]
            else:
                parts = [(np.maximum(v[:, a], 0.0), ops[0]), (np.minimum(v[:, a], 0.0), ops[1])]
            for c, D in parts:
                S = sp.diags(c)
                A = A + S @ D.A
                B = B + S @ D.B
        return Generator(A.tocsr(), B.tocsr())


def _fitted_diffusion(v, D, h):
    """``D Pe coth(Pe)`` with ``Pe = v h / 2D``; tends to ``|v| h / 2`` as ``D -> 0``."""
    v = np.abs(v)
    out = np.where(v > 0, 0.5 * v * h, D)
    pos = D > 0
    pe = np.zeros_like(v)
    pe[pos] = v[pos] * h / (2.0 * D[pos])
    small = pos & (pe < 1e-6)
    big = pos & ~small
    out[small] = D[small] * (1.0 + pe[small] ** 2 / 3.0)
    out[big] = 0.5 * v[big] * h / np.tanh(pe[big])
    return out


def assemble_risk_generator(problem, grid, stencils, controls, t):
    """Reverse-time generator of the risk PDE under node controls ``(n_nodes, m)``."""
    x = grid.points
    g = problem.model.control_matrix(x, t)
    drift = problem.model.drift(x, t) + np.einsum("pij,pj->pi", g, controls)
    diffusion = problem.model.diffusion(x, t)
    return generator_from_coefficients(grid, stencils, drift, diffusion)
