import numpy as np
import pytest

from riskhjb.fdm import BOUNDARY, EXCLUDED, INTERIOR, Grid, assemble_generator, build_stencils
from riskhjb.fdm.operator import generator_from_coefficients
from riskhjb.model import CostSpec, Problem, RectAnnulus, SdeModel, constant, quadratic

from conftest import planar_problem

ANNULUS = RectAnnulus([-0.5, -0.5], [0.5, 0.5], [0.1, 0.1], [0.2, 0.2])


def vandermonde_weights(offsets, deriv):
    """Weights from a dense moment solve (independent of the package's recursion)."""
    o = np.asarray(offsets, dtype=float)
    V = np.vander(o, increasing=True).T
    rhs = np.zeros(len(o))
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(V, rhs)


def reach(mask, idx, axis, step):
    """Nodes available from ``idx`` in direction ``step``, stopping on the first wall node."""
    count = 0
    pos = list(idx)
    while True:
        pos[axis] += step
        if not 0 <= pos[axis] < mask.shape[axis] or mask[tuple(pos)] == EXCLUDED:
            return count
        count += 1
        if mask[tuple(pos)] == BOUNDARY:
            return count


def window(left, right, p, deriv):
    while True:
        half = p // 2
        centred = left >= half and right >= half
        width = p + 1 if deriv == 1 or centred else p + 2
        if left + right + 1 >= width:
            break
        p -= 2
    start = min(max(-((width - 1) // 2), -left), right - width + 1)
    return list(range(start, start + width))


def dense_generator(grid, p, drift, diffusion, potential):
    """Naive row-by-row dense assembly over all nodes."""
    mask = grid.mask
    L = np.zeros((grid.size, grid.size))
    for node in grid.interior_idx:
        idx = np.unravel_index(node, grid.shape)
        wins = {}
        for a in range(grid.ndim):
            left, right = reach(mask, idx, a, -1), reach(mask, idx, a, 1)
            for deriv in (1, 2):
                offs = window(left, right, p, deriv)
                w = vandermonde_weights(offs, deriv) / grid.h[a] ** deriv
                wins[a, deriv] = (offs, w)
                coef = drift[node, a] if deriv == 1 else 0.5 * diffusion[node, a, a]
                for o, wk in zip(offs, w):
                    j = list(idx)
                    j[a] += o
                    L[node, np.ravel_multi_index(j, grid.shape)] += coef * wk
        for a in range(grid.ndim):
            for b in range(a + 1, grid.ndim):
                (oa, wa), (ob, wb) = wins[a, 1], wins[b, 1]
                for i, w1 in zip(oa, wa):
                    for k, w2 in zip(ob, wb):
                        j = list(idx)
                        j[a] += i
                        j[b] += k
                        L[node, np.ravel_multi_index(j, grid.shape)] += \
                            diffusion[node, a, b] * w1 * w2
        L[node, node] -= potential[node]
    return L[grid.interior_idx]


def apply_split(gen, grid, field):
    f = field.ravel()
    return gen.A @ f[grid.interior_idx] + gen.B @ f[grid.boundary_idx]


@pytest.mark.parametrize("p", [2, 4, 6])
def test_benchmark_generator_matches_dense_oracle(p):
    problem = planar_problem()
    grid = Grid(ANNULUS, (25, 25))
    gen = assemble_generator(problem, grid, build_stencils(grid, p))
    x = grid.points
    ref = dense_generator(grid, p, problem.model.drift(x, 0.0), problem.model.diffusion(x, 0.0),
                          problem.cost.running(x, 0.0) / problem.lam)
    field = np.exp(-np.sum(x ** 2, axis=1))
    got = apply_split(gen, grid, field)
    want = ref @ field
    assert np.abs(got - want).max() <= 1e-12 * np.abs(want).max()


def test_rotated_diffusion_mixed_term_matches_dense_oracle():
    th = 0.6
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    sigma = Q @ np.diag([0.3, 0.1])
    grid = Grid(RectAnnulus([-1, -1], [1, 1]), (21, 21))
    S = build_stencils(grid, 4)
    x = grid.points
    drift = x @ np.array([[-0.5, 0.2], [0.1, -0.3]]).T
    diffusion = np.broadcast_to(sigma @ sigma.T, (grid.size, 2, 2)).copy()
    potential = np.zeros(grid.size)
    gen = generator_from_coefficients(grid, S, drift, diffusion, potential)
    field = np.sin(x[:, 0] + 2 * x[:, 1]) + x[:, 0] * x[:, 1]
    want = dense_generator(grid, 4, drift, diffusion, potential) @ field
    got = apply_split(gen, grid, field)
    assert np.abs(got - want).max() <= 1e-12 * np.abs(want).max()


def test_pure_diffusion_is_half_laplacian(annulus):
    grid = Grid(annulus, (30, 30))
    S = build_stencils(grid, 4)
    n = grid.size
    gen = generator_from_coefficients(grid, S, np.zeros((n, 2)),
                                      np.broadcast_to(np.eye(2), (n, 2, 2)), np.zeros(n))
    x = grid.points
    field = x[:, 0] ** 2 + 3 * x[:, 1] ** 2
    assert np.allclose(apply_split(gen, grid, field), 0.5 * 8.0, atol=1e-9)


def test_constants_are_annihilated(annulus):
    problem = planar_problem(safe=annulus, running=constant(0.0))
    grid = Grid(annulus, (30, 30))
    gen = assemble_generator(problem, grid, build_stencils(grid, 4))
    assert np.abs(apply_split(gen, grid, np.full(grid.size, 2.5))).max() < 1e-9


def test_interior_rows_only_reference_interior_or_boundary(annulus):
    grid = Grid(annulus, (30, 30))
    gen = assemble_generator(planar_problem(safe=annulus), grid, build_stencils(grid, 8))
    assert gen.A.shape == (grid.n_interior, grid.n_interior)
    assert gen.B.shape == (grid.n_interior, grid.boundary_idx.size)
    assert set(np.unique(grid.mask)) == {INTERIOR, BOUNDARY, EXCLUDED}
