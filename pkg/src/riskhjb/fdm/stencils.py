"""Finite-difference weights from Taylor moment conditions.

Weights are produced by Fornberg's recursion in exact rational arithmetic,
so high-order one-sided stencils carry no round-off from an ill-conditioned
Vandermonde solve.  Grid operators are stored as sparse matrices over the
full (flattened) node set; rows exist only for non-excluded nodes.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..errors import InsufficientNodes, ValidationError
from .grid import BOUNDARY, EXCLUDED, INTERIOR

ORDERS = (2, 4, 6, 8)


@lru_cache(maxsize=None)
def _fornberg(offsets, deriv):
    x = [Fraction(o) for o in offsets]
    n = len(x) - 1
    c = [[Fraction(0)] * (deriv + 1) for _ in range(n + 1)]
    c[0][0] = Fraction(1)
    c1 = Fraction(1)
    c4 = x[0]
    for i in range(1, n + 1):
        mn = min(i, deriv)
        c2 = Fraction(1)
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2
            for k in range(mn, 0, -1):
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3
            c[j][0] = c4 * c[j][0] / c3
        c1 = c2
    return tuple(row[deriv] for row in c)


def fd_weights(offsets, deriv):
    """Weights of the ``deriv``-th derivative at 0 from unit-spaced ``offsets``.

    >>> fd_weights((-1, 0, 1), 1)
    array([-0.5,  0. ,  0.5])
    """
    offsets = tuple(int(o) for o in offsets)
    if len(set(offsets)) != len(offsets):
        raise ValidationError("stencil offsets must be distinct")
    if len(offsets) <= deriv:
        raise InsufficientNodes(f"{len(offsets)} points cannot resolve derivative {deriv}")
    return np.array([float(w) for w in _fornberg(offsets, deriv)])


def fd_weights_exact(offsets, deriv):
    offsets = tuple(int(o) for o in offsets)
    return _fornberg(offsets, deriv)


def _window(left, right, width):
    """Offsets of a ``width``-point window around 0 inside ``[-left, right]``."""
    start = -((width - 1) // 2)
    start = min(max(start, -left), right - width + 1)
    return tuple(range(start, start + width))


def _stencil_width(left, right, order, deriv):
    """Largest-order window that fits; returns (width, order used)."""
    p = order
    while p >= 2:
        half = p // 2
        centred = left >= half and right >= half
        width = p + 1 if (deriv == 1 or centred) else p + 2
        if left + right + 1 >= width:
            return width, p
        p -= 2
    raise InsufficientNodes("fewer than three nodes available along an axis")


def _runs(line, node, interior_walls):
    """Extent (left, right) available to ``node`` along one grid line."""
    n = line.size
    left = 0
    i = node - 1
    while i >= 0 and line[i] != EXCLUDED:
        left += 1
        if interior_walls and line[i] == BOUNDARY:
            break
        i -= 1
    right = 0
    i = node + 1
    while i < n and line[i] != EXCLUDED:
        right += 1
        if interior_walls and line[i] == BOUNDARY:
            break
        i += 1
    return left, right


class StencilSet:
    """Sparse first, second and mixed derivative operators on a grid.

    Interior nodes use windows that stop at the first boundary node on each
    side (the Dirichlet wall).  Boundary nodes get windows over the run of
    non-excluded nodes through them; they are only used to recover gradients.
    """

    def __init__(self, grid, order, first, second, reduced):
        self.grid = grid
        self.order = order
        self.first = first
        self.second = second
        self.reduced = reduced
        self._mixed = {}

    def gradient(self, values):
        """Stencil gradient of a full-grid field; shape ``(n_nodes, d)``."""
        v = np.where(np.isfinite(values), values, 0.0).ravel()
        return np.stack([D @ v for D in self.first], axis=-1)

    def mixed(self, a, b):
        key = (min(a, b), max(a, b))
        if key not in self._mixed:
            self._mixed[key] = _mixed_operator(self.grid, self.order, self.first, *key)
        return self._mixed[key]


def _axis_operators(grid, axis, order, deriv, stats):
    mask = grid.mask
    stride = int(np.ravel_multi_index(tuple(np.eye(grid.ndim, dtype=int)[axis]), grid.shape))
    h = grid.h[axis]
    rows, cols, vals = [], [], []
    moved = np.moveaxis(mask, axis, -1)
    flat_index = np.moveaxis(np.arange(grid.size).reshape(grid.shape), axis, -1)
    lines = moved.reshape(-1, grid.shape[axis])
    idx_lines = flat_index.reshape(-1, grid.shape[axis])
    scale = h ** deriv
    for line, ids in zip(lines, idx_lines):
        for k in np.nonzero(line != EXCLUDED)[0]:
            walls = line[k] == INTERIOR
            left, right = _runs(line, k, walls)
            if left + right + 1 < 3:
                if line[k] == INTERIOR:
                    raise InsufficientNodes("interior node without neighbours along an axis")
                continue
            width, used = _stencil_width(left, right, order, deriv)
            if used < order and line[k] == INTERIOR:
                stats["reduced"] += 1
            offs = _window(left, right, width)
            w = fd_weights(offs, deriv) / scale
            node = ids[k]
            rows.extend([node] * width)
            cols.extend(node + stride * o for o in offs)
            vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def build_stencils(grid, order=4):
    """Derivative operators of formal order ``order`` on ``grid``."""
    if order not in ORDERS:
        raise ValidationError(f"stencil order must be one of {ORDERS}", "solver.order")
    for ax, n in enumerate(grid.shape):
        if n < order + 1:
            raise InsufficientNodes(f"axis {ax} has {n} nodes, order {order} needs {order + 1}")
    stats = {"reduced": 0}
    first = [_axis_operators(grid, a, order, 1, stats) for a in range(grid.ndim)]
    second = [_axis_operators(grid, a, order, 2, stats) for a in range(grid.ndim)]
    return StencilSet(grid, order, first, second, stats["reduced"])


def _mixed_operator(grid, order, first, a, b):
    """Tensor product of the first-derivative windows along axes ``a`` and ``b``.

    Where the product window would touch an excluded node (next to an
    obstacle corner) the row is instead the composition of the axis-``a``
    window with the axis-``b`` operator of the nodes it reaches.
    """
    mask = grid.mask
    shape = grid.shape
    composed = None
    rows, cols, vals = [], [], []
    for node in grid.interior_idx:
        multi = np.array(np.unravel_index(node, shape))
        parts = []
        for ax in (a, b):
            line = np.moveaxis(mask, ax, -1)[tuple(np.delete(multi, ax))]
            left, right = _runs(line, multi[ax], True)
            width, _ = _stencil_width(left, right, order, 1)
            offs = _window(left, right, width)
            parts.append((offs, fd_weights(offs, 1) / grid.h[ax]))
        (oa, wa), (ob, wb) = parts
        entries = []
        for i, w1 in zip(oa, wa):
            for j, w2 in zip(ob, wb):
                m = multi.copy()
                m[a] += i
                m[b] += j
                entries.append((int(np.ravel_multi_index(tuple(m), shape)), w1 * w2))
        if any(mask.flat[nb] == EXCLUDED for nb, _ in entries):
            if composed is None:
                composed = (first[a] @ first[b]).tocsr()
            row = composed.getrow(node)
            reached = first[a].getrow(node).indices
            if any(first[b].getrow(k).nnz == 0 for k in reached):
                raise ValidationError("mixed-derivative stencil reaches an excluded node", "grid")
            entries = list(zip(row.indices, row.data))
        for nb, w in entries:
            rows.append(node)
            cols.append(nb)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))


def upwind_operators(grid, axis, order=1):
    """One-sided first-derivative operators ``(forward, backward)`` along ``axis``.

    Rows exist for interior nodes only.  ``order=2`` uses the three-point
    one-sided formula where the window stays clear of walls and drops to
    the two-point formula otherwise.
    """
    if order not in (1, 2):
        raise ValidationError("upwind order must be 1 or 2")
    mask = grid.mask
    shape = grid.shape
    stride = int(np.ravel_multi_index(tuple(np.eye(grid.ndim, dtype=int)[axis]), shape))
    h = grid.h[axis]
    n_axis = shape[axis]
    pos = np.unravel_index(grid.interior_idx, shape)[axis]
    ops = []
    for sign in (1, -1):
        rows, cols, vals = [], [], []
        for node, k in zip(grid.interior_idx, pos):
            offs = (0, sign)
            if order == 2 and 0 <= k + 2 * sign < n_axis \
                    and mask.flat[node + sign * stride] == INTERIOR \
                    and mask.flat[node + 2 * sign * stride] != EXCLUDED:
                offs = (0, sign, 2 * sign)
            w = fd_weights(offs, 1) / h
            rows.extend([node] * len(offs))
            cols.extend(node + stride * o for o in offs)
            vals.extend(w)
        ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size)))
    return tuple(ops)
