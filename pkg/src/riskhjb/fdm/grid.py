"""Tensor grid over the bounding box of a safe set, with node classification."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError

INTERIOR, BOUNDARY, EXCLUDED = 0, 1, 2


class Grid:
    """Uniform tensor grid with interior / boundary / excluded node masks.

    A node is *boundary* when its distance to the safe-set boundary is at
    most ``tol`` (half the smallest spacing by default), *interior* when it
    lies further inside and *excluded* otherwise.  Fields on the grid are
    stored as full arrays of ``shape``; flat indices follow C order.
    """

    def __init__(self, safe_set, shape, bounds=None, tol=None):
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        bounds = np.asarray(safe_set.bounds if bounds is None else bounds, dtype=float)
        if bounds.shape != (len(shape), 2):
            raise ValidationError("grid shape does not match the state dimension", "solver.grid")
        if min(shape) < 3:
            raise ValidationError("need at least 3 nodes per axis", "solver.grid")
        self.safe_set = safe_set
        self.shape = shape
        self.bounds = bounds
        self.axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, shape)]
        self.h = np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(bounds, shape)])
        self.tol = 0.5 * self.h.min() if tol is None else float(tol)

        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], axis=-1)
        sd = safe_set.signed_distance(self.points)
        mask = np.full(sd.shape, BOUNDARY, dtype=np.int8)
        mask[sd > self.tol] = INTERIOR
        mask[sd < -self.tol] = EXCLUDED
        self.signed_distance = sd.reshape(shape)
        self.mask = mask.reshape(shape)
        flat = self.mask.ravel()
        self.interior_idx = np.flatnonzero(flat == INTERIOR)
        self.boundary_idx = np.flatnonzero(flat == BOUNDARY)
        self.valid_idx = np.flatnonzero(flat != EXCLUDED)
        if self.interior_idx.size == 0:
            raise ValidationError("grid has no interior nodes", "solver.grid")

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def n_interior(self):
        return self.interior_idx.size

    def full(self, interior_values=None, boundary_values=None, fill=np.nan):
        """Assemble a full-grid array from interior and boundary node values."""
        out = np.full(self.size, fill, dtype=float)
        if interior_values is not None:
            out[self.interior_idx] = interior_values
        if boundary_values is not None:
            out[self.boundary_idx] = boundary_values
        return out.reshape(self.shape)

    def nearest_node(self, x):
        """Multi-index of the node closest to each state in ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = [np.clip(np.rint((x[:, a] - lo) / self.h[a]), 0, n - 1).astype(int)
               for a, ((lo, _), n) in enumerate(zip(self.bounds, self.shape))]
        return tuple(idx)
