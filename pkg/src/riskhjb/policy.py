"""Optimal feedback recovered from a value field, stored as a lookup table."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import distance_transform_edt

from .errors import TimeOutOfRange, ValidationError
from .fdm.grid import EXCLUDED
from .fdm.io import coord_names, read_lut, write_field_csv, write_lut

TIME_EPS = 1e-9


class PolicyTable:
    """Controls ``u*`` on grid nodes at stored times.

    Interpolation is multilinear in space and linear between the two
    bracketing slices in time.  Queries outside the grid box are clamped to
    the box and flagged.
    """

    def __init__(self, axes, times, values):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.shape = tuple(a.size for a in self.axes)
        if self.values.shape[:-1] != (self.times.size,) + self.shape:
            raise ValidationError("policy values do not match axes and times")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("policy times must be increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("policy table contains non-finite controls")
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])
        self._interp = {}

    @property
    def control_dim(self):
        return self.values.shape[-1]

    @property
    def bounds(self):
        return np.stack([self.lo, self.hi], axis=1)

    def _bracket(self, t):
        if t < self.times[0] - TIME_EPS or t > self.times[-1] + TIME_EPS:
            raise TimeOutOfRange(
                f"t={t} outside stored range [{self.times[0]}, {self.times[-1]}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.times.size - 1)
        if abs(self.times[k] - t) <= TIME_EPS or k == self.times.size - 1:
            return k, k, 0.0
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, float(w)

    def _slice(self, k):
        if k not in self._interp:
            self._interp[k] = RegularGridInterpolator(self.axes, self.values[k], method="linear")
        return self._interp[k]

    def node_controls(self, t):
        """Controls at every node (flat, ``(n_nodes, m)``) at time ``t``."""
        k0, k1, w = self._bracket(t)
        v = self.values[k0].reshape(-1, self.control_dim)
        if w == 0.0:
            return v
        return (1.0 - w) * v + w * self.values[k1].reshape(-1, self.control_dim)

    def lookup(self, x, t, return_flags=False):
        """Control at states ``x`` (``(N, n)`` or ``(n,)``) and time ``t``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        xc = np.clip(x, self.lo, self.hi)
        outside = np.any(xc != x, axis=1)
        k0, k1, w = self._bracket(t)
        u = self._slice(k0)(xc)
        if w != 0.0:
            u = (1.0 - w) * u + w * self._slice(k1)(xc)
        if single:
            u, outside = u[0], outside[0]
        return (u, outside) if return_flags else u

    __call__ = lookup

    def interpolation_bound(self, t):
        """``h^2/8 * max|second difference|`` per component, the bilinear error bound."""
        k = self._bracket(t)[0]
        v = self.values[k]
        bound = np.zeros(self.control_dim)
        for a, ax in enumerate(self.axes):
            h = ax[1] - ax[0]
            d2 = np.abs(np.diff(v, n=2, axis=a)) / h ** 2
            bound += h * h / 8.0 * d2.reshape(-1, self.control_dim).max(axis=0)
        return bound

    def save(self, path):
        write_lut(path, self.bounds, self.times, self.values)

    @classmethod
    def load(cls, path):
        bounds, times, values = read_lut(path)
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, values.shape[1:-1])]
        return cls(axes, times, values)

    def write_csv(self, path, grid, t):
        k = self._bracket(t)[0]
        names = [f"u_{c}" for c in coord_names(self.control_dim)]
        write_field_csv(path, grid, self.values[k].reshape(grid.size, -1), names)


def _fill_excluded(grid, field):
    """Copy each excluded node's value from its nearest non-excluded node."""
    excl = grid.mask == EXCLUDED
    if not excl.any():
        return field
    _, idx = distance_transform_edt(excl, sampling=grid.h, return_indices=True)
    return field[tuple(idx)]


def controls_from_gradient(problem, x, t, grad):
    """``u = -R^-1 g^T grad`` evaluated point-wise."""
    g = problem.model.control_matrix(x, t)
    R = problem.cost.control_weight(x, t)
    v = np.einsum("pij,pi->pj", g, grad)
    return -np.linalg.solve(R, v[..., None])[..., 0]


def policy_from_value(J, problem, stencils):
    """Recover ``u* = -R^-1 g^T grad J`` on every stored slice of ``J``."""
    grid = stencils.grid
    m = problem.model.control_dim
    out = np.empty((len(J.times),) + grid.shape + (m,))
    valid = grid.valid_idx
    x = grid.points[valid]
    for k, t in enumerate(J.times):
        vals = J.values[k]
        if not np.all(np.isfinite(vals.ravel()[grid.interior_idx])):
            raise ValidationError(f"value field is not finite at t={t}")
        grad = stencils.gradient(vals)[valid]
        u = np.zeros((grid.size, m))
        u[valid] = controls_from_gradient(problem, x, t, grad)
        u = u.reshape(grid.shape + (m,))
        out[k] = _fill_excluded(grid, u)
    return PolicyTable(grid.axes, J.times, out)
