"""Backward-in-time solves of the desirability and risk PDEs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import PositivityLoss, ValidationError
from ..model import INTERIOR, phi, phi_tilde
from .operator import RiskOperator, assemble_generator, assemble_risk_generator
from .stepper import LinearODE, TrapezoidIntegrator

log = logging.getLogger(__name__)

XI_FLOOR = 1e-12
FLOOR_FRACTION = 1e-3
GAUGE_EXPONENT = 1000.0
OVERSHOOT_TOL = 1e-6


@dataclass(frozen=True)
class GridField:
    grid: object
    t: float
    values: np.ndarray


@dataclass
class FieldSeries:
    """Time-indexed full-grid fields; ``values[k]`` is the field at ``times[k]``."""

    grid: object
    times: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def __getitem__(self, k):
        return GridField(self.grid, float(self.times[k]), self.values[k])

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=0, atol=1e-9):
            raise ValidationError(f"no stored slice at t={t}")
        return k

    def at(self, t):
        return self.values[self.index(t)]

    def interpolate(self, x, t, fill=np.nan):
        """Multilinear interpolation of the slice at ``t`` at states ``x``."""
        vals = self.at(t)
        vals = np.where(np.isfinite(vals), vals, fill)
        f = RegularGridInterpolator(self.grid.axes, vals, bounds_error=False, fill_value=fill)
        return f(np.atleast_2d(x))


def default_delta(grid):
    return 2.0 * float(grid.h.min())


def _reverse_times(times, T):
    times = np.sort(np.asarray(times, dtype=float))
    return times, (T - times)[::-1]


@dataclass
class HJBSolution:
    """Desirability and value function on the grid.

    ``xi`` is stored scaled by ``exp(shift / lam)`` with ``shift`` at the middle
    of the range of the boundary data, so the stored values straddle one and
    use the floating-point range on both sides; ``J = shift - lam log(xi)``.
    """

    xi: FieldSeries
    J: FieldSeries
    shift: float
    lam: float

    @property
    def times(self):
        return self.J.times


def solve_linearized_hjb(problem, grid, stencils, output_times, rtol=1e-3, atol=None,
                         smooth=True, delta=None, floor_fraction=FLOOR_FRACTION,
                         scheme="trapezoid"):
    """Solve the Cole-Hopf transformed HJB equation backward from ``problem.T``."""
    cost, lam, T = problem.cost, problem.lam, problem.T
    if delta is None:
        delta = cost.bump_margin if cost.bump_margin > 0 else default_delta(grid)
    times, s_out = _reverse_times(output_times, T)
    if times[0] < problem.t0 - 1e-12 or times[-1] > T + 1e-12:
        raise ValidationError("output times must lie in [t0, T]", "solver.output_dt")

    valid = grid.valid_idx
    phi_nodes = np.full(grid.size, np.nan)
    phi_nodes[valid] = phi(grid.points[valid], cost, grid.safe_set, smooth=smooth,
                           tol=grid.tol, delta=delta)
    # The xi equation is linear and homogeneous, so any constant gauge is exact.
    lo, hi = float(np.nanmin(phi_nodes)), float(np.nanmax(phi_nodes))
    shift = lo + 0.5 * min(hi - lo, GAUGE_EXPONENT * lam)
    xi_T = np.exp(-(phi_nodes - shift) / lam)
    y_b = xi_T[grid.boundary_idx]
    y0 = xi_T[grid.interior_idx]
    if atol is None:
        atol = 1e-2 * rtol * float(y_b.min()) if y_b.size else 1e-12 * rtol

    if problem.model.time_invariant:
        gen = assemble_generator(problem, grid, stencils, T)
        system = LinearODE(gen.A, gen.forcing(y_b))
    else:
        cache = {}

        def _gen(s):
            if s not in cache:
                cache.clear()
                cache[s] = assemble_generator(problem, grid, stencils, T - s)
            return cache[s]

        system = LinearODE(lambda s: _gen(s).A, lambda s: _gen(s).forcing(y_b))

    integ = TrapezoidIntegrator(system, rtol=rtol, atol=atol, scheme=scheme)
    sol = integ.integrate(y0, T - times[0], s_out)[::-1]

    K = times.size
    xi = np.full((K, grid.size), np.nan)
    xi[:, grid.interior_idx] = sol
    xi[:, grid.boundary_idx] = y_b
    J = np.full_like(xi, np.nan)
    # Counted over every stored node off the terminal slice: a thin layer just
    # before T may undershoot, a misconfigured lambda floors most slices.
    low = np.zeros(K, dtype=int)
    for k in range(K):
        if np.isclose(times[k], T, rtol=0, atol=1e-12):
            xi[k] = xi_T
            J[k] = phi_nodes
            continue
        v = xi[k, valid]
        low[k] = np.count_nonzero(v < XI_FLOOR)
        J[k, valid] = shift - lam * np.log(np.maximum(v, XI_FLOOR))
    stored = max(1, K - 1) * valid.size
    floored = low.sum() / stored
    if floored > floor_fraction:
        k = int(np.argmax(low))
        raise PositivityLoss(
            f"{100 * floored:.2f}% of stored nodes fell below the positivity floor "
            f"(worst slice t={times[k]:.4g}, {100 * low[k] / valid.size:.2f}%)")
    shape = (K,) + grid.shape
    diag = {"steps": integ.stats.accepted, "rejected": integ.stats.rejected,
            "factorizations": integ.stats.factorizations, "floored_fraction": floored,
            "worst_slice_floored": low.max() / valid.size,
            "delta": delta, "atol": atol}
    return HJBSolution(FieldSeries(grid, times, xi.reshape(shape), diag),
                       FieldSeries(grid, times, J.reshape(shape), diag), shift, lam)


@dataclass
class RiskSolution:
    J: FieldSeries
    t0: float
    max_overshoot: float

    def p_fail(self, x0, t=None):
        """Failure probability from ``x0``; exactly one off the open safe set."""
        t = self.t0 if t is None else t
        x0 = np.atleast_2d(x0)
        if self.J.grid.safe_set.classify(x0, tol=0.0)[0] != INTERIOR:
            return 1.0
        return float(self.J.interpolate(x0, t, fill=1.0)[0])


def solve_risk_pde(problem, policy, grid, stencils, t0=None, T=None, output_times=None,
                   rtol=1e-3, atol=None, smooth=False, delta=0.0, advection="fitted",
                   scheme="trbdf2"):
    """Failure probability field of a given feedback policy.

    ``policy`` is a :class:`PolicyTable` on ``grid`` or ``None`` for ``u = 0``.
    Values are clipped to ``[0, 1]``; the largest excursion is reported.
    """
    t0 = problem.t0 if t0 is None else t0
    T = problem.T if T is None else T
    if output_times is None:
        output_times = [t0]
    times, s_out = _reverse_times(output_times, T)
    valid = grid.valid_idx
    phi_nodes = np.full(grid.size, np.nan)
    phi_nodes[valid] = phi_tilde(grid.points[valid], grid.safe_set, smooth=smooth,
                                 delta=delta, tol=grid.tol)
    y_b = phi_nodes[grid.boundary_idx]
    y0 = phi_nodes[grid.interior_idx]
    if atol is None:
        atol = 1e-3 * rtol
    m = problem.model.control_dim
    zero = np.zeros((grid.size, m))
    if problem.model.time_invariant:
        op = RiskOperator(problem, grid, stencils, advection)

        def _gen(u, t):
            return op(u)
    else:
        def _gen(u, t):
            return assemble_risk_generator(problem, grid, stencils, u, t)

    # Knots in reverse time where the policy slices change; the policy is
    # frozen at the midpoint of each knot interval.
    knots = [0.0, T - times[0]]
    if policy is not None:
        inside = policy.times[(policy.times > times[0]) & (policy.times < T)]
        knots += list(T - inside)
    knots = np.unique(np.round(knots, 12))

    integ = TrapezoidIntegrator(None, rtol=rtol, atol=atol, scheme=scheme)
    sol = np.tile(y0, (s_out.size, 1))
    y, h = y0, None
    for sa, sb in zip(knots[:-1], knots[1:]):
        tm = T - 0.5 * (sa + sb)
        u = zero if policy is None else policy.node_controls(tm)
        gen = _gen(u, tm)
        integ.set_system(LinearODE(gen.A, gen.forcing(y_b)))
        sel = (s_out >= sa) & (s_out <= sb)
        res = integ.integrate(y, sb, np.append(s_out[sel], sb), s0=sa, h0=h)
        sol[sel] = res[:-1]
        y, h = res[-1], integ.h_next
    sol = sol[::-1]

    K = times.size
    J = np.full((K, grid.size), np.nan)
    J[:, grid.interior_idx] = sol
    J[:, grid.boundary_idx] = y_b
    for k in range(K):
        if np.isclose(times[k], T, rtol=0, atol=1e-12):
            J[k] = phi_nodes
    v = J[:, valid]
    overshoot = float(max(0.0, -v.min(), v.max() - 1.0))
    if overshoot > OVERSHOOT_TOL:
        log.warning("risk PDE left [0, 1] by %.3g; values clipped", overshoot)
    J[:, valid] = np.clip(v, 0.0, 1.0)
    diag = {"steps": integ.stats.accepted, "rejected": integ.stats.rejected,
            "factorizations": integ.stats.factorizations, "max_overshoot": overshoot}
    series = FieldSeries(grid, times, J.reshape((K,) + grid.shape), diag)
    return RiskSolution(series, float(times[0]), overshoot)
