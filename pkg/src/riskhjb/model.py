"""Problem data: controlled SDE, safe set, costs and the Cole-Hopf constant.

All fields are vectorized: a state argument ``x`` has shape ``(..., n)`` and
the time argument ``t`` is a scalar.  Matrix fields return ``(..., n, m)``
style arrays so a whole grid or a whole Monte Carlo batch is evaluated in
one call.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import NoCompatibleLambda, OutsideDomain, ValidationError

INTERIOR, BOUNDARY, EXTERIOR = 0, 1, 2

LAMBDA_RTOL = 1e-10


def _const_field(value):
    value = np.asarray(value, dtype=float)

    def evaluate(x, t):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        return np.broadcast_to(value, lead + value.shape).copy()

    return evaluate


class SdeModel:
    """Control-affine SDE ``dx = f dt + g u dt + sigma dw``.

    The first ``uncontrolled_dim`` state entries form the block that is not
    directly actuated; the corresponding rows of ``g`` and ``sigma`` must
    vanish.
    """

    def __init__(self, state_dim, control_dim, noise_dim, drift, control_matrix,
                 noise_matrix, uncontrolled_dim=0, time_invariant=True):
        if min(state_dim, control_dim, noise_dim) < 1:
            raise ValidationError("dimensions must be positive", "model")
        if not 0 <= uncontrolled_dim <= state_dim:
            raise ValidationError("uncontrolled_dim must lie in [0, n]", "model")
        self.state_dim = int(state_dim)
        self.control_dim = int(control_dim)
        self.noise_dim = int(noise_dim)
        self.uncontrolled_dim = int(uncontrolled_dim)
        self.time_invariant = bool(time_invariant)
        self._drift = drift
        self._control_matrix = control_matrix
        self._noise_matrix = noise_matrix

    @classmethod
    def linear(cls, drift_matrix, control_matrix, noise_matrix, uncontrolled_dim=0):
        """``f = A x``, constant ``g`` and ``sigma``."""
        A = np.atleast_2d(np.asarray(drift_matrix, dtype=float))
        B = np.atleast_2d(np.asarray(control_matrix, dtype=float))
        S = np.atleast_2d(np.asarray(noise_matrix, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or S.shape[0] != n:
            raise ValidationError("inconsistent matrix shapes", "model")

        def drift(x, t):
            return np.asarray(x, dtype=float) @ A.T

        return cls(n, B.shape[1], S.shape[1], drift, _const_field(B),
                   _const_field(S), uncontrolled_dim=uncontrolled_dim)

    def drift(self, x, t):
        return np.asarray(self._drift(x, t), dtype=float)

    def control_matrix(self, x, t):
        return np.asarray(self._control_matrix(x, t), dtype=float)

    def noise_matrix(self, x, t):
        return np.asarray(self._noise_matrix(x, t), dtype=float)

    def diffusion(self, x, t):
        """``sigma sigma^T`` with shape ``(..., n, n)``."""
        s = self.noise_matrix(x, t)
        return s @ np.swapaxes(s, -1, -2)

    def check_partition(self, x, t):
        l = self.uncontrolled_dim
        if l == 0:
            return
        g = self.control_matrix(x, t)
        s = self.noise_matrix(x, t)
        if np.any(g[..., :l, :] != 0) or np.any(s[..., :l, :] != 0):
            raise ValidationError(
                f"rows 1..{l} of g and sigma must vanish for the declared partition",
                "model.uncontrolled_dim")


# --------------------------------------------------------------------------
# safe sets
# --------------------------------------------------------------------------


def _box_inside_distance(x, lo, hi):
    """Signed distance to an axis-aligned box, positive inside."""
    d = np.maximum(lo - x, x - hi)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(d.max(axis=-1), 0.0)
    return -(outside + inside)


class SafeSet:
    """Bounded open region described by a signed distance (positive inside)."""

    boundary_tolerance: float = 0.0

    @property
    def bounds(self):
        raise NotImplementedError

    def signed_distance(self, x):
        raise NotImplementedError

    def classify(self, x, tol=None):
        tol = self.boundary_tolerance if tol is None else tol
        d = self.signed_distance(x)
        out = np.full(d.shape, BOUNDARY, dtype=np.int8)
        out[d > tol] = INTERIOR
        out[d < -tol] = EXTERIOR
        return out

    def contains(self, x):
        return self.signed_distance(x) > 0

    def crossing_probability(self, x_old, x_new, var):
        """Chance that a Brownian bridge between two inside points touches the boundary.

        ``var`` is the per-axis bridge variance of each path.  The generic
        estimate treats the nearest boundary as a plane.
        """
        a = np.maximum(self.signed_distance(x_old), 0.0)
        b = np.maximum(self.signed_distance(x_new), 0.0)
        return _plane_crossing(a, b, var)


def _plane_crossing(a, b, var):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where((a > 0) & (b > 0), np.exp(-2.0 * a * b / var), 1.0)


class RectAnnulus(SafeSet):
    """Outer box minus the closure of an optional inner box."""

    def __init__(self, outer_lo, outer_hi, inner_lo=None, inner_hi=None,
                 boundary_tolerance=0.0):
        self.outer_lo = np.asarray(outer_lo, dtype=float)
        self.outer_hi = np.asarray(outer_hi, dtype=float)
        if self.outer_lo.shape != self.outer_hi.shape or self.outer_lo.ndim != 1:
            raise ValidationError("outer bounds must be matching vectors", "safe_set.outer")
        if np.any(self.outer_hi <= self.outer_lo):
            raise ValidationError("outer rectangle is empty", "safe_set.outer")
        if (inner_lo is None) != (inner_hi is None):
            raise ValidationError("give both inner bounds or neither", "safe_set.inner")
        self.inner_lo = self.inner_hi = None
        if inner_lo is not None:
            self.inner_lo = np.asarray(inner_lo, dtype=float)
            self.inner_hi = np.asarray(inner_hi, dtype=float)
            if self.inner_lo.shape != self.outer_lo.shape:
                raise ValidationError("inner bounds have the wrong dimension", "safe_set.inner")
            if np.any(self.inner_hi <= self.inner_lo):
                raise ValidationError("inner rectangle is empty", "safe_set.inner")
            if np.any(self.inner_lo <= self.outer_lo) or np.any(self.inner_hi >= self.outer_hi):
                raise ValidationError("inner rectangle must lie strictly inside the outer one",
                                      "safe_set.inner")
        self.boundary_tolerance = float(boundary_tolerance)

    @property
    def dim(self):
        return self.outer_lo.size

    @property
    def bounds(self):
        return np.stack([self.outer_lo, self.outer_hi], axis=1)

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        d = _box_inside_distance(x, self.outer_lo, self.outer_hi)
        if self.inner_lo is not None:
            d = np.minimum(d, -_box_inside_distance(x, self.inner_lo, self.inner_hi))
        return d

    def crossing_probability(self, x_old, x_new, var):
        """Per-face bridge crossing, combined as independent events.

        An obstacle face counts only while both endpoints lie in the slab it
        spans, so paths passing a convex corner are not over-counted.
        """
        x_old = np.asarray(x_old, dtype=float)
        x_new = np.asarray(x_new, dtype=float)
        var = np.asarray(var, dtype=float)[:, None]
        stay = np.ones(x_old.shape[0])
        for a, b in ((x_old - self.outer_lo, x_new - self.outer_lo),
                     (self.outer_hi - x_old, self.outer_hi - x_new)):
            stay *= np.prod(1.0 - _plane_crossing(a, b, var), axis=1)
        if self.inner_lo is not None:
            lo, hi = self.inner_lo, self.inner_hi
            inside = (x_old >= lo) & (x_old <= hi) & (x_new >= lo) & (x_new <= hi)
            for k in range(self.dim):
                others = np.delete(inside, k, axis=1).all(axis=1)
                for a, b in ((lo[k] - x_old[:, k], lo[k] - x_new[:, k]),
                             (x_old[:, k] - hi[k], x_new[:, k] - hi[k])):
                    same_side = others & (a > 0) & (b > 0)
                    p = np.where(same_side, _plane_crossing(a, b, var[:, 0]), 0.0)
                    stay *= 1.0 - p
        return 1.0 - stay


class FunctionSafeSet(SafeSet):
    """Safe set given by a user signed-distance function and a bounding box."""

    def __init__(self, signed_distance, bounds, boundary_tolerance=0.0):
        self._sd = signed_distance
        self._bounds = np.asarray(bounds, dtype=float)
        self.boundary_tolerance = float(boundary_tolerance)

    @property
    def dim(self):
        return self._bounds.shape[0]

    @property
    def bounds(self):
        return self._bounds

    def signed_distance(self, x):
        return np.asarray(self._sd(np.asarray(x, dtype=float)), dtype=float)


# --------------------------------------------------------------------------
# costs
# --------------------------------------------------------------------------


def quadratic(coef=1.0, center=None):
    """``coef * |x - center|^2`` usable as terminal or running cost."""

    def evaluate(x, t=None):
        x = np.asarray(x, dtype=float)
        c = 0.0 if center is None else np.asarray(center, dtype=float)
        return coef * np.sum((x - c) ** 2, axis=-1)

    return evaluate


def constant(value=0.0):
    def evaluate(x, t=None):
        return np.full(np.asarray(x).shape[:-1], float(value))

    return evaluate


def _identity_weight(m, scale=1.0):
    return _const_field(scale * np.eye(m))


@dataclass(frozen=True)
class CostSpec:
    """Terminal cost, running cost, control weight and exit penalty.

    ``terminal(x)`` and ``running(x, t)`` return ``(...)`` arrays;
    ``control_weight(x, t)`` returns ``(..., m, m)``.
    """

    terminal: Callable
    running: Callable
    control_weight: Callable
    eta: float
    bump_margin: float = 0.0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValidationError("eta must be nonnegative", "cost.eta")
        if not self.bump_margin >= 0:
            raise ValidationError("bump margin must be nonnegative", "cost.delta")

    @classmethod
    def scalar_weight(cls, m, weight, terminal, running, eta, bump_margin=0.0):
        if weight <= 0:
            raise ValidationError("control weight must be positive", "cost.R")
        return cls(terminal, running, _identity_weight(m, weight), eta, bump_margin)

    def with_shift(self, c):
        """Add the constant ``c`` to both the terminal cost and the exit penalty."""
        psi = self.terminal
        return replace(self, terminal=lambda x, t=None: psi(x) + c, eta=self.eta + c)


def verify_lambda(model, cost, probe_points):
    """Return the scalar ``lam`` with ``sigma sigma^T = lam g R^-1 g^T`` at every probe.

    ``probe_points`` is a sequence of ``(x, t)`` pairs.  Raises
    :class:`NoCompatibleLambda` when no single positive multiple fits.
    """
    probe_points = list(probe_points)
    if not probe_points:
        raise ValidationError("need at least one probe point", "probe_points")
    lams = []
    for x, t in probe_points:
        x = np.asarray(x, dtype=float)[None]
        a = model.diffusion(x, t)[0]
        g = model.control_matrix(x, t)[0]
        r = cost.control_weight(x, t)[0]
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            raise ValidationError("control weight is not positive definite", "cost.R")
        b = g @ np.linalg.solve(r, g.T)
        bb = np.sum(b * b)
        if bb == 0:
            raise NoCompatibleLambda("g R^-1 g^T vanishes")
        lam = np.sum(a * b) / bb
        scale = max(np.abs(a).max(), np.abs(lam * b).max())
        if not lam > 0 or np.abs(a - lam * b).max() > LAMBDA_RTOL * scale:
            raise NoCompatibleLambda(
                f"sigma sigma^T is not a positive multiple of g R^-1 g^T at x={x[0]}, t={t}")
        lams.append(lam)
    lams = np.asarray(lams)
    if np.abs(lams - lams[0]).max() > LAMBDA_RTOL * lams[0]:
        raise NoCompatibleLambda("the multiple differs between probe points")
    return float(lams[0])


def lattice_probes(safe_set, t0, T, per_axis=5):
    """Coarse lattice of closed-domain probe points used for the lambda check."""
    b = safe_set.bounds
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in b]
    pts = np.array(list(itertools.product(*axes)))
    keep = safe_set.classify(pts, tol=0.0) != EXTERIOR
    pts = pts[keep]
    return [(x, t) for t in (t0, 0.5 * (t0 + T), T) for x in pts]


@dataclass(frozen=True)
class Problem:
    """Model, safe set and cost bundled with the derived Cole-Hopf constant."""

    model: SdeModel
    safe_set: SafeSet
    cost: CostSpec
    t0: float
    T: float
    lam: float = field(default=None)

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValidationError("horizon must satisfy T > t0", "horizon")
        if self.lam is None:
            probes = lattice_probes(self.safe_set, self.t0, self.T)
            for x, t in probes:
                self.model.check_partition(x[None], t)
            object.__setattr__(self, "lam", verify_lambda(self.model, self.cost, probes))

    def with_cost(self, cost):
        return replace(self, cost=cost, lam=None)


# --------------------------------------------------------------------------
# boundary data
# --------------------------------------------------------------------------


def smoothstep(u):
    """Quintic smoothstep, clamped to [0, 1] outside the unit interval."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def bump(x, safe_set, delta):
    """Smooth cutoff equal to 1 at distance >= ``delta`` from the boundary."""
    d = np.maximum(safe_set.signed_distance(x), 0.0)
    if delta <= 0:
        return (d > 0).astype(float)
    return smoothstep(np.minimum(d, delta) / delta)


def _blend(x, safe_set, terminal, eta, smooth, delta, tol):
    x = np.asarray(x, dtype=float)
    cls = safe_set.classify(x, tol)
    if np.any(cls == EXTERIOR):
        raise OutsideDomain("state lies outside the closed safe set")
    psi = np.broadcast_to(terminal(x), cls.shape).astype(float)
    if smooth and delta > 0:
        b = bump(x, safe_set, delta)
        out = psi * b + eta * (1.0 - b)
    else:
        out = psi.copy()
    out[cls == BOUNDARY] = eta
    return out


def phi(x, cost, safe_set, smooth=False, tol=None, delta=None):
    """Boundary data of the value function: ``psi`` inside, ``eta`` on the boundary."""
    delta = cost.bump_margin if delta is None else delta
    return _blend(x, safe_set, cost.terminal, cost.eta, smooth, delta, tol)


def phi_tilde(x, safe_set, smooth=False, delta=0.0, tol=None):
    """Boundary data of the risk PDE: the boundary indicator."""
    return _blend(x, safe_set, constant(0.0), 1.0, smooth, delta, tol)
