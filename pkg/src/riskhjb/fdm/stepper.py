"""Adaptive implicit trapezoidal integration of linear ODE systems.

The trapezoidal rule is second order and A-stable.  Its local error is
estimated by comparing it with the backward-Euler formula evaluated at the
trapezoidal solution, ``err = h/2 (F0 - F1)``, which needs no second linear
solve.  Step sizes follow a PI controller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import LinearSolveFailure, StepFailure

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
K_I, K_P = 0.35, 0.2
HOLD = 1.2
GAMMA = 2.0 - np.sqrt(2.0)
SCHEMES = ("trapezoid", "trbdf2")


class LinearODE:
    """``dy/ds = A(s) y + b(s)``.

    ``matrix`` and ``forcing`` are either constants or callables of ``s``.
    """

    def __init__(self, matrix, forcing=None):
        self._matrix = matrix
        self._forcing = forcing
        self.constant = not (callable(matrix) or callable(forcing))
        n = (matrix(0.0) if callable(matrix) else matrix).shape[0]
        self.size = n

    def matrix(self, s):
        return self._matrix(s) if callable(self._matrix) else self._matrix

    def forcing(self, s):
        if self._forcing is None:
            return 0.0
        return self._forcing(s) if callable(self._forcing) else self._forcing

    def rhs(self, s, y):
        return self.matrix(s) @ y + self.forcing(s)


def _as_system(L):
    if isinstance(L, LinearODE):
        return L
    if hasattr(L, "A") and hasattr(L, "B"):
        return LinearODE(L.A)
    return LinearODE(sp.csr_matrix(L))


@dataclass
class StepStats:
    accepted: int = 0
    rejected: int = 0
    factorizations: int = 0
    h_min: float = np.inf
    h_max: float = 0.0
    extra: dict = field(default_factory=dict)


class TrapezoidIntegrator:
    """Adaptive integrator for :class:`LinearODE` systems.

    ``scheme="trapezoid"`` is the plain trapezoidal rule.  ``"trbdf2"``
    follows a trapezoidal stage over ``GAMMA*h`` with a BDF2 stage; both
    stages share one matrix, and the combination is L-stable, which damps
    the stiff modes a trapezoidal step would leave oscillating.
    """

    def __init__(self, system, rtol=1e-3, atol=1e-12, scheme="trapezoid"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        self.system = system
        self.rtol = float(rtol)
        self.atol = atol
        self.stats = StepStats()
        self._lu = None
        self._lu_key = None
        self.h_next = None

    def set_system(self, system):
        """Swap in a new system, keeping statistics and the step-size history."""
        self.system = system
        self._lu = None
        self._lu_key = None

    def _solver(self, s1, h):
        key = h if self.system.constant else (s1, h)
        if self._lu_key != key:
            n = self.system.size
            M = (sp.identity(n, format="csc") - 0.5 * h * self.system.matrix(s1)).tocsc()
            try:
                self._lu = spla.splu(M)
            except RuntimeError as exc:
                raise LinearSolveFailure(f"implicit system is singular: {exc}") from exc
            self._lu_key = key
            self.stats.factorizations += 1
        return self._lu

    def attempt(self, s0, y0, F0, h):
        """One step; returns ``(y1, F1, error_norm)``."""
        if self.scheme == "trbdf2":
            y1, F1, err = self._trbdf2(s0, y0, F0, h)
        else:
            s1 = s0 + h
            b1 = self.system.forcing(s1)
            lu = self._solver(s1, h)
            y1 = lu.solve(y0 + 0.5 * h * (F0 + b1))
            _check(y1)
            F1 = self.system.matrix(s1) @ y1 + b1
            err = 0.5 * h * (F0 - F1)
        scale = self.atol + self.rtol * np.maximum(np.abs(y0), np.abs(y1))
        en = float(np.max(np.abs(err) / scale)) if y1.size else 0.0
        return y1, F1, en

    def _trbdf2(self, s0, y0, F0, h):
        g = GAMMA
        sg, s1 = s0 + g * h, s0 + h
        bg = self.system.forcing(sg)
        # Both stages solve with I - (g/2) h A, so a constant system needs
        # one factorization per step size.
        yg = self._solver(sg, g * h).solve(y0 + 0.5 * g * h * (F0 + bg))
        _check(yg)
        Fg = self.system.matrix(sg) @ yg + bg
        b1 = self.system.forcing(s1)
        c = 1.0 / (g * (2.0 - g))
        rhs = c * yg - c * (1.0 - g) ** 2 * y0 + 0.5 * g * h * b1
        y1 = self._solver(s1, g * h).solve(rhs)
        _check(y1)
        F1 = self.system.matrix(s1) @ y1 + b1
        k = (-3.0 * g * g + 4.0 * g - 2.0) / (12.0 * (2.0 - g))
        err = 2.0 * k * h * (F0 / g - Fg / (g * (1.0 - g)) + F1 / (1.0 - g))
        return y1, F1, err

    def integrate(self, y0, s_end, s_out, s0=0.0, h0=None):
        """Integrate from ``s0`` to ``s_end``; returns values at ``s_out``.

        ``s_out`` must be sorted ascending inside ``[s0, s_end]``.  Values
        between accepted steps come from cubic Hermite interpolation.
        """
        s_out = np.asarray(s_out, dtype=float)
        out = np.empty((s_out.size, np.size(y0)))
        span = s_end - s0
        h_floor = 1e-12 * max(span, 1.0)
        h = min(span, 1e-4 * span if h0 is None else h0)
        y = np.array(y0, dtype=float)
        s = s0
        F = self.system.rhs(s, y)
        k = 0
        while k < s_out.size and s_out[k] <= s:
            out[k] = y
            k += 1
        en_prev = 1.0
        while s < s_end:
            h_step = min(h, s_end - s)
            if s_end - (s + h_step) < 1e-10 * span:
                h_step = s_end - s
            y1, F1, en = self.attempt(s, y, F, h_step)
            if en <= 1.0:
                s1 = s_end if h_step == s_end - s else s + h_step
                while k < s_out.size and s_out[k] <= s1:
                    out[k] = y1 if s_out[k] == s1 else _hermite(s, y, F, s1, y1, F1, s_out[k])
                    k += 1
                s, y, F = s1, y1, F1
                self.stats.accepted += 1
                self.stats.h_min = min(self.stats.h_min, h_step)
                self.stats.h_max = max(self.stats.h_max, h_step)
                fac = FAC_MAX if en == 0 else SAFETY * en ** -K_I * en_prev ** K_P
                fac = min(FAC_MAX, max(FAC_MIN, fac))
                if self.system.constant and 1.0 <= fac < HOLD:
                    fac = 1.0
                en_prev = max(en, 1e-4)
                if h_step == h:
                    h = h * fac
            else:
                self.stats.rejected += 1
                h = h_step * max(FAC_MIN, SAFETY * en ** -0.5)
                if h < h_floor:
                    raise StepFailure(f"step size underflow at s={s:.6g}")
        while k < s_out.size:
            out[k] = y
            k += 1
        self.h_next = h
        return out


def _check(y):
    if not np.all(np.isfinite(y)):
        raise LinearSolveFailure("non-finite values after the implicit solve")


def _hermite(s0, y0, F0, s1, y1, F1, s):
    h = s1 - s0
    th = (s - s0) / h
    h00 = (1 + 2 * th) * (1 - th) ** 2
    h10 = th * (1 - th) ** 2
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    return h00 * y0 + h10 * h * F0 + h01 * y1 + h11 * h * F1


def implicit_step(L, values, dt_try, tolerance, atol=1e-12, s=0.0):
    """Single adaptive trapezoidal step of ``dy/ds = L y``.

    Returns ``(new_values, dt_next, accepted)``; on rejection ``new_values``
    is the unchanged input.
    """
    system = _as_system(L)
    integ = TrapezoidIntegrator(system, rtol=tolerance, atol=atol)
    y = np.asarray(values, dtype=float)
    F0 = system.rhs(s, y)
    y1, _, en = integ.attempt(s, y, F0, dt_try)
    if en <= 1.0:
        fac = FAC_MAX if en == 0 else min(FAC_MAX, max(FAC_MIN, SAFETY * en ** -K_I))
        return y1, dt_try * fac, True
    return y, dt_try * max(FAC_MIN, SAFETY * en ** -0.5), False
