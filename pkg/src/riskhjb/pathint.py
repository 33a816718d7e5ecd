"""Path-integral (Feynman-Kac) estimates of the desirability and optimal control.

Everything is evaluated per query state from uncontrolled rollouts; no
grid is involved.  Weights ``exp(-S/lam)`` are shifted by the smallest
sampled cost before exponentiation.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DegenerateWeights, ValidationError
from .fdm.io import coord_names
from .simulate import _n_steps, euler_maruyama_rollout, path_generator, stopped_paths

MIN_ESS = 10.0


def _shifted_weights(S, lam):
    s_min = float(S.min())
    return np.exp(-(S - s_min) / lam), s_min


def effective_sample_size(w):
    return float(w.sum() ** 2 / np.sum(w * w))


def gain_matrix(problem, x, t):
    """``R^-1 g_c^T (g_c R^-1 g_c^T)^-1`` mapping actuated-state increments to controls."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    l = problem.model.uncontrolled_dim
    g = problem.model.control_matrix(x, t)[0]
    R = problem.cost.control_weight(x, t)[0]
    gc = g[l:]
    Rinv_gcT = np.linalg.solve(R, gc.T)
    M = gc @ Rinv_gcT
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise ValidationError("g_c R^-1 g_c^T is singular; the control gain is undefined")
    return Rinv_gcT @ np.linalg.inv(M)


def _uncontrolled(problem, x, t, N, dt, seed, workers):
    x = np.asarray(x, dtype=float)
    return euler_maruyama_rollout(problem.model, None, problem.safe_set, x, t, problem.T, dt,
                                  N, seed, cost=problem.cost, workers=workers,
                                  store_states=False)


def _xi_from_costs(S, lam):
    w, s_min = _shifted_weights(S, lam)
    scale = np.exp(-s_min / lam)
    xi = scale * w.mean()
    se = scale * w.std(ddof=1) / np.sqrt(w.size) if w.size > 1 else 0.0
    return float(xi), float(se)


def desirability(problem, x, t, N=10_000, dt=0.01, seed=0, workers=1):
    """Monte Carlo estimate of ``xi(x, t) = E[exp(-S / lam)]`` and its standard error."""
    batch = _uncontrolled(problem, x, t, N, dt, seed, workers)
    return _xi_from_costs(batch.running_cost, problem.lam)


def value_estimate(problem, x, t, N=10_000, dt=0.01, seed=0, workers=1):
    """``J = -lam log xi`` with a delta-method standard error."""
    batch = _uncontrolled(problem, x, t, N, dt, seed, workers)
    S = batch.running_cost
    w, s_min = _shifted_weights(S, problem.lam)
    mean = w.mean()
    J = s_min - problem.lam * np.log(mean)
    se = problem.lam * (w.std(ddof=1) / np.sqrt(w.size)) / mean if w.size > 1 else 0.0
    return float(J), float(se)


def _control_from_batch(problem, x, t, dt, S, first_noise, min_ess):
    l = problem.model.uncontrolled_dim
    G = gain_matrix(problem, x, t)
    z = first_noise[:, l:] @ G.T / dt
    w, _ = _shifted_weights(S, problem.lam)
    ess = effective_sample_size(w)
    wn = w / w.sum()
    u = wn @ z
    se = np.sqrt(np.sum((wn ** 2)[:, None] * (z - u) ** 2, axis=0))
    if ess < min_ess:
        raise DegenerateWeights(
            f"effective sample size {ess:.1f} below {min_ess}; increase N or lambda")
    return u, ess, se


def optimal_control_pi(problem, x, t, N=10_000, dt=0.01, seed=0, workers=1, min_ess=MIN_ESS):
    """Path-integral optimal control at ``(x, t)``.

    Returns ``(u, diagnostics)``; diagnostics hold the desirability estimate
    and its error, the effective sample size and the per-component
    standard error of ``u``.
    """
    batch = _uncontrolled(problem, x, t, N, dt, seed, workers)
    S = batch.running_cost
    u, ess, se = _control_from_batch(problem, x, t, dt, S, batch.first_noise, min_ess)
    xi, xi_se = _xi_from_costs(S, problem.lam)
    return u, {"xi": xi, "xi_se": xi_se, "n_eff": ess, "u_se": se}


def _state_generator(seed, step, x):
    words = np.frombuffer(np.ascontiguousarray(x, dtype="<f8").tobytes(), dtype="<u4")
    key = np.random.SeedSequence([int(seed), int(step)] + words.tolist()).generate_state(1)[0]
    return path_generator(int(key), step, 2)


class PathIntegralPolicy:
    """Closed-loop controller that re-estimates ``u*`` at every query.

    Rollouts for a query state ``x`` at control step ``j`` draw from a
    stream keyed by ``(seed, j, x)``, so results do not depend on how the
    queries are batched.
    """

    def __init__(self, problem, N=1000, dt=0.01, seed=0, min_ess=1.0):
        self.problem = problem
        self.N = N
        self.dt = dt
        self.seed = seed
        self.min_ess = min_ess

    def __call__(self, x, t):
        p = self.problem
        x = np.atleast_2d(np.asarray(x, dtype=float))
        B = x.shape[0]
        n_steps = _n_steps(t, p.T, self.dt) if p.T - t > 0.5 * self.dt else 0
        if n_steps == 0:
            return np.zeros((B, p.model.control_dim))
        step = int(round((t - p.t0) / self.dt))
        k = p.model.noise_dim
        dw = np.concatenate([
            _state_generator(self.seed, step, xb).standard_normal((self.N, n_steps, k))
            for xb in x]) * np.sqrt(self.dt)
        starts = np.repeat(x, self.N, axis=0)
        res = stopped_paths(p.model, None, p.safe_set, starts, t, self.dt, dw, cost=p.cost,
                            store_states=False)
        S = (res["running_integral"] + res["terminal_cost"]).reshape(B, self.N)
        noise = res["first_noise"].reshape(B, self.N, -1)
        out = np.empty((B, p.model.control_dim))
        for b in range(B):
            out[b] = _control_from_batch(p, x[b], t, self.dt, S[b], noise[b], self.min_ess)[0]
        return out


def batch_query(problem, in_path, out_path, N=10_000, dt=0.01, seed=0, workers=1,
                min_ess=MIN_ESS, digits=None):
    """Evaluate the path-integral control at every ``(x.., t)`` row of a CSV file.

    Row ``i`` uses a seed derived from ``(seed, i)``.  ``digits`` fixes the
    number of decimals written (``xi`` in scientific notation, since it can
    be very small); by default values are written exactly.
    """
    n = problem.model.state_dim
    names = coord_names(n)
    with open(in_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    m = problem.model.control_dim
    unames = [f"u_{c}" for c in coord_names(m)]

    def fmt(v, style="f"):
        return repr(float(v)) if digits is None else f"{float(v):.{digits}{style}}"

    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["t"] + unames + ["xi", "n_eff"])
        for i, row in enumerate(rows):
            try:
                x = np.array([float(row[c]) for c in names])
                t = float(row["t"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ValidationError(f"bad query row {i + 1}: {exc}", "queries") from exc
            sub_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
            u, d = optimal_control_pi(problem, x, t, N, dt, sub_seed, workers, min_ess)
            w.writerow([fmt(v) for v in x] + [fmt(t)] + [fmt(v) for v in u]
                       + [fmt(d["xi"], "e"), fmt(d["n_eff"])])
