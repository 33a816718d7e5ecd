"""Euler-Maruyama rollouts of the controlled SDE, stopped at the exit time."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidStart, NonpositiveStep, ValidationError
from .fdm.io import coord_names
from .model import INTERIOR

CHUNK = 1024
_BRIDGE_SALT = 0x9E3779B97F4A7C15


def path_generator(seed, path, stream=0):
    """Counter-based generator for one path; independent of batch layout."""
    key = (((int(seed) ^ (_BRIDGE_SALT * stream)) % 2 ** 64) << 64) | int(path)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class TrajectoryBatch:
    """Stopped sample paths.

    ``states[i, j]`` is the state of path ``i`` at ``t0 + j*dt``; entries
    after the path's exit step are NaN.  ``exit_step[i]`` is the index of
    the stopping state.
    """

    t0: float
    T: float
    dt: float
    states: np.ndarray
    exit_step: np.ndarray
    exit_flag: np.ndarray
    running_integral: np.ndarray
    terminal_cost: np.ndarray
    first_noise: np.ndarray
    first_increment: np.ndarray
    final_state: np.ndarray

    @property
    def count(self):
        return self.exit_flag.size

    @property
    def n_steps(self):
        return int(round((self.T - self.t0) / self.dt))

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def exit_time(self):
        t = self.t0 + self.dt * self.exit_step
        return np.where(self.exit_step == self.n_steps, self.T, t)

    @property
    def running_cost(self):
        """Cost-to-go ``S`` of each path: running integral plus terminal value."""
        return self.running_integral + self.terminal_cost

    def to_csv(self, path):
        n = self.final_state.shape[1]
        names = coord_names(n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "step", "t"] + names + ["exited"])
            for i in range(self.count):
                for j in range(int(self.exit_step[i]) + 1):
                    x = self.states[i, j]
                    w.writerow([i, j, repr(float(self.t0 + j * self.dt))]
                               + [repr(float(v)) for v in x] + [int(self.exit_flag[i])])


def _n_steps(t0, T, dt):
    if not dt > 0:
        raise NonpositiveStep(f"time step must be positive, got {dt}")
    n = int(round((T - t0) / dt))
    if n < 1 or abs(n * dt - (T - t0)) > 1e-9 * max(1.0, abs(T - t0)):
        raise ValidationError(f"dt={dt} does not divide the horizon [{t0}, {T}]", "mc.dt")
    return n


def euler_maruyama_rollout(model, policy, safe_set, x0, t0, T, dt, N, seed, cost=None,
                           workers=1, bridge=False, store_states=True):
    """Simulate ``N`` independent stopped paths from ``x0``.

    ``policy`` is ``None`` (no control) or a callable ``u(x, t)`` mapping an
    ``(N, n)`` array to ``(N, m)``.  When ``cost`` is given the running
    integral of ``V`` and the exact (non-smoothed) boundary value at the
    stopping state are accumulated.  ``bridge`` enables a Brownian-bridge
    test for crossings between two interior step states.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.state_dim,):
        raise ValidationError("x0 has the wrong dimension", "x0")
    if safe_set.classify(x0[None], tol=0.0)[0] != INTERIOR:
        raise InvalidStart(f"start state {x0} is not in the interior of the safe set")
    if N < 1:
        raise ValidationError("need at least one path", "mc.n_paths")
    n_steps = _n_steps(t0, T, dt)
    chunks = [np.arange(a, min(a + CHUNK, N)) for a in range(0, N, CHUNK)]

    def run(ids):
        dw = np.stack([path_generator(seed, i).standard_normal((n_steps, model.noise_dim))
                       for i in ids]) * np.sqrt(dt)
        uni = None
        if bridge:
            uni = np.stack([path_generator(seed, i, 1).random(n_steps) for i in ids])
        x_start = np.broadcast_to(x0, (ids.size, x0.size))
        return stopped_paths(model, policy, safe_set, x_start, t0, dt, dw, cost=cost,
                             uniforms=uni, store_states=store_states)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    fields = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return TrajectoryBatch(t0=t0, T=T, dt=dt, **fields)


def stopped_paths(model, policy, safe_set, x_start, t0, dt, dw, cost=None, uniforms=None,
                  store_states=True):
    """Vectorized Euler-Maruyama core.

    ``x_start`` is ``(M, n)`` and ``dw`` holds the Wiener increments
    ``(M, n_steps, k)``.  ``uniforms`` (``(M, n_steps)``) switch on the
    Brownian-bridge crossing test.  Returns a dict of per-path arrays.
    """
    M, n_steps = dw.shape[:2]
    n = model.state_dim
    x = np.array(x_start, dtype=float)
    states = np.full((M, n_steps + 1, n) if store_states else (M, 1, n), np.nan)
    states[:, 0] = x
    exit_step = np.full(M, n_steps, dtype=np.int64)
    exited = np.zeros(M, dtype=bool)
    running = np.zeros(M)
    active = np.arange(M)
    first_noise = np.zeros((M, n))
    for j in range(n_steps):
        if active.size == 0:
            break
        t = t0 + j * dt
        xa = x[active]
        drift = model.drift(xa, t)
        if policy is not None:
            g = model.control_matrix(xa, t)
            drift = drift + np.einsum("pij,pj->pi", g, policy(xa, t))
        sig = model.noise_matrix(xa, t)
        noise = np.einsum("pij,pj->pi", sig, dw[active, j])
        if j == 0:
            first_noise[active] = noise
        if cost is not None:
            running[active] += cost.running(xa, t) * dt
        xn = xa + drift * dt + noise
        x[active] = xn
        if store_states:
            states[active, j + 1] = xn
        sd_new = safe_set.signed_distance(xn)
        out = sd_new <= 0.0
        if uniforms is not None:
            var = np.einsum("pii->p", sig @ np.swapaxes(sig, 1, 2)) / n * dt
            live = ~out
            p_cross = np.zeros(out.shape)
            if live.any():
                p_cross[live] = safe_set.crossing_probability(xa[live], xn[live], var[live])
            out |= uniforms[active, j] < p_cross
        if out.any():
            gone = active[out]
            exited[gone] = True
            exit_step[gone] = j + 1
            active = active[~out]
    if not store_states:
        states = x[:, None, :].copy()
    terminal = np.zeros(M)
    if cost is not None:
        terminal[exited] = cost.eta
        safe = ~exited
        terminal[safe] = cost.terminal(x[safe])
    return {"states": states, "exit_step": exit_step, "exit_flag": exited,
            "running_integral": running, "terminal_cost": terminal,
            "first_noise": first_noise, "first_increment": dw[:, 0].copy(),
            "final_state": x.copy()}


def exit_time_of_path(states, safe_set, times):
    """First discrete time at which the path is not strictly inside the safe set.

    Returns ``(exit_time, exited)``; ``(times[-1], False)`` if it never leaves.
    """
    states = np.asarray(states, dtype=float)
    finite = np.all(np.isfinite(states), axis=1)
    cls = safe_set.classify(states[finite], tol=0.0)
    hit = np.flatnonzero(cls != INTERIOR)
    if hit.size:
        return float(np.asarray(times)[finite][hit[0]]), True
    return float(times[-1]), False


def mc_failure_probability(batch):
    """Fraction of exited paths and its binomial standard error."""
    if batch.count == 0:
        raise ValidationError("empty batch")
    p = float(np.mean(batch.exit_flag))
    return p, float(np.sqrt(p * (1.0 - p) / batch.count))


def path_costs(batch, cost, policy=None):
    """Per-path realized cost: stopped integral of ``1/2 u'Ru + V`` plus boundary value."""
    if batch.states.shape[1] != batch.n_steps + 1:
        raise ValidationError("batch was generated without stored states")
    total = np.zeros(batch.count)
    for j in range(batch.n_steps):
        live = np.flatnonzero(batch.exit_step > j)
        if live.size == 0:
            break
        t = batch.t0 + j * batch.dt
        x = batch.states[live, j]
        c = cost.running(x, t)
        if policy is not None:
            u = policy(x, t)
            R = cost.control_weight(x, t)
            c = c + 0.5 * np.einsum("pi,pij,pj->p", u, R, u)
        total[live] += c * batch.dt
    term = np.where(batch.exit_flag, cost.eta, 0.0)
    safe = ~batch.exit_flag
    term[safe] = cost.terminal(batch.final_state[safe])
    return total + term


def estimate_cost(batch, cost, policy=None, return_error=False):
    """Sample-mean estimate of the expected stopped cost under ``policy``."""
    c = path_costs(batch, cost, policy)
    mean = float(c.mean())
    if return_error:
        return mean, float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else 0.0
    return mean
