"""Builds the planar navigation benchmark from a configuration and runs it."""

from __future__ import annotations

import numpy as np

from .fdm import Grid, build_stencils, solve_linearized_hjb, solve_risk_pde
from .model import CostSpec, Problem, RectAnnulus, SdeModel, constant, quadratic
from .pathint import PathIntegralPolicy
from .policy import policy_from_value
from .simulate import euler_maruyama_rollout, mc_failure_probability


def build_model(cfg, sigma2=None):
    m = cfg["model"]
    s2 = m["sigma2"] if sigma2 is None else sigma2
    A = -np.diag([m["k_x"], m["k_y"]])
    return SdeModel.linear(A, np.eye(2), np.sqrt(s2) * np.eye(2))


def build_safe_set(cfg):
    s = cfg["safe_set"]
    inner_lo = s["inner_lo"] or None
    inner_hi = s["inner_hi"] or None
    return RectAnnulus(s["outer_lo"], s["outer_hi"], inner_lo, inner_hi)


def _cost_field(kind, coef):
    if kind == "quadratic":
        return quadratic(coef)
    if kind == "constant":
        return constant(coef)
    return constant(0.0)


def build_cost(cfg, eta=None):
    c = cfg["cost"]
    return CostSpec.scalar_weight(
        2, c["R"], _cost_field(c["terminal"], c["terminal_coef"]),
        _cost_field(c["running"], c["running_coef"]),
        c["eta"] if eta is None else eta, c["delta"])


def build_problem(cfg, eta=None, sigma2=None):
    h = cfg["horizon"]
    return Problem(build_model(cfg, sigma2), build_safe_set(cfg), build_cost(cfg, eta),
                   h["t0"], h["T"])


def output_times(cfg):
    h = cfg["horizon"]
    dt = cfg["solver"]["output_dt"]
    n = int(round((h["T"] - h["t0"]) / dt))
    times = h["t0"] + dt * np.arange(n + 1)
    times[-1] = h["T"]
    return times


class Workspace:
    """Grid and stencils shared by every solve with the same geometry."""

    def __init__(self, cfg):
        self.grid = Grid(build_safe_set(cfg), cfg["solver"]["grid"])
        self.stencils = build_stencils(self.grid, cfg["solver"]["order"])


def solve_fdm(cfg, eta=None, sigma2=None, ws=None):
    """Desirability solve plus policy recovery; returns a dict of results."""
    ws = ws or Workspace(cfg)
    problem = build_problem(cfg, eta, sigma2)
    sol = solve_linearized_hjb(problem, ws.grid, ws.stencils, output_times(cfg),
                               rtol=cfg["solver"]["rtol"], scheme=cfg["solver"]["scheme"])
    policy = policy_from_value(sol.J, problem, ws.stencils)
    return {"problem": problem, "ws": ws, "solution": sol, "policy": policy}


def start_state(cfg):
    return np.asarray(cfg["start"]["x0"], dtype=float)


def risk_pde(cfg, problem, policy, ws):
    res = solve_risk_pde(problem, policy, ws.grid, ws.stencils, rtol=cfg["solver"]["rtol"],
                         advection=cfg["solver"]["advection"])
    return res.p_fail(start_state(cfg)), res


def rollout(cfg, problem, policy, n_paths=None, store_states=False):
    mc, h = cfg["mc"], cfg["horizon"]
    return euler_maruyama_rollout(problem.model, policy, problem.safe_set, start_state(cfg),
                                  h["t0"], h["T"], mc["dt"],
                                  mc["n_paths"] if n_paths is None else n_paths,
                                  mc["seed"], cost=problem.cost, workers=mc["workers"],
                                  bridge=mc["bridge"], store_states=store_states)


def pathint_policy(cfg, problem):
    return PathIntegralPolicy(problem, N=cfg["pathint"]["closed_loop_paths"],
                              dt=cfg["mc"]["dt"], seed=cfg["mc"]["seed"], min_ess=1.0)


def estimate_risk(cfg, source, problem, policy=None, ws=None):
    """Failure probability of a policy by the risk PDE and by sampling.

    ``source`` is ``"fdm-table"`` (``policy`` a :class:`PolicyTable`),
    ``"zero"`` or ``"pathint"``.  The path-integral controller has no grid
    representation, so both estimates are the closed-loop sample fraction.
    """
    out = {"source": source}
    if source == "pathint":
        ctrl = pathint_policy(cfg, problem)
        batch = rollout(cfg, problem, ctrl, n_paths=cfg["pathint"]["trajectories"])
        p, se = mc_failure_probability(batch)
        out.update(P_fail_pde=p, P_fail_mc=p, standard_error=se, n_paths=batch.count)
        return out
    ws = ws or Workspace(cfg)
    table = policy if source == "fdm-table" else None
    p_pde, res = risk_pde(cfg, problem, table, ws)
    batch = rollout(cfg, problem, table)
    p_mc, se = mc_failure_probability(batch)
    out.update(P_fail_pde=p_pde, P_fail_mc=p_mc, standard_error=se, n_paths=batch.count,
               max_overshoot=res.max_overshoot)
    return out
