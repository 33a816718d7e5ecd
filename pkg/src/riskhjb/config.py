"""Experiment configuration: a versioned TOML key tree with unit comments.

Every key has a default, so a partial file is completed from the defaults.
Keys are addressed by dotted paths (``solver.grid``) both in validation
errors and in command-line overrides.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import tomlkit

from .errors import ValidationError

VERSION = 1
COST_KINDS = ("quadratic", "constant", "zero")
ADVECTION = ("fitted", "upwind", "upwind2", "centered")
SCHEMES = ("trapezoid", "trbdf2")

# Benchmark geometry: the obstacle sits between the start corner and the
# origin.  The outer box keeps |x|^2 below the range that the desirability
# floor can represent at lambda = 0.01.
_BLOCKS = {
    "model": {
        "state_dim": (2, "int", "number of states (the benchmark model is planar)"),
        "k_x": (0.5, "nonneg", "1/s, nominal velocity gain along x"),
        "k_y": (0.5, "nonneg", "1/s, nominal velocity gain along y"),
        "sigma2": (0.01, "pos", "m^2/s, noise intensity per axis"),
    },
    "safe_set": {
        "outer_lo": ([-0.35, -0.35], "vec", "m, lower corner of the outer rectangle"),
        "outer_hi": ([0.35, 0.35], "vec", "m, upper corner of the outer rectangle"),
        "inner_lo": ([-0.2, 0.05], "vec?", "m, lower corner of the obstacle ([] for none)"),
        "inner_hi": ([-0.1, 0.15], "vec?", "m, upper corner of the obstacle ([] for none)"),
    },
    "cost": {
        "running": ("quadratic", "kind", "running cost V: quadratic | constant | zero"),
        "running_coef": (1.0, "float", "cost/s per m^2 (quadratic) or cost/s (constant)"),
        "terminal": ("quadratic", "kind", "terminal cost psi: quadratic | constant | zero"),
        "terminal_coef": (1.0, "float", "cost per m^2 (quadratic) or cost (constant)"),
        "R": (1.0, "pos", "control weight, cost*s/(m/s)^2"),
        "eta": (0.13, "nonneg", "cost, exit penalty (Lagrange multiplier)"),
        "delta": (0.0, "nonneg", "m, boundary smoothing width (0 = two grid spacings)"),
    },
    "solver": {
        "grid": ([96, 96], "ivec", "nodes per axis"),
        "order": (4, "order", "stencil order: 2, 4, 6 or 8"),
        "rtol": (1e-3, "pos", "relative tolerance of the adaptive time stepper"),
        "output_dt": (0.01, "pos", "s, spacing of stored value and policy slices"),
        "scheme": ("trapezoid", "scheme", "value solve time stepper: trapezoid | trbdf2"),
        "advection": ("fitted", "advection",
                      "risk PDE drift scheme: fitted | upwind | upwind2 | centered"),
    },
    "mc": {
        "n_paths": (10000, "posint", "Monte Carlo sample paths"),
        "dt": (0.01, "pos", "s, Euler-Maruyama step"),
        "seed": (0, "seed", "random seed"),
        "bridge": (False, "bool", "Brownian-bridge exit correction between steps"),
        "workers": (1, "posint", "worker threads (results do not depend on this)"),
    },
    "pathint": {
        "n_paths": (10000, "posint", "rollouts per query state"),
        "closed_loop_paths": (200, "posint", "rollouts per state and step in closed-loop runs"),
        "trajectories": (100, "posint", "closed-loop trajectories for risk estimates"),
        "min_ess": (10.0, "pos", "smallest accepted effective sample size"),
    },
    "sweep": {
        "eta": ([0.05, 0.07, 0.09, 0.10, 0.11, 0.12, 0.13], "list", "cost, exit penalties"),
        "sigma2": ([0.01], "list", "m^2/s, noise intensities"),
    },
    "start": {
        "x0": ([-0.305, 0.31], "vec", "m, start state"),
    },
    "horizon": {
        "t0": (0.0, "float", "s, initial time"),
        "T": (2.0, "float", "s, final time"),
    },
}


def defaults():
    data = {"version": VERSION}
    for block, keys in _BLOCKS.items():
        data[block] = {k: copy.deepcopy(v[0]) for k, v in keys.items()}
    return data


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {value!r}", path)
    return float(value)


def _check(kind, value, path):
    if kind == "int" or kind == "posint" or kind == "seed" or kind == "order":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"expected an integer, got {value!r}", path)
        if kind == "posint" and value < 1:
            raise ValidationError("must be a positive integer", path)
        if kind == "seed" and value < 0:
            raise ValidationError("seed must be nonnegative", path)
        if kind == "order" and value not in (2, 4, 6, 8):
            raise ValidationError("stencil order must be 2, 4, 6 or 8", path)
        return int(value)
    if kind in ("float", "pos", "nonneg"):
        v = _number(value, path)
        if kind == "pos" and not v > 0:
            raise ValidationError("must be positive", path)
        if kind == "nonneg" and not v >= 0:
            raise ValidationError("must be nonnegative", path)
        return v
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValidationError(f"expected true or false, got {value!r}", path)
        return value
    if kind == "kind":
        if value not in COST_KINDS:
            raise ValidationError(f"unknown cost {value!r}; choose from {COST_KINDS}", path)
        return str(value)
    if kind == "scheme":
        if value not in SCHEMES:
            raise ValidationError(f"unknown stepper {value!r}; choose from {SCHEMES}", path)
        return str(value)
    if kind == "advection":
        if value not in ADVECTION:
            raise ValidationError(f"unknown scheme {value!r}; choose from {ADVECTION}", path)
        return str(value)
    if kind in ("vec", "vec?", "ivec", "list"):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"expected a list, got {value!r}", path)
        if kind == "ivec":
            return [_check("posint", v, f"{path}[{i}]") for i, v in enumerate(value)]
        out = [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
        if kind == "vec" and not out:
            raise ValidationError("must not be empty", path)
        return out
    raise AssertionError(kind)


def validate(data):
    """Return a completed, type-checked copy of ``data``."""
    if not isinstance(data, dict):
        raise ValidationError("configuration must be a table")
    version = data.get("version", VERSION)
    if version != VERSION:
        raise ValidationError(f"unsupported config version {version!r}", "version")
    out = {"version": VERSION}
    for key in data:
        if key != "version" and key not in _BLOCKS:
            raise ValidationError("unknown block", key)
    for block, keys in _BLOCKS.items():
        given = data.get(block, {})
        if not isinstance(given, dict):
            raise ValidationError("expected a table", block)
        for k in given:
            if k not in keys:
                raise ValidationError("unknown key", f"{block}.{k}")
        out[block] = {}
        for k, (default, kind, _) in keys.items():
            value = given.get(k, copy.deepcopy(default))
            out[block][k] = _check(kind, value, f"{block}.{k}")
    _cross_checks(out)
    return out


def _cross_checks(cfg):
    n = cfg["model"]["state_dim"]
    if n != 2:
        raise ValidationError("the benchmark model has exactly two states", "model.state_dim")
    ss = cfg["safe_set"]
    for k in ("outer_lo", "outer_hi"):
        if len(ss[k]) != n:
            raise ValidationError(f"expected {n} entries", f"safe_set.{k}")
    if any(lo >= hi for lo, hi in zip(ss["outer_lo"], ss["outer_hi"])):
        raise ValidationError("outer lower corner must be below the upper corner", "safe_set.outer")
    if bool(ss["inner_lo"]) != bool(ss["inner_hi"]):
        raise ValidationError("give both obstacle corners or neither", "safe_set.inner")
    if ss["inner_lo"]:
        for k in ("inner_lo", "inner_hi"):
            if len(ss[k]) != n:
                raise ValidationError(f"expected {n} entries", f"safe_set.{k}")
        lo, hi = ss["inner_lo"], ss["inner_hi"]
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValidationError("obstacle lower corner must be below the upper corner",
                                  "safe_set.inner")
        if any(a <= o for a, o in zip(lo, ss["outer_lo"])) or \
                any(b >= o for b, o in zip(hi, ss["outer_hi"])):
            raise ValidationError("obstacle must lie strictly inside the outer rectangle",
                                  "safe_set.inner")
    if len(cfg["solver"]["grid"]) != n:
        raise ValidationError(f"expected {n} entries", "solver.grid")
    if len(cfg["start"]["x0"]) != n:
        raise ValidationError(f"expected {n} entries", "start.x0")
    h = cfg["horizon"]
    if not h["T"] > h["t0"]:
        raise ValidationError("final time must exceed the initial time", "horizon.T")
    for k in ("eta", "sigma2"):
        vals = cfg["sweep"][k]
        kind = "nonneg" if k == "eta" else "pos"
        for i, v in enumerate(vals):
            _check(kind, v, f"sweep.{k}[{i}]")


def _plain(obj):
    """Convert tomlkit containers into plain Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    if isinstance(obj, bool):
        return bool(obj)
    if isinstance(obj, int):
        return int(obj)
    if isinstance(obj, float):
        return float(obj)
    if isinstance(obj, str):
        return str(obj)
    return obj


def parse_text(text):
    try:
        doc = tomlkit.parse(text)
    except Exception as exc:
        raise ValidationError(f"cannot parse configuration: {exc}") from exc
    return validate(_plain(doc))


def load(path, overrides=()):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"configuration file {path} does not exist", "config")
    cfg = parse_text(path.read_text())
    return apply_overrides(cfg, overrides) if overrides else cfg


def _parse_value(raw):
    try:
        return _plain(tomlkit.parse(f"v = {raw}")["v"])
    except Exception:
        return raw


def apply_overrides(cfg, overrides):
    """Apply ``block.key=value`` strings; values use TOML syntax."""
    data = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value", "set")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ValidationError("override keys look like block.key", key.strip())
        block, k = parts
        if block not in _BLOCKS or k not in _BLOCKS[block]:
            raise ValidationError("unknown key", key.strip())
        data[block][k] = _parse_value(raw.strip())
    return validate(data)


def to_toml(cfg):
    """Serialize with one comment per key giving its unit or meaning."""
    doc = tomlkit.document()
    doc.add(tomlkit.comment("risk-minimizing control experiment"))
    doc.add("version", cfg["version"])
    for block, keys in _BLOCKS.items():
        table = tomlkit.table()
        for k, (_, _, note) in keys.items():
            item = tomlkit.item(cfg[block][k])
            item.comment(note)
            table.add(k, item)
        doc.add(tomlkit.nl())
        doc.add(block, table)
    return tomlkit.dumps(doc)


def config_hash(cfg):
    """sha256 of the canonical JSON form; the worker count does not change results."""
    cfg = copy.deepcopy(cfg)
    cfg.get("mc", {}).pop("workers", None)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
