"""Scenario configuration, runs over random grids, ensembles and report files.

A scenario is a JSON object with ``space``, ``kernel``, ``weights`` and
``params`` blocks.  All randomness comes from one master seed split into the
named streams ``grid``, ``weights`` and ``sampling``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time

import jsonschema
import numpy as np

from . import __version__
from .constants import (TwoWeightParams, compute_constants, decay_ratio,
                        offsupport_ratio, operator_norm, weak_boundedness)
from .corona import MODES, build_coronas, build_stopping_cubes, verify_corona_carleson
from .dyadic import DyadicParams, build_system, derive_seed, good_mask
from .operators import Kernel, OperatorMatrix, assemble
from .space import from_descriptor

__all__ = [
    "ConfigError",
    "SCHEMA",
    "load_config",
    "validate_config",
    "make_space",
    "make_operator",
    "make_weights",
    "make_params",
    "run_scenario",
    "run_ensemble",
    "canonical_json",
    "report_rows",
    "write_csv",
]

log = logging.getLogger(__name__)

STREAMS = {"grid": 1, "weights": 2, "sampling": 3}

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["space"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "grids": _POS_INT,
        "timestamps": {"type": "boolean"},
        "space": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["grid1d", "grid2d", "tree", "points"]},
                "n_points": _POS_INT,
                "domain": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "base_measure": {"enum": ["lebesgue", "bessel", "custom"]},
                "lambda": _NUM,
                "a0": {"type": "number", "minimum": 1},
                "mu": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "coords": {"type": "array"},
            },
            "allOf": [
                {"if": {"properties": {"kind": {"enum": ["grid1d", "grid2d", "tree"]}}},
                 "then": {"required": ["n_points"]}},
                {"if": {"properties": {"kind": {"const": "points"}}},
                 "then": {"required": ["coords"]}},
            ],
        },
        "kernel": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["hilbert1d", "riesz", "power", "zero", "matrix"]},
                "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "d": _NUM,
                "component": {"type": "integer", "minimum": 0},
                "entries": {"type": "array", "items": {"type": "array", "items": _NUM}},
            },
        },
        "weights": {
            "type": "object",
            "properties": {
                "family": {"enum": ["power", "lognormal", "disjoint", "spike", "explicit"]},
                "sigma": {"type": "number", "minimum": 0},
                "p": {"type": "number", "minimum": 0, "maximum": 1},
                "a": _NUM,
                "beta_u": _NUM,
                "beta_v": _NUM,
                "spike_at": _NUM,
                "height": {"type": "number", "minimum": 0},
                "floor": {"type": "number", "minimum": 0},
                "u": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "v": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "params": {
            "type": "object",
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "n_dim": {"type": "number", "exclusiveMinimum": 0},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
                "r": {"type": "integer", "minimum": 0},
                "include_self": {"type": "boolean"},
                "goodness": {"type": "boolean"},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eps_good": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "mode": {"enum": ["shifted1d", "generic"]},
                "c0": {"type": "number", "exclusiveMinimum": 0},
                "C0": {"type": "number", "exclusiveMinimum": 0},
                "k_min": {"type": "integer"},
                "k_max": {"type": "integer"},
            },
        },
        "diagnostics": {
            "type": "object",
            "properties": {
                "corona": {"type": "boolean"},
                "modes": {"type": "array", "items": {"enum": list(MODES)}},
                "alpha_t": {"type": "array", "items": _POS_INT},
                "lemmas": {"type": "boolean"},
                "samples": _POS_INT,
                "rho": {"type": "integer", "minimum": 0},
            },
        },
        "surgery": {
            "type": "object",
            "properties": {
                "level": {"type": "integer"},
                "point": {"type": "integer", "minimum": 0},
                "tau_grid": {"type": "array", "items": _NUM},
                "trials": _POS_INT,
            },
        },
        "ensemble": {
            "type": "object",
            "properties": {
                "trials": _POS_INT,
                "resolutions": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid scenario; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, msg, pointer=""):
        super().__init__(f"{pointer or '/'}: {msg}")
        self.pointer = pointer


def validate_config(config):
    """Raise :class:`ConfigError` on the first schema violation (deepest pointer first)."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (-len(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        pointer = "".join(f"/{p}" for p in err.absolute_path)
        raise ConfigError(err.message, pointer)
    try:
        make_params(config)
        dyadic_params(config)
    except ValueError as exc:
        raise ConfigError(str(exc), "/params") from exc
    return config


def load_config(path):
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return validate_config(config)


# -- scenario pieces ------------------------------------------------------------


def stream_seed(seed, name, *key):
    return derive_seed(seed, STREAMS[name], *key)


def make_space(config, n_points=None):
    desc = dict(config["space"])
    if n_points is not None:
        desc["n_points"] = n_points
    try:
        return from_descriptor(desc)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc), "/space") from exc


def make_operator(space, config, validate=True):
    desc = config.get("kernel", {"kind": "hilbert1d"})
    kind = desc.get("kind", "hilbert1d")
    try:
        if kind == "matrix":
            return OperatorMatrix.from_entries(space, desc["entries"])
        d = desc.get("d")
        kernel = Kernel(kind=kind, kappa=float(desc.get("kappa", 1.0)),
                        d=None if d is None else int(d), component=int(desc.get("component", 0)))
        return assemble(space, kernel, validate=validate)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc), "/kernel") from exc


def make_params(config):
    p = config.get("params", {})
    kappa = float(p.get("kappa", config.get("kernel", {}).get("kappa", 1.0)))
    return TwoWeightParams(kappa=kappa, n_dim=float(p.get("n_dim", 1.0)),
                           lam=float(p.get("lambda", 0.2)), r=int(p.get("r", 2)),
                           include_self=bool(p.get("include_self", True)),
                           goodness=bool(p.get("goodness", False)))


def dyadic_params(config):
    p = config.get("params", {})
    mode = p.get("mode", "shifted1d" if config["space"].get("kind") == "grid1d" else "generic")
    delta = float(p.get("delta", 0.5 if mode == "shifted1d" else 1 / 12))
    return DyadicParams(delta=delta, c0=float(p.get("c0", 1.0)), C0=float(p.get("C0", 1.0)),
                        k_min=p.get("k_min"), k_max=p.get("k_max"), r_good=int(p.get("r", 2)),
                        eps_good=float(p.get("eps_good", p.get("lambda", 0.2))), mode=mode)


def _positions(space):
    if space.coords is not None:
        return space.coords
    return np.arange(space.n_points, dtype=float)[:, None] / space.n_points


def make_weights(space, config, seed):
    """``(u, v)`` atoms for the configured family; densities are multiplied by ``mu``."""
    w = config.get("weights", {"family": "lognormal"})
    fam = w.get("family", "lognormal")
    n = space.n_points
    mu = space.mu
    rng = np.random.default_rng(seed)
    if fam == "explicit":
        u, v = np.asarray(w.get("u"), float), np.asarray(w.get("v"), float)
        if u.shape != (n,) or v.shape != (n,):
            raise ConfigError(f"explicit weights need {n} atoms each", "/weights")
        return u, v
    if fam == "power":
        a = float(w.get("a", 0.0))
        r = np.sqrt(((_positions(space) - a) ** 2).sum(axis=1))
        floor = max(space.resolution / 2, 1e-300)
        r = np.maximum(r, floor)
        return r ** float(w.get("beta_u", 0.5)) * mu, r ** float(w.get("beta_v", -0.5)) * mu
    if fam == "spike":
        at = int(w.get("spike_at", n // 2))
        if not 0 <= at < n:
            raise ConfigError("spike_at outside the space", "/weights/spike_at")
        u = mu.copy()
        v = np.full(n, float(w.get("floor", 0.0))) * mu
        v[at] += float(w.get("height", 1.0))
        return u, v
    sigma = float(w.get("sigma", 1.0))
    u = np.exp(sigma * rng.standard_normal(n)) * mu
    v = np.exp(sigma * rng.standard_normal(n)) * mu
    if fam == "disjoint":
        mask = rng.random(n) < float(w.get("p", 0.5))
        if mask.all() or not mask.any():
            mask[rng.integers(n)] ^= True
        u, v = u * mask, v * ~mask
    return u, v


def make_systems(space, config, seed, grids=None):
    params = dyadic_params(config)
    count = grids if grids is not None else int(config.get("grids", 4))
    seeds = [stream_seed(seed, "grid", i) for i in range(count)]
    if params.mode == "shifted1d" and seeds:
        seeds[0] = 0  # the first grid is the standard one
    try:
        return [build_system(space, params, s) for s in seeds]
    except ValueError as exc:
        raise ConfigError(str(exc), "/params") from exc


# -- single scenario --------------------------------------------------------------


def _grid_report(system, m, u, v, params, norm, diag, seed, other=None):
    good = None
    if params.goodness:
        own = good_mask(system, system, params.r, system.params.eps_good)
        if other is not None:
            own &= good_mask(system, other, params.r, system.params.eps_good)
        good = own
    rep = compute_constants(system, m, u, v, params, good=good, norm=norm)
    out = {"grid_seed": int(system.seed), "n_cubes": len(system.cubes), "c1": system.c1,
           "C1": system.C1, **rep.to_dict()}
    checks = {"necessity": rep.testing <= rep.norm * (1 + 1e-9)
              and rep.testing_dual <= rep.norm * (1 + 1e-9)}
    if diag.get("corona", True) and rep.pivotal > 0:
        forest = build_stopping_cubes(system, u, v, rep.pivotal, params, good=good)
        corona = build_coronas(forest, system, system, params.r)
        cor = {}
        for mode in diag.get("modes", list(MODES)):
            ts = diag.get("alpha_t", [1, 2, 3]) if mode == "alpha" else [None]
            for t in ts:
                res = verify_corona_carleson(forest, corona, m, u, v, mode, t=t or 1,
                                             testing=rep.testing)
                key = mode if t is None else f"alpha_t{t}"
                cor[key] = {"constant": res.constant, "passed": res.passed, **res.details}
        out["corona"] = cor
        if "stopping_mass" in cor:
            checks["stopping_mass"] = bool(cor["stopping_mass"]["passed"])
        parts = sorted(c for cs in corona.u_corona.values() for c in cs)
        checks["corona_partition"] = parts == list(range(len(system.cubes)))
    if diag.get("lemmas", False):
        samples = diag.get("samples")
        lem = {}
        for name, fn in (("offsupport", lambda: offsupport_ratio(
                system, m, u, v, params.kappa, samples=samples, seed=seed)),
                         ("decay", lambda: decay_ratio(system, u, params, samples=samples,
                                                       seed=seed))):
            try:
                lem[name] = fn()
            except ValueError as exc:
                lem[name] = None
                log.info("%s ratio skipped: %s", name, exc)
        if other is not None:
            try:
                lem["weak_boundedness"] = weak_boundedness(system, other, m, u, v,
                                                           diag.get("rho", 1))
            except ValueError:
                lem["weak_boundedness"] = None
        out["lemmas"] = lem
    out["checks"] = checks
    return out


def _pool(grids, norm):
    keys = ("a2", "a2_dual", "testing", "testing_dual", "pivotal", "pivotal_dual")
    pooled = {k: max(g[k] for g in grids) for k in keys}
    denom = (max(pooled["a2"], pooled["a2_dual"]) + max(pooled["testing"], pooled["testing_dual"])
             + max(pooled["pivotal"], pooled["pivotal_dual"]))
    pooled["norm"] = norm
    pooled["ratio"] = norm / denom if denom > 0 else (0.0 if norm == 0 else math.inf)
    return pooled


def run_scenario(config, seed=None, grids=None, n_points=None):
    """Constants and corona diagnostics of one scenario over its random grids.

    Returns a plain dict (the run report).  ``seed``, ``grids`` and
    ``n_points`` override the config.
    """
    validate_config(config)
    started = time.time()
    seed = int(config.get("seed", 0) if seed is None else seed)
    space = make_space(config, n_points)
    m = make_operator(space, config)
    u, v = make_weights(space, config, stream_seed(seed, "weights"))
    params = make_params(config)
    systems = make_systems(space, config, seed, grids)
    diag = config.get("diagnostics", {})
    norm = operator_norm(m, u, v)

    common = bool(np.any((u > 0) & (v > 0)))
    if common:
        log.warning("u and v share atoms; the no-common-point-mass hypothesis fails")
    per_grid = []
    for i, s in enumerate(systems):
        other = systems[(i + 1) % len(systems)] if len(systems) > 1 else None
        per_grid.append(_grid_report(s, m, u, v, params, norm, diag,
                                     stream_seed(seed, "sampling", i), other))
    pooled = _pool(per_grid, norm)
    checks = {}
    for g in per_grid:
        for k, ok in g["checks"].items():
            checks[k] = checks.get(k, True) and bool(ok)
    checks["finite"] = all(math.isfinite(x) for x in pooled.values())
    if config.get("weights", {}).get("family") == "disjoint":
        checks["disjoint_support"] = not common
    try:
        doubling = space.estimate_doubling()
    except ValueError:
        doubling = (None, None)  # too few distinct scales
    report = {
        "name": config.get("name", ""),
        "version": __version__,
        "environment": {"seed": seed, "n_points": space.n_points,
                        "resolution": space.resolution, "grids": len(systems)},
        "space": {"kind": space.kind, "c_mu": doubling[0], "n_est": doubling[1]},
        "kernel": dict(m.report),
        "flags": {"common_atom": common, "truncation": "diagonal",
                  "psi_mode": "with_self" if params.include_self else "proper",
                  "goodness_filter": params.goodness},
        "params": {"kappa": params.kappa, "n_dim": params.n_dim, "lambda": params.lam,
                   "r": params.r, "sigma0": params.sigma0},
        "grids": per_grid,
        "pooled": pooled,
        "checks": checks,
        "passed": all(checks.values()),
    }
    if config.get("timestamps", False):
        report["timestamps"] = {"started": started, "finished": time.time()}
    return report


# -- ensembles ------------------------------------------------------------------------


def _quantiles(x):
    x = np.asarray(x, dtype=float)
    q = np.quantile(x, [0.0, 0.5, 0.95, 1.0])
    return {"min": q[0], "median": q[1], "p95": q[2], "max": q[3], "mean": float(x.mean())}


def run_ensemble(config, trials=None, seed=None, grids=None):
    """Ratios ``N / (A2 + T + V)`` over random weight pairs at one or more resolutions.

    Grids are drawn once per resolution and shared by all trials; each trial
    draws its own weights from the ``weights`` stream.
    """
    validate_config(config)
    ens = config.get("ensemble", {})
    trials = int(ens.get("trials", 1) if trials is None else trials)
    if trials < 1:
        raise ConfigError("trials must be positive", "/ensemble/trials")
    seed = int(config.get("seed", 0) if seed is None else seed)
    resolutions = ens.get("resolutions") or [config["space"].get("n_points")]
    params = make_params(config)
    rows, summary = [], {}
    necessity = True
    for n_points in resolutions:
        space = make_space(config, n_points)
        m = make_operator(space, config, validate=False)
        systems = make_systems(space, config, seed, grids)
        ratios = []
        for t in range(trials):
            # trial 0 shares the weight stream of run_scenario
            key = () if t == 0 else (t,)
            u, v = make_weights(space, config, stream_seed(seed, "weights", *key))
            norm = operator_norm(m, u, v)
            reps = [compute_constants(s, m, u, v, params, norm=norm).to_dict() for s in systems]
            pooled = _pool(reps, norm)
            ok = all(r["testing"] <= norm * (1 + 1e-9) and r["testing_dual"] <= norm * (1 + 1e-9)
                     for r in reps)
            necessity &= ok
            ratios.append(pooled["ratio"])
            rows.append({"n_points": space.n_points, "trial": t, **pooled,
                         "common_atom": bool(np.any((u > 0) & (v > 0))), "necessity": ok})
        summary[str(space.n_points)] = _quantiles(ratios)
    keys = list(summary)
    out = {"trials": trials, "seed": seed, "resolutions": [int(k) for k in keys],
           "summary": summary, "rows": rows}
    checks = {"finite": all(math.isfinite(r["ratio"]) for r in rows), "necessity": necessity}
    if len(keys) >= 2:
        growth = summary[keys[-1]]["max"] / summary[keys[0]]["max"]
        out["max_growth"] = growth
        checks["max_growth_le_2"] = growth <= 2.0
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


# -- output ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def canonical_json(obj):
    """Sorted-key JSON; non-finite floats become the strings ``inf``/``-inf``/``nan``."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


_CSV_KEYS = ("a2", "a2_dual", "testing", "testing_dual", "pivotal", "pivotal_dual", "norm", "ratio")


def report_rows(report):
    """One row per grid plus a pooled row."""
    rows = []
    for i, g in enumerate(report["grids"]):
        rows.append({"grid": i, "grid_seed": g["grid_seed"], **{k: g[k] for k in _CSV_KEYS}})
    rows.append({"grid": "pooled", "grid_seed": "", **{k: report["pooled"][k] for k in _CSV_KEYS}})
    return rows


def write_csv(rows, path=None):
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(_plain(r))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def with_overrides(config, **kw):
    """Deep copy of ``config`` with top-level keys replaced."""
    out = copy.deepcopy(config)
    out.update({k: v for k, v in kw.items() if v is not None})
    return out
