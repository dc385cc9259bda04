"""Invariant suites run by ``hartlab verify <module>``.

Each suite takes a validated scenario config and a seed and returns a list of
:class:`Check` rows.  Hard checks decide the exit code; soft rows only report
a measured value.
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple

import numpy as np

from .constants import (carleson_embedding, classical_poisson_1d, operator_norm, pivotal_constant,
                        pivotal_psi, poisson_K, poisson_table, testing_constant)
from .corona import build_coronas, build_stopping_cubes, verify_corona_carleson
from .dyadic import derive_seed
from .haar import HaarBasis, norm_scaling_constant
from .harness import (STREAMS, make_operator, make_params, make_space, make_systems,
                      make_weights)

__all__ = ["Check", "SUITES", "run_suite", "format_table", "enumerate_psi", "count_subpartitions",
           "interior_points", "poisson_identity_error"]


class Check(NamedTuple):
    name: str
    passed: bool | None  # None for report-only rows
    value: float | None = None
    detail: str = ""


def _scenario(config, seed, grids=None):
    space = make_space(config)
    u, v = make_weights(space, config, derive_seed(seed, STREAMS["weights"]))
    systems = make_systems(space, config, seed, grids if grids is not None else
                           min(int(config.get("grids", 4)), 4))
    return space, u, v, systems


# -- space ----------------------------------------------------------------------


def suite_space(config, seed):
    space = make_space(config)
    out = []
    worst = space.quasi_triangle_violation(seed=seed)
    out.append(Check("quasi_triangle", worst <= space.a0 * (1 + 1e-12), worst))
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, space.n_points, size=min(32, space.n_points))
    radii = np.sort(np.concatenate([[0.0], space.shell_radii(0, space.diameter * 1.01)]))
    mono = all(np.all(np.diff(space.mu_balls(int(x), radii)) >= 0) for x in xs)
    out.append(Check("ball_monotone", mono))
    if space.n_points > 1:
        try:
            c_mu, n_est = space.estimate_doubling()
            out.append(Check("doubling_finite", math.isfinite(c_mu), c_mu))
            out.append(Check("upper_dimension", None, n_est))
            if space.kind == "grid1d" and config["space"].get("base_measure", "lebesgue") == "lebesgue":
                a, b = space.domain
                xc = space.coords[:, 0]
                interior = np.flatnonzero((xc > a + (b - a) / 4) & (xc < b - (b - a) / 4))
                radii = space.shell_radii(2 * space.resolution, (b - a) / 8)
                c_in, _ = space.estimate_doubling(radii=radii, centers=interior)
                out.append(Check("doubling_1d_near_2", abs(c_in - 2) <= 0.1, c_in))
        except ValueError as exc:
            out.append(Check("doubling_finite", None, None, str(exc)))
    return out


# -- dyadic ---------------------------------------------------------------------


def suite_dyadic(config, seed):
    space, _, _, systems = _scenario(config, seed)
    out = []
    for i, s in enumerate(systems):
        props = s.check_properties()
        for key, ok in props.items():
            out.append(Check(f"grid{i}.{key}", ok))
        if s.mode == "generic":
            out.append(Check(f"grid{i}.nets", s.check_nets()))
        out.append(Check(f"grid{i}.c1_C1", None, s.C1 / s.c1 if s.c1 > 0 else math.inf))
    return out


# -- haar -----------------------------------------------------------------------


def haar_checks(basis, f, tol=1e-10):
    """Orthonormality, cancellation, Parseval, reconstruction and the tagged identity."""
    system, w = basis.system, basis.weight
    out = []
    funcs = [basis.function_values(c.id, e)
             for c in system.cubes for e in range(1, basis.values[c.id].shape[0] + 1)]
    if funcs:
        h = np.array(funcs)
        gram = (h * w) @ h.T
        out.append(Check("orthonormal", np.abs(gram - np.eye(len(funcs))).max() <= tol,
                         float(np.abs(gram - np.eye(len(funcs))).max())))
        canc = np.abs(h @ w).max()
        out.append(Check("cancellation", canc <= tol, float(canc)))
    norm2 = basis.inner(f, f)
    coeffs = basis.coefficients(f)
    energy = sum(float(c @ c) for c in coeffs)
    top = sum(basis.cube_integrals(f)[r] ** 2 / basis.mass[r] for r in system.roots
              if basis.mass[r] > 0)
    err = abs(energy + top - norm2) / max(norm2, 1e-300)
    out.append(Check("parseval", err <= tol, err))
    rec = basis.synthesize(coeffs, with_top=True, f_top=f)
    live = w > 0
    rerr = basis.norm(np.where(live, f - rec, 0.0)) / max(basis.norm(f), 1e-300)
    out.append(Check("reconstruction", rerr <= tol, rerr))
    # tagged identity: (E_top f + sum over strict ancestors of Delta_Q f) * h_R = E_R f * h_R
    worst = 0.0
    for c in system.cubes:
        if basis.values[c.id].shape[0] == 0 or basis.mass[c.id] <= 0:
            continue
        acc = basis.expectation_level(f, system.k_min)
        for q in system.ancestors(c.id):
            acc = acc + basis.synthesize(coeffs, cubes=[q])
        er = basis.averages(f)[c.id]
        for e in range(1, basis.values[c.id].shape[0] + 1):
            hr = basis.function_values(c.id, e)
            worst = max(worst, float(np.abs(acc * hr - er * hr).max() * math.sqrt(basis.mass[c.id])))
    scale = max(np.abs(f).max(), 1e-300)
    out.append(Check("tagged_identity", worst <= tol * scale, worst))
    const, spread = norm_scaling_constant(basis)
    out.append(Check("norm_scaling", None, const, "<= 4 expected when child masses are balanced"))
    out.append(Check("l1_linf_spread", None, spread[1] / spread[0] if spread[0] > 0 else math.inf))
    return out


def suite_haar(config, seed):
    space, u, v, systems = _scenario(config, seed)
    rng = np.random.default_rng(derive_seed(seed, STREAMS["sampling"]))
    out = []
    for i, s in enumerate(systems):
        for name, w in (("u", u), ("v", v)):
            if not np.any(w > 0):
                continue
            basis = HaarBasis(s, w)
            f = rng.standard_normal(space.n_points)
            out += [c._replace(name=f"grid{i}.{name}.{c.name}") for c in haar_checks(basis, f)]
    return out


# -- operators ------------------------------------------------------------------


def suite_operators(config, seed):
    space = make_space(config)
    m = make_operator(space, config)
    out = [Check("zero_diagonal", not np.any(np.diag(m.entries)))]
    if m.kernel is not None and m.kernel.antisymmetric:
        asym = float(np.abs(m.entries + m.entries.T).max())
        out.append(Check("antisymmetric", asym <= 1e-12 * max(np.abs(m.entries).max(), 1), asym))
    rng = np.random.default_rng(seed)
    u, v = make_weights(space, config, derive_seed(seed, STREAMS["weights"]))
    f, g = rng.standard_normal((2, space.n_points))
    lhs = float(((m.entries @ (f * u)) * g * v).sum())
    rhs = float(((m.entries.T @ (g * v)) * f * u).sum())
    err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    out.append(Check("adjoint_identity", err <= 1e-12, err))
    for key in ("size", "smooth"):
        if key in m.report:
            out.append(Check(f"{key}_finite", math.isfinite(m.report[key]), m.report[key]))
    return out


# -- constants ------------------------------------------------------------------


def count_subpartitions(system, cid):
    """Number of dyadic subpartitions of ``cid`` (the trivial one included)."""
    kids = system.cubes[cid].children
    return 1 + math.prod(count_subpartitions(system, k) for k in kids) if kids else 1


def enumerate_psi(system, cid, phi, include_self=True, good=None):
    """Exhaustive ``Psi``: maximum of ``sum phi`` over all dyadic subpartitions of ``cid``.

    ``phi`` is indexed by cube id; cubes failing ``good`` contribute zero.
    """
    weight = np.asarray(phi, dtype=float) if good is None else np.where(good, phi, 0.0)

    def parts(c, top):
        kids = system.cubes[c].children
        opts = [] if (top and kids and not include_self) else [(c,)]
        if kids:
            for combo in itertools.product(*(parts(k, False) for k in kids)):
                opts.append(tuple(x for p in combo for x in p))
        return opts

    return max(float(sum(weight[i] for i in p)) for p in parts(cid, True))


def suite_constants(config, seed):
    space, u, v, systems = _scenario(config, seed)
    m = make_operator(space, config)
    params = make_params(config)
    out = []
    norm = operator_norm(m, u, v)
    mt = m.transpose()
    for i, s in enumerate(systems):
        tf, td, _ = testing_constant(s, m, u, v)
        out.append(Check(f"grid{i}.necessity", tf <= norm * (1 + 1e-9) and td <= norm * (1 + 1e-9),
                         max(tf, td) / norm if norm > 0 else 0.0))
        tf2, td2, _ = testing_constant(s, mt, v, u)
        pf, pd, _ = pivotal_constant(s, u, v, params)
        pf2, pd2, _ = pivotal_constant(s, v, u, params)
        err = max(abs(tf - td2), abs(td - tf2), abs(pf - pd2), abs(pd - pf2))
        out.append(Check(f"grid{i}.duality", err <= 1e-10 * max(1.0, tf, td, pf, pd), err))
        # scaling covariance
        worst = 0.0
        for a, b in ((0.5, 2.0), (2.0, 0.5), (2.0, 2.0)):
            n2 = operator_norm(m, a * u, b * v)
            t2, _, _ = testing_constant(s, m, a * u, b * v)
            k1 = poisson_K(s, s.roots[0], v, params.kappa)
            k2 = poisson_K(s, s.roots[0], b * v, params.kappa)
            worst = max(worst, abs(n2 - math.sqrt(a * b) * norm) / max(norm, 1e-300),
                        abs(t2 - math.sqrt(a * b) * tf) / max(tf, 1e-300),
                        abs(k2 - b * k1) / max(k1, 1e-300))
        out.append(Check(f"grid{i}.scaling", worst <= 1e-10, worst))
        # Carleson embedding sandwich with a = v(Q) K(Q, 1_Q u)^2 style coefficients
        rng = np.random.default_rng(derive_seed(seed, STREAMS["sampling"], i))
        mass = np.array([u[c.members].sum() for c in s.cubes])
        a = rng.random(len(s.cubes)) * mass
        ce, cc = carleson_embedding(s, u, a)
        out.append(Check(f"grid{i}.embedding_sandwich",
                         cc * (1 - 1e-12) <= ce <= 4 * cc * (1 + 1e-12), ce / cc if cc else 0.0))
        if len(s.levels) <= 4:
            worst, checked = 0.0, 0
            g = poisson_table(s, params.kappa)
            mass_v = np.array([v[q.members].sum() for q in s.cubes])
            for c in s.cubes:
                if count_subpartitions(s, c.id) > 20000:
                    continue
                checked += 1
                k = g[:, c.members] @ u[c.members]
                phi = mass_v * k * k
                dp = pivotal_psi(s, c.id, c.members, u, v, params.kappa,
                                 include_self=params.include_self)
                bf = enumerate_psi(s, c.id, phi, params.include_self)
                worst = max(worst, abs(dp - bf) / max(abs(bf), 1e-300))
            out.append(Check(f"grid{i}.psi_dp_vs_enumeration", worst <= 1e-14, worst,
                             f"{checked} cubes enumerated"))
        if (space.kind == "grid1d" and params.kappa == 1.0
                and config["space"].get("base_measure", "lebesgue") == "lebesgue"
                and s.mode == "shifted1d"):
            worst, checked = poisson_identity_error(s, v)
            out.append(Check(f"grid{i}.poisson_identity", checked > 0 and worst <= 1e-9, worst,
                             f"{checked} cubes"))
    return out


def interior_points(system, cid):
    """Points ``y`` whose ball ``B(x_Q, l(Q) + dist(y, Q))`` stays inside the domain."""
    space, cube = system.space, system.cubes[cid]
    a, b = space.domain
    x = float(cube.anchor[0]) if cube.anchor is not None else float(space.coords[cube.center, 0])
    reach = cube.side + system.dist_vector(cid)
    return (x - reach >= a - 1e-12) & (x + reach <= b + 1e-12)


def poisson_identity_error(system, w):
    """Largest ``|K / P - 1/2|`` over cubes with ``w`` cut to their interior points."""
    worst, checked = 0.0, 0
    for c in system.cubes:
        if c.size < 2:
            continue
        wi = w * interior_points(system, c.id)
        p = classical_poisson_1d(system, c.id, wi)
        if p > 0:
            checked += 1
            worst = max(worst, abs(poisson_K(system, c.id, wi, 1.0) / p - 0.5))
    return worst, checked


# -- corona ---------------------------------------------------------------------


def suite_corona(config, seed):
    space, u, v, systems = _scenario(config, seed)
    m = make_operator(space, config)
    params = make_params(config)
    rng = np.random.default_rng(derive_seed(seed, STREAMS["sampling"]))
    out = []
    for i, s in enumerate(systems):
        if not np.any(u > 0):
            continue
        pf, _, _ = pivotal_constant(s, u, v, params)
        forest = build_stopping_cubes(s, u, v, pf, params)
        corona = build_coronas(forest, s, s, params.r)
        res = verify_corona_carleson(forest, corona, m, u, v, "stopping_mass")
        out.append(Check(f"grid{i}.stopping_quarter", res.details["quarter_ratio"] <= 0.25 * (1 + 1e-12),
                         res.details["quarter_ratio"]))
        out.append(Check(f"grid{i}.generation_decay", res.details["generation_decay"],
                         res.details["generation_ratio"]))
        parts = sorted(c for cs in corona.u_corona.values() for c in cs)
        out.append(Check(f"grid{i}.corona_partition", parts == list(range(len(s.cubes)))))
        basis = HaarBasis(s, u)
        f = rng.standard_normal(space.n_points)
        pieces = basis.delta_norms_sq(f)
        total = sum(float(pieces[ids].sum()) for ids in corona.u_corona.values())
        bound = basis.sup_m * basis.norm(f) ** 2
        out.append(Check(f"grid{i}.projection_bound", total <= bound * (1 + 1e-12), total / bound))
    return out


SUITES = {
    "space": suite_space,
    "dyadic": suite_dyadic,
    "haar": suite_haar,
    "operators": suite_operators,
    "constants": suite_constants,
    "corona": suite_corona,
}


def run_suite(module, config, seed=0):
    names = list(SUITES) if module == "all" else [module]
    out = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown module {name!r}")
        out += [c._replace(name=f"{name}.{c.name}") for c in SUITES[name](config, seed)]
    return out


def format_table(checks):
    width = max((len(c.name) for c in checks), default=4)
    lines = []
    for c in checks:
        status = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        value = "" if c.value is None else f"{c.value:.6g}"
        lines.append(f"{c.name:<{width}}  {status:<4}  {value}  {c.detail}".rstrip())
    return "\n".join(lines)
