"""Stopping cubes, corona decompositions and their Carleson measure estimates.

Stopping cubes live in the ``u``-system.  Starting from each root ``Q_o``,
the children of a stopping cube ``S`` are the maximal strict subcubes ``R``
of ``S`` with

    Psi(R, 1_S u) >= 4 V**2 u(R),  Psi(R, 1_S u) > 0,  u(R) > 0,

and the selection recurses until no cube qualifies.  Requiring ``Psi > 0``
keeps the rule from firing everywhere when ``V = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .constants import TwoWeightParams, poisson_table, psi_table, testing_constant
from .dyadic import DyadicSystem
from .haar import HaarBasis
from .space import as_measure

__all__ = [
    "StoppingForest",
    "Corona",
    "CarlesonCheck",
    "MODES",
    "build_stopping_cubes",
    "build_coronas",
    "corona_project",
    "verify_corona_carleson",
    "containing_table",
]

MODES = ("stopping_mass", "paraproduct", "alpha", "beta", "gamma")
_REL = 1e-12


@dataclass
class StoppingForest:
    system: DyadicSystem
    u: np.ndarray
    v: np.ndarray
    pivotal_v: float
    params: TwoWeightParams
    members: list               # stopping cube ids, parents before children
    generation: dict            # cube id -> 1 for roots, 2 for their stopping children, ...
    parent: dict                # cube id -> stopping parent (None for roots)
    children: dict = field(default_factory=dict)

    @property
    def roots(self):
        return [s for s in self.members if self.parent[s] is None]

    def is_stopping(self, cid):
        return cid in self.generation

    def stopping_ancestor(self, cid, t):
        """``t``-fold stopping parent, or ``None`` when it does not exist."""
        for _ in range(t):
            if cid is None:
                return None
            cid = self.parent[cid]
        return cid

    def root_of(self, cid):
        while self.parent[cid] is not None:
            cid = self.parent[cid]
        return cid


def build_stopping_cubes(system, u, v, pivotal_v, params: TwoWeightParams, good=None):
    """Stopping forest of ``system`` for the weight pair and the pivotal constant ``pivotal_v``.

    ``good`` is the optional partition filter passed on to ``Psi``; it must
    match the one used to compute ``pivotal_v`` for the quarter bound to hold.
    """
    if pivotal_v < 0:
        raise ValueError("pivotal_v must be nonnegative")
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    g = poisson_table(system, params.kappa)
    mass_u = np.array([u[c.members].sum() for c in system.cubes])
    mass_v = np.array([v[c.members].sum() for c in system.cubes])
    thresh = 4.0 * pivotal_v ** 2

    members, generation, parent = [], {}, {}
    children = {}
    queue = list(system.roots)
    for r in queue:
        generation[r] = 1
        parent[r] = None
    while queue:
        top = queue.pop(0)
        members.append(top)
        children[top] = []
        sub = system.subtree(top)
        idx = system.cubes[top].members
        k = g[np.ix_(sub, idx)] @ u[idx]
        psi = psi_table(system, sub, mass_v[sub] * k * k, good)
        pos = {cid: i for i, cid in enumerate(sub)}
        if not params.include_self:
            # strict partitions at the top of each candidate
            own = psi.copy()
            for i, cid in enumerate(sub):
                kids = system.cubes[cid].children
                if kids:
                    own[i] = sum(psi[pos[ch]] for ch in kids)
            psi = own
        # maximal strict subcubes meeting the rule: walk down until a hit
        stack = list(system.cubes[top].children)
        while stack:
            cid = stack.pop()
            val = psi[pos[cid]]
            if mass_u[cid] > 0 and val > 0 and val >= thresh * mass_u[cid]:
                generation[cid] = generation[top] + 1
                parent[cid] = top
                children[top].append(cid)
                queue.append(cid)
            else:
                stack.extend(system.cubes[cid].children)
        children[top].sort()
    return StoppingForest(system, u, v, float(pivotal_v), params, members, generation,
                          parent, children)


def containing_table(system_u, system_v):
    """``table[J, i]``: the level-``levels[i]`` cube of ``system_u`` containing ``J``, else ``-1``."""
    table = np.full((len(system_v.cubes), len(system_u.levels)), -1, dtype=np.int64)
    for i, k in enumerate(system_u.levels):
        lab = system_u.labels[k]
        for c in system_v.cubes:
            ids = lab[c.members]
            if ids.min() == ids.max():
                table[c.id, i] = ids[0]
    return table


@dataclass
class Corona:
    forest: StoppingForest
    system_u: DyadicSystem
    system_v: DyadicSystem
    r: int
    u_corona: dict      # stopping cube -> u-cube ids
    v_corona: dict      # stopping cube -> v-cube ids
    u_owner: np.ndarray  # u-cube -> stopping cube
    v_owner: np.ndarray  # v-cube -> stopping cube, -1 when no stopping cube qualifies
    contain: np.ndarray  # containing_table(system_u, system_v)


def build_coronas(forest: StoppingForest, system_u, system_v, r):
    """u-coronas (nearest stopping ancestor) and shifted v-coronas.

    A ``u``-cube belongs to the corona of the smallest stopping cube
    containing it.  A ``v``-cube ``J`` belongs to the corona of the smallest
    stopping cube ``S'`` with ``J`` inside ``S'`` and ``l(J) <= delta**r l(S')``.
    """
    if forest.system is not system_u:
        raise ValueError("the forest must be built on system_u")
    owner = np.full(len(system_u.cubes), -1, dtype=np.int64)
    for c in system_u.cubes:  # parents come first
        if forest.is_stopping(c.id):
            owner[c.id] = c.id
        elif c.parent is not None:
            owner[c.id] = owner[c.parent]
    u_corona = {s: [] for s in forest.members}
    for cid, s in enumerate(owner):
        u_corona[int(s)].append(cid)

    contain = containing_table(system_u, system_v)
    delta = system_u.params.delta
    v_owner = np.full(len(system_v.cubes), -1, dtype=np.int64)
    levels = system_u.levels
    for c in system_v.cubes:
        for i in range(len(levels) - 1, -1, -1):
            s = contain[c.id, i]
            if s < 0 or not forest.is_stopping(int(s)):
                continue
            if c.side <= delta ** r * system_u.cubes[s].side * (1 + _REL):
                v_owner[c.id] = s
                break
    v_corona = {s: [] for s in forest.members}
    for cid, s in enumerate(v_owner):
        if s >= 0:
            v_corona[int(s)].append(cid)
    return Corona(forest, system_u, system_v, r, u_corona, v_corona, owner, v_owner, contain)


def corona_project(f, s_prime, corona: Corona, basis: HaarBasis):
    """``sum over Q in the u-corona of s_prime of Delta_Q f``."""
    if s_prime not in corona.u_corona:
        raise KeyError(f"{s_prime} is not a stopping cube")
    coeffs = basis.coefficients(f)
    return basis.synthesize(coeffs, cubes=corona.u_corona[s_prime])


class CarlesonCheck(NamedTuple):
    """``constant`` is the largest LHS/RHS; ``passed`` is ``None`` for measured-only modes."""

    constant: float
    passed: bool | None
    details: dict


def _subtree_sums(system, x):
    out = np.array(x, dtype=float)
    for c in reversed(system.cubes):
        if c.parent is not None:
            out[c.parent] += out[c.id]
    return out


def _ratio_max(lhs, rhs):
    ok = lhs > 0
    if not ok.any():
        return 0.0
    if np.any(rhs[ok] <= 0):
        return float("inf")
    return float((lhs[ok] / rhs[ok]).max())


def _stopping_mass(forest, corona):
    system, u = forest.system, forest.u
    mass = np.array([u[c.members].sum() for c in system.cubes])
    worst = 0.0
    for s in forest.members:
        kids = forest.children[s]
        if kids and mass[s] > 0:
            worst = max(worst, mass[kids].sum() / mass[s])
    passed = worst <= 0.25 * (1 + _REL)

    decay_ok = True
    decay_worst = 0.0
    for root in forest.roots:
        if mass[root] <= 0:
            continue
        per_gen = {}
        for s in forest.members:
            if forest.root_of(s) == root:
                g = forest.generation[s]
                per_gen[g] = per_gen.get(g, 0.0) + mass[s]
        for g, total in per_gen.items():
            ratio = total / mass[root] * 4.0 ** (g - 1)
            decay_worst = max(decay_worst, ratio)
            decay_ok &= ratio <= 1 + _REL

    # sum of u(S') over stopping S' strictly inside K, against u(K)
    stop = np.zeros(len(system.cubes))
    stop[forest.members] = mass[forest.members]
    below = _subtree_sums(system, stop) - stop
    packing = _ratio_max(below, mass)
    details = {"quarter_ratio": worst, "generation_ratio": decay_worst,
               "generation_decay": bool(decay_ok), "packing": packing,
               "n_stopping": len(forest.members)}
    return CarlesonCheck(float(worst), bool(passed and decay_ok), details)


def verify_corona_carleson(forest: StoppingForest, corona: Corona, m, u, v, mode,
                           t=1, testing=None, basis_v=None):
    """Check one Carleson measure estimate of the corona construction.

    ``stopping_mass`` asserts the quarter bound and the generation decay.
    The other modes return the largest ratio of the left side to
    ``V**2 u(K)`` (``alpha``, ``gamma``) or ``(V**2 + T**2) u(K)``
    (``paraproduct``, ``beta``) over ``u``-cubes ``K`` with ``u(K) > 0``.
    ``testing`` is the testing constant ``T`` (computed when omitted).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "stopping_mass":
        return _stopping_mass(forest, corona)

    system_u, system_v = corona.system_u, corona.system_v
    n = system_u.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    mass_u = np.array([u[c.members].sum() for c in system_u.cubes])
    V2 = forest.pivotal_v ** 2
    if not np.any(v > 0) or not np.any(u > 0):
        return CarlesonCheck(0.0, None, {"mode": mode})
    if testing is None and mode in ("paraproduct", "beta"):
        tf, _, _ = testing_constant(system_u, m, u, v)
        testing = tf
    basis_v = basis_v or HaarBasis(system_v, v)
    e = m.entries

    def proj_sq(w, s_prime):
        """``||P^v_{S'} T(w)||^2`` and the per-cube pieces."""
        pieces = basis_v.delta_norms_sq(e @ w)
        ids = corona.v_corona[s_prime]
        return float(pieces[ids].sum()), pieces

    details = {"mode": mode}
    if mode == "paraproduct":
        lhs = np.zeros(len(system_u.cubes))
        delta, r = system_u.params.delta, corona.r
        vside = np.array([c.side for c in system_v.cubes])
        for s in forest.members:
            ids = np.array(corona.v_corona[s], dtype=np.int64)
            if ids.size == 0:
                continue
            w = u * system_u.mask(s)
            pieces = basis_v.delta_norms_sq(e @ w)
            inside = set(system_u.subtree(s))
            for i, k in enumerate(system_u.levels):
                owner = corona.contain[ids, i]
                small = vside[ids] < delta ** r * delta ** k * (1 - _REL)
                sel = (owner >= 0) & small
                if not sel.any():
                    continue
                sums = np.bincount(owner[sel], weights=pieces[ids[sel]],
                                   minlength=len(system_u.cubes))
                for kid in system_u.by_level[k]:
                    if kid in inside and sums[kid] > lhs[kid]:
                        lhs[kid] = sums[kid]
        rhs = (V2 + testing ** 2) * mass_u
        details["testing"] = testing
        return CarlesonCheck(_ratio_max(lhs, rhs), None, details)

    per_cube = np.zeros(len(system_u.cubes))  # value of S, booked at the dyadic parent of S
    for s in forest.members:
        dparent = system_u.cubes[s].parent
        if dparent is None:
            continue
        if mode == "beta":
            val, _ = proj_sq(u * system_u.mask(dparent), s)
        elif mode == "gamma":
            sp = forest.parent[s]
            if sp is None:
                continue
            val, _ = proj_sq(u * (system_u.mask(sp) & ~system_u.mask(dparent)), s)
        else:  # alpha
            sp = forest.parent[s]
            if sp is None:
                continue
            w = u * (system_u.mask(sp) & ~system_u.mask(s))
            _, pieces = proj_sq(w, s)
            val = 0.0
            for s2 in forest.members:
                if forest.stopping_ancestor(s2, t) == s:
                    val += float(pieces[corona.v_corona[s2]].sum())
        per_cube[dparent] += val
    lhs = _subtree_sums(system_u, per_cube)
    if mode == "beta":
        rhs = (V2 + testing ** 2) * mass_u
        details["testing"] = testing
    else:
        rhs = V2 * mass_u
    const = _ratio_max(lhs, rhs)
    if mode == "alpha":
        details["t"] = t
        details["normalized"] = const * system_u.params.delta ** (forest.params.sigma0 * t)
    return CarlesonCheck(const, None, details)
