"""Scalar functionals of the two-weight inequality on a dyadic system.

All suprema over cubes are maxima over the cubes of one dyadic system;
pooling over several random systems happens in :mod:`hartlab.harness`.

The Poisson-type functional of a cube ``Q`` against a measure ``w`` is

    K(Q, w) = sum_y (l / (l + dist(y, Q)))**kappa / mu(B(x_Q, l + dist(y, Q))) * w_y

with ``l = l(Q)``.  Its per-point weights are tabulated once per system and
kernel smoothness, so ``K(Q, w)`` is a matrix-vector product.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .dyadic import DyadicSystem
from .haar import HaarBasis
from .operators import OperatorMatrix
from .space import as_measure

__all__ = [
    "TwoWeightParams",
    "ConstantsReport",
    "ConvergenceError",
    "poisson_table",
    "poisson_K",
    "classical_poisson_1d",
    "a2_constant",
    "testing_constant",
    "pivotal_psi",
    "psi_table",
    "pivotal_constant",
    "operator_norm",
    "carleson_embedding",
    "offsupport_ratio",
    "decay_ratio",
    "weak_boundedness",
    "compute_constants",
]


class ConvergenceError(RuntimeError):
    """Power iteration hit its cap; ``interval`` brackets the Rayleigh estimate."""

    def __init__(self, msg, interval):
        super().__init__(msg)
        self.interval = interval


@dataclass(frozen=True)
class TwoWeightParams:
    kappa: float = 1.0
    n_dim: float = 1.0
    lam: float = 0.2
    r: int = 2
    include_self: bool = True
    goodness: bool = False

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if not 0 < self.lam < self.kappa / (self.n_dim + self.kappa):
            raise ValueError("need 0 < lambda < kappa / (n + kappa)")

    @property
    def sigma0(self):
        return self.lam * (self.n_dim + self.kappa) - self.kappa

    @property
    def gamma_decay(self):
        return -self.sigma0


@dataclass
class ConstantsReport:
    a2: float
    a2_dual: float
    testing: float
    testing_dual: float
    pivotal: float
    pivotal_dual: float
    norm: float
    ratio: float
    flags: dict = field(default_factory=dict)
    argmax: dict = field(default_factory=dict)

    @property
    def a2_max(self):
        return max(self.a2, self.a2_dual)

    @property
    def testing_max(self):
        return max(self.testing, self.testing_dual)

    @property
    def pivotal_max(self):
        return max(self.pivotal, self.pivotal_dual)

    def to_dict(self):
        return asdict(self)


# -- Poisson-type functional -------------------------------------------------


def _center_balls(system, cube, radii):
    space = system.space
    if cube.anchor is not None:
        return space.mu_balls_at(cube.anchor, radii)
    return space.mu_balls(cube.center, radii)


def poisson_table(system: DyadicSystem, kappa: float):
    """``G[Q, y]`` such that ``K(Q, w) = G[Q] @ w``; cached on the system."""
    cache = system.__dict__.setdefault("_poisson_tables", {})
    g = cache.get(kappa)
    if g is not None:
        return g
    n = system.space.n_points
    g = np.empty((len(system.cubes), n))
    for c in system.cubes:
        rho = c.side + system.dist_vector(c.id)
        vol = _center_balls(system, c, rho)
        if np.any(vol <= 0):
            raise ValueError(f"empty ball around the center of cube {c.id}")
        g[c.id] = (c.side / rho) ** kappa / vol
    g.flags.writeable = False
    cache[kappa] = g
    return g


def poisson_K(system, cid, w, kappa):
    w = as_measure(w, system.space.n_points)
    if system.cubes[cid].side <= 0:
        raise ValueError("l(Q) must be positive")
    return float(poisson_table(system, kappa)[cid] @ w)


def classical_poisson_1d(system, cid, w):
    """``P(w, I) = sum_y |I| / (|I| + dist(y, I))**2 * w_y`` on a 1D space."""
    space = system.space
    if space.coords is None or space.coords.shape[1] != 1:
        raise ValueError("the classical Poisson integral needs a 1D space")
    w = as_measure(w, space.n_points)
    side = system.cubes[cid].side
    return float((side / (side + system.dist_vector(cid)) ** 2 * w).sum())


# -- A2 and testing ------------------------------------------------------------


def _masses(system, w):
    return np.array([w[c.members].sum() for c in system.cubes])


def a2_constant(system, u, v, params: TwoWeightParams):
    """``(forward, dual, argmax)`` of ``sqrt(u(Q) K(Q, v) / l(Q)**n)`` and its dual."""
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    g = poisson_table(system, params.kappa)
    sides = np.array([c.side for c in system.cubes]) ** params.n_dim
    fwd = np.sqrt(_masses(system, u) * (g @ v) / sides)
    dual = np.sqrt(_masses(system, v) * (g @ u) / sides)
    return float(fwd.max()), float(dual.max()), (int(fwd.argmax()), int(dual.argmax()))


def testing_constant(system, m: OperatorMatrix, u, v):
    """``(t_fwd, t_dual, argmax)`` of the localized testing ratios.

    ``t_fwd = max_Q ||1_Q T(u 1_Q)||_{L2(v)} / u(Q)**0.5`` over cubes with
    ``u(Q) > 0``; the dual uses the transposed kernel with ``u`` and ``v``
    swapped.
    """
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    if not np.any(u > 0):
        raise ValueError("every cube is u-null")
    e = m.entries
    best_f = best_d = 0.0
    arg_f = arg_d = -1
    for c in system.cubes:
        idx = c.members
        block = e[np.ix_(idx, idx)]
        uq, vq = u[idx].sum(), v[idx].sum()
        if uq > 0:
            t = block @ u[idx]
            val = (t * t * v[idx]).sum() / uq
            if val > best_f:
                best_f, arg_f = val, c.id
        if vq > 0:
            t = block.T @ v[idx]
            val = (t * t * u[idx]).sum() / vq
            if val > best_d:
                best_d, arg_d = val, c.id
    return math.sqrt(best_f), math.sqrt(best_d), (arg_f, arg_d)


# -- pivotal -----------------------------------------------------------------


def psi_table(system, sub, phi, passes=None):
    """``Psi`` at every node of the subtree ``sub`` (listed top-down), trivial partition allowed.

    ``phi`` holds ``Phi`` per entry of ``sub``; ``passes`` (indexed by cube id)
    restricts the cubes allowed in a partition.
    """
    pos = {cid: i for i, cid in enumerate(sub)}
    psi = np.zeros(len(sub))
    for i in range(len(sub) - 1, -1, -1):
        c = system.cubes[sub[i]]
        own = phi[i] if passes is None or passes[sub[i]] else 0.0
        if c.children:
            psi[i] = max(own, sum(psi[pos[ch]] for ch in c.children))
        else:
            psi[i] = own
    return psi


def _psi_top(system, sub, phi, passes, include_self):
    psi = psi_table(system, sub, phi, passes)
    if include_self:
        return float(psi[0])
    kids = system.cubes[sub[0]].children
    if not kids:
        return float(psi[0])
    pos = {cid: i for i, cid in enumerate(sub)}
    return float(sum(psi[pos[ch]] for ch in kids))


def pivotal_psi(system, cid, e_set, a, b, kappa, good=None, include_self=True):
    """``Psi(Q, 1_E a) = sup over dyadic subpartitions {Q_i} of Q of sum b(Q_i) K(Q_i, 1_E a)**2``.

    ``e_set`` is a boolean mask or index array.  ``good`` optionally restricts
    the partition cubes to those flagged ``True``.  With
    ``include_self=False`` the trivial partition ``{Q}`` is excluded at the top.
    """
    n = system.space.n_points
    a, b = as_measure(a, n), as_measure(b, n)
    e_idx = np.flatnonzero(e_set) if np.asarray(e_set).dtype == bool else np.asarray(e_set)
    g = poisson_table(system, kappa)
    sub = system.subtree(cid)
    k = g[np.ix_(sub, e_idx)] @ a[e_idx]
    bm = np.array([b[system.cubes[s].members].sum() for s in sub])
    return _psi_top(system, sub, bm * k * k, good, include_self)


def pivotal_constant(system, u, v, params: TwoWeightParams, good=None):
    """``(forward, dual, argmax)`` of ``sqrt(Psi(Q, 1_Q u) / u(Q))`` and its dual."""
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    if not np.any(u > 0):
        raise ValueError("every cube is u-null")
    g = poisson_table(system, params.kappa)
    mu_u, mu_v = _masses(system, u), _masses(system, v)
    best = [0.0, 0.0]
    arg = [-1, -1]
    for c in system.cubes:
        sub = system.subtree(c.id)
        idx = c.members
        gs = g[np.ix_(sub, idx)]
        for side, (a, am, bm) in enumerate(((u, mu_u, mu_v), (v, mu_v, mu_u))):
            if am[c.id] <= 0:
                continue
            k = gs @ a[idx]
            psi = _psi_top(system, sub, bm[sub] * k * k, good, params.include_self)
            val = psi / am[c.id]
            if val > best[side]:
                best[side], arg[side] = val, c.id
    return math.sqrt(best[0]), math.sqrt(best[1]), tuple(arg)


# -- operator norm -------------------------------------------------------------


def operator_norm(m: OperatorMatrix, u, v, method="auto", tol=1e-10, max_iter=200000, seed=0):
    """Largest singular value of ``diag(sqrt v) K diag(sqrt u)``.

    ``method="auto"`` uses a dense SVD up to 1024 points and power iteration
    on ``B^T B`` beyond.
    """
    u, v = as_measure(u, m.n), as_measure(v, m.n)
    b = m.weighted(u, v)
    if method == "auto":
        method = "svd" if m.n <= 1024 else "power"
    if method == "svd":
        if not np.any(b):
            return 0.0
        return float(scipy.linalg.svdvals(b)[0])
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    return power_norm(b, tol=tol, max_iter=max_iter, seed=seed)[0]


def power_norm(b, tol=1e-10, max_iter=200000, seed=0):
    """Power iteration on ``B^T B``.

    Returns ``(sigma, (lo, hi))``: ``lo**2`` is the Rayleigh quotient and
    ``hi**2`` adds the residual norm, so ``[lo, hi]`` contains a singular value
    of ``B`` (the top one once the iterate has aligned with it).
    """
    if not np.any(b):
        return 0.0, (0.0, 0.0)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=b.shape[1])
    x /= np.linalg.norm(x)
    theta = 0.0
    for _ in range(max_iter):
        y = b.T @ (b @ x)
        theta = float(x @ y)
        res = float(np.linalg.norm(y - theta * x))
        if res <= tol * theta:
            return math.sqrt(theta), (math.sqrt(max(theta - res, 0.0)), math.sqrt(theta + res))
        x = y / np.linalg.norm(y)
    raise ConvergenceError("power iteration did not converge",
                           (math.sqrt(max(theta - res, 0.0)), math.sqrt(theta + res)))


# -- Carleson embedding -----------------------------------------------------------


def carleson_embedding(system, u, a):
    """``(c_embed, c_carleson)`` for nonnegative cube coefficients ``a``.

    ``c_carleson = max_S sum_{Q subset S} a_Q / u(S)`` with containment of
    member sets; ``c_embed`` is the top eigenvalue of
    ``f -> sum_Q a_Q (u-average of f on Q)**2`` on ``L2(u)``.
    """
    n = system.space.n_points
    u = as_measure(u, n)
    a = np.asarray(a, dtype=float)
    if a.shape != (len(system.cubes),) or np.any(a < 0):
        raise ValueError("need one nonnegative coefficient per cube")
    mass = _masses(system, u)
    if np.any((mass <= 0) & (a > 0)):
        raise ValueError("positive coefficient on a u-null cube")
    if not np.any(a):
        return 0.0, 0.0

    # subtree sums, then lift each cube to the top of its chain of equal member sets
    tot = a.copy()
    for c in reversed(system.cubes):
        if c.parent is not None:
            tot[c.parent] += tot[c.id]
    top = np.arange(len(system.cubes))
    for c in system.cubes:
        if c.parent is not None and system.cubes[c.parent].size == c.size:
            top[c.id] = top[c.parent]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(mass > 0, tot[top] / np.where(mass > 0, mass, 1), 0.0)
    c_carleson = float(ratios.max())

    live = np.flatnonzero(u > 0)
    rows = []
    for c in system.cubes:
        if a[c.id] == 0:
            continue
        vec = np.zeros(n)
        vec[c.members] = np.sqrt(u[c.members]) / mass[c.id]
        rows.append(math.sqrt(a[c.id]) * vec[live])
    mat = np.array(rows)
    # nonzero eigenvalues of M^T M equal those of M M^T; use the smaller Gram matrix
    gram = mat @ mat.T if mat.shape[0] <= mat.shape[1] else mat.T @ mat
    c_embed = float(scipy.linalg.eigvalsh(gram)[-1])
    return c_embed, c_carleson


# -- off-support and decay diagnostics--------------------------------------------------------


def _pairs(system):
    """``(Q', Q_hat)`` with ``Q_hat`` a strict ancestor of ``Q'``."""
    for c in system.cubes:
        for anc in system.ancestors(c.id):
            yield c.id, anc


def offsupport_ratio(system, m, u, v, kappa, samples=None, seed=0, basis_v=None):
    """Empirical constant of the off-support bound for cancellative functions.

    For ``S`` strictly inside ``Q'`` with ``dist(S, X minus Q') >= l(S)`` and
    ``Q'`` strictly inside ``Q_hat``, compares
    ``sup_H |<T(u 1_{Q_hat - Q'}), H>_v| / ||H||_{L2(v)}`` (``H`` ranging over
    the span of the cancellative ``v``-Haar functions of ``S``) with
    ``Phi(S, 1_{Q_hat - Q'} u)**0.5``.  ``samples`` caps the number of
    ``(Q', Q_hat)`` pairs (random subset); ``None`` means all.
    """
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    basis_v = basis_v or HaarBasis(system, v)
    g = poisson_table(system, kappa)
    pairs = list(_pairs(system))
    if samples is not None and samples < len(pairs):
        rng = np.random.default_rng(seed)
        pairs = [pairs[i] for i in np.sort(rng.choice(len(pairs), samples, replace=False))]
    best = None
    sides = np.array([c.side for c in system.cubes])
    for qp, qh in pairs:
        cands = np.array(system.subtree(qp)[1:], dtype=int)
        if cands.size == 0:
            continue
        far = system.complement_dist_vector(qp)
        dist_out = np.array([far[system.cubes[s].members].min() for s in cands])
        cands = cands[dist_out >= sides[cands]]
        cands = cands[[basis_v.m_q(s) >= 2 for s in cands]] if cands.size else cands
        if cands.size == 0:
            continue
        w = u * (system.mask(qh) & ~system.mask(qp))
        if not np.any(w):
            continue
        tw = m.entries @ w
        lhs = np.sqrt(basis_v.delta_norms_sq(tw)[cands])
        rhs = np.sqrt(basis_v.mass[cands]) * (g[cands] @ w)
        ok = rhs > 0
        if np.any(ok):
            val = float((lhs[ok] / rhs[ok]).max())
            best = val if best is None else max(best, val)
    if best is None:
        raise ValueError("no admissible triple in the system")
    return best


def decay_ratio(system, u, params: TwoWeightParams, samples=None, seed=0):
    """Empirical constant ``C`` in ``l(S)**s0 K(S, w) <= C l(Q)**s0 K(Q, w)``.

    Here ``w = u 1_{Q_hat - Q}``, ``s0 = lambda (n + kappa) - kappa`` and the
    triples ``S < Q < Q_hat`` satisfy
    ``dist(S, e(Q)) >= l(S)**lambda l(Q)**(1 - lambda) / 2`` with ``e(Q)`` the
    complement boundary of ``Q`` together with its center.
    """
    n = system.space.n_points
    u = as_measure(u, n)
    g = poisson_table(system, params.kappa)
    lam, s0 = params.lam, params.sigma0
    pairs = list(_pairs(system))
    if samples is not None and samples < len(pairs):
        rng = np.random.default_rng(seed)
        pairs = [pairs[i] for i in np.sort(rng.choice(len(pairs), samples, replace=False))]
    best = None
    sides = np.array([c.side for c in system.cubes])
    for q, qh in pairs:
        cube = system.cubes[q]
        cands = np.array(system.subtree(q)[1:], dtype=int)
        if cands.size == 0:
            continue
        edge = system.complement_dist_vector(q)
        d_e = np.array([min(edge[system.cubes[s].members].min(),
                            system.dist_vector(s)[cube.center]) for s in cands])
        need = 0.5 * sides[cands] ** lam * cube.side ** (1 - lam)
        cands = cands[d_e >= need]
        if cands.size == 0:
            continue
        w = u * (system.mask(qh) & ~system.mask(q))
        kq = g[q] @ w
        if kq <= 0:
            continue
        ks = g[cands] @ w
        val = float((ks / kq * (sides[cands] / cube.side) ** s0).max())
        best = val if best is None else max(best, val)
    if best is None:
        raise ValueError("no admissible triple in the system")
    return best


def _cube_distance_matrix(sys_a, sys_b):
    """``dist(Q, S)`` for all ``Q`` in ``sys_a`` and ``S`` in ``sys_b``."""
    n = sys_a.space.n_points
    da = np.array([sys_a.dist_vector(c.id) for c in sys_a.cubes])
    out = np.empty((len(sys_a.cubes), len(sys_b.cubes)))
    for k in sys_b.levels:
        lab = sys_b.labels[k]
        order = np.argsort(lab, kind="stable")
        ids, starts = np.unique(lab[order], return_index=True)
        out[:, ids] = np.minimum.reduceat(da[:, order], starts, axis=1)
    assert n == sys_b.space.n_points
    return out


def weak_boundedness(system_u, system_v, m, u, v, rho, near=True):
    """Largest ``|int_S T(u 1_Q) dv| / (u(Q) v(S))**0.5`` over rho-close pairs.

    Pairs satisfy ``delta**rho <= l(Q)/l(S) <= delta**-rho``; with ``near``
    also ``dist(Q, S) <= max(l(Q), l(S))``.  Null cubes are skipped.
    """
    n = system_u.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    iu = np.zeros((len(system_u.cubes), n))
    for c in system_u.cubes:
        iu[c.id, c.members] = u[c.members]
    iv = np.zeros((len(system_v.cubes), n))
    for c in system_v.cubes:
        iv[c.id, c.members] = v[c.members]
    pair = iu @ m.entries.T @ iv.T  # [Q, S] = int_S T(u 1_Q) dv
    uq, vs = iu.sum(axis=1), iv.sum(axis=1)
    lq = np.array([c.side for c in system_u.cubes])
    ls = np.array([c.side for c in system_v.cubes])
    delta = system_u.params.delta
    ratio = lq[:, None] / ls[None, :]
    ok = (ratio >= delta ** rho * (1 - 1e-12)) & (ratio <= delta ** -rho * (1 + 1e-12))
    if near:
        dist = _cube_distance_matrix(system_u, system_v)
        ok &= dist <= np.maximum(lq[:, None], ls[None, :])
    if not ok.any():
        raise ValueError("no rho-close pairs")
    ok &= (uq[:, None] > 0) & (vs[None, :] > 0)
    if not ok.any():
        return 0.0
    val = np.abs(pair[ok]) / np.sqrt(uq[:, None] * vs[None, :])[ok]
    return float(val.max())


# -- everything at once -------------------------------------------------------------


def compute_constants(system, m, u, v, params: TwoWeightParams, good=None, norm=None):
    """All functionals of the two-weight inequality on one system."""
    n = system.space.n_points
    u, v = as_measure(u, n), as_measure(v, n)
    a2f, a2d, a2_arg = a2_constant(system, u, v, params)
    tf, td, t_arg = testing_constant(system, m, u, v)
    pf, pd, p_arg = pivotal_constant(system, u, v, params, good)
    if norm is None:
        norm = operator_norm(m, u, v)
    denom = max(a2f, a2d) + max(tf, td) + max(pf, pd)
    ratio = norm / denom if denom > 0 else (0.0 if norm == 0 else math.inf)
    flags = {
        "common_atom": bool(np.any((u > 0) & (v > 0))),
        "truncation": "diagonal",
        "psi_mode": "with_self" if params.include_self else "proper",
        "goodness_filter": good is not None,
    }
    argmax = {"a2": a2_arg[0], "a2_dual": a2_arg[1], "testing": t_arg[0],
              "testing_dual": t_arg[1], "pivotal": p_arg[0], "pivotal_dual": p_arg[1]}
    return ConstantsReport(a2f, a2d, tf, td, pf, pd, float(norm), float(ratio), flags, argmax)
