"""Dyadic cube systems on finite spaces of homogeneous type.

Two construction modes are provided.

``shifted1d``
    Binary intervals on a 1D cell-midpoint grid, translated by a random
    binary shift ``sum_j w_j 2**-j``.  Level ``k`` has side ``2**-k``.
``generic``
    Nested maximal ``c0 * delta**k``-separated nets chosen greedily in a
    seed-dependent priority order.  Every net point of level ``k + 1`` is
    attached to the nearest net point of level ``k`` (ties broken by priority),
    and a level-``k`` cube is the set of points whose chain of attachments
    ends at the same level-``k`` net point.

Both modes produce partitions that are nested by construction.  The ball
constants ``c1`` and ``C1`` are measured on the built system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import Space

__all__ = [
    "DyadicParams",
    "Cube",
    "DyadicSystem",
    "build_system",
    "sample_random_system",
    "derive_seed",
    "surgery_probability",
    "is_good",
    "good_mask",
    "bad_depth",
]

_SHIFT_BITS = 52


@dataclass(frozen=True)
class DyadicParams:
    delta: float = 0.5
    c0: float = 1.0
    C0: float = 1.0
    k_min: int | None = None
    k_max: int | None = None
    r_good: int = 2
    eps_good: float = 0.2
    mode: str = "shifted1d"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.eps_good < 1:
            raise ValueError("eps_good must lie in (0, 1)")
        if not 0 < self.c0 <= self.C0:
            raise ValueError("need 0 < c0 <= C0")
        if self.mode not in ("shifted1d", "generic"):
            raise ValueError(f"unknown construction mode {self.mode!r}")
        if self.r_good < 0:
            raise ValueError("r_good must be nonnegative")


@dataclass(eq=False)
class Cube:
    id: int
    level: int
    alpha: int
    center: int
    members: np.ndarray
    side: float
    parent: int | None = None
    children: list = field(default_factory=list)
    anchor: np.ndarray | None = None

    @property
    def size(self):
        return self.members.size

    def __repr__(self):
        return f"Cube(id={self.id}, level={self.level}, alpha={self.alpha}, size={self.size})"


def derive_seed(seed, *key):
    """Deterministic 63-bit child seed of ``seed`` for the integer path ``key``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, key)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1)) or 1


class DyadicSystem:
    """A level-indexed forest of cubes.

    ``labels[k][x]`` is the id of the level-``k`` cube containing point ``x``.
    """

    def __init__(self, space, params, seed, cubes, labels, shifts=None):
        self.space = space
        self.params = params
        self.seed = seed
        self.mode = params.mode
        self.cubes = cubes
        self.labels = labels
        self.levels = sorted(labels)
        self.by_level = {k: np.array([c.id for c in cubes if c.level == k]) for k in self.levels}
        self.roots = [int(i) for i in self.by_level[self.levels[0]]]
        self.shifts = shifts
        self._dist_cache = {}
        self._cdist_cache = {}
        self.c1, self.C1 = self._measure_ball_constants()

    # -- structure -----------------------------------------------------

    def __len__(self):
        return len(self.cubes)

    def __getitem__(self, cid):
        return self.cubes[cid]

    @property
    def k_min(self):
        return self.levels[0]

    @property
    def k_max(self):
        return self.levels[-1]

    def side(self, cid):
        return self.cubes[cid].side

    def cube_at(self, x, level):
        return int(self.labels[level][x])

    def ancestors(self, cid):
        """Strict ancestors of ``cid``, nearest first."""
        out = []
        p = self.cubes[cid].parent
        while p is not None:
            out.append(p)
            p = self.cubes[p].parent
        return out

    def ancestor(self, cid, t):
        """The ``t``-fold dyadic parent, or ``None`` above the roots."""
        for _ in range(t):
            if cid is None:
                return None
            cid = self.cubes[cid].parent
        return cid

    def subtree(self, cid):
        """Ids of ``cid`` and all its descendants, parents before children."""
        out = [cid]
        i = 0
        while i < len(out):
            out.extend(self.cubes[out[i]].children)
            i += 1
        return out

    def mask(self, cid):
        m = np.zeros(self.space.n_points, dtype=bool)
        m[self.cubes[cid].members] = True
        return m

    def contains(self, big, small):
        """Set containment of member sets (works across systems on one space)."""
        return bool(np.all(self.mask(big)[small.members if isinstance(small, Cube) else small]))

    @property
    def max_children(self):
        return max(len(c.children) for c in self.cubes)

    # -- distances -----------------------------------------------------

    def dist_vector(self, cid):
        """``dist(y, Q)`` for every point ``y`` (zero on ``Q``)."""
        v = self._dist_cache.get(cid)
        if v is None:
            members = self.cubes[cid].members
            v = self.space.dist_matrix[members].min(axis=0)
            v.flags.writeable = False
            self._dist_cache[cid] = v
        return v

    def complement_dist_vector(self, cid):
        """``dist(y, X minus Q)`` for every point ``y``; ``inf`` if ``Q = X``."""
        v = self._cdist_cache.get(cid)
        if v is None:
            outside = ~self.mask(cid)
            if not outside.any():
                v = np.full(self.space.n_points, np.inf)
            else:
                v = self.space.dist_matrix[:, outside].min(axis=1)
            v.flags.writeable = False
            self._cdist_cache[cid] = v
        return v

    def dist_to_cube(self, x, cid):
        if self.cubes[cid].size == 0:
            raise ValueError("empty cube")
        return float(self.dist_vector(cid)[self.space._check(x)])

    def dist_between(self, a, b):
        """``dist(Q, S)`` as the minimum over member pairs."""
        return float(self.dist_vector(a)[self.cubes[b].members].min())

    def boundary_layer(self, cid, eps):
        """Points within ``eps`` of both ``Q`` and its complement."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        near_in = self.dist_vector(cid) <= eps
        near_out = self.complement_dist_vector(cid) <= eps
        return np.flatnonzero(near_in & near_out)

    # -- geometric constants ---------------------------------------------

    def _outer_ball(self, cid, C1):
        c = self.cubes[cid]
        return self.space._order[c.center, : np.searchsorted(
            self.space._sorted[c.center], C1 * c.side, side="left")]

    def _property4_holds(self, C1):
        n = self.space.n_points
        for c in self.cubes:
            if c.parent is None:
                continue
            parent_ball = np.zeros(n, dtype=bool)
            parent_ball[self._outer_ball(c.parent, C1)] = True
            if not parent_ball[self._outer_ball(c.id, C1)].all():
                return False
        return True

    def _measure_ball_constants(self):
        d = self.space.dist_matrix
        inner, outer = np.inf, 0.0
        for c in self.cubes:
            row = d[c.center]
            outer = max(outer, row[c.members].max() / c.side)
            outside = np.ones(self.space.n_points, dtype=bool)
            outside[c.members] = False
            if outside.any():
                inner = min(inner, row[outside].min() / c.side)
        # open balls: C1 must exceed the largest member distance
        C1 = max(outer, 1e-300) * (1 + 1e-9)
        if not np.isfinite(inner):
            inner = C1
        for _ in range(2000):
            if self._property4_holds(C1):
                break
            C1 *= 1.05
        else:
            raise RuntimeError("could not find an outer constant satisfying ball monotonicity")
        return float(inner), float(C1)

    # -- validation ----------------------------------------------------

    def check_properties(self):
        """Exhaustive check of partition, nestedness, ball containment and monotonicity.

        Returns a dict of booleans keyed ``partition``, ``nested``, ``balls``
        and ``monotone``.
        """
        n = self.space.n_points
        out = {"partition": True, "nested": True, "balls": True, "monotone": True}
        for k in self.levels:
            seen = np.zeros(n, dtype=int)
            for cid in self.by_level[k]:
                c = self.cubes[cid]
                seen[c.members] += 1
                if not np.all(self.labels[k][c.members] == cid):
                    out["partition"] = False
            if not np.all(seen == 1):
                out["partition"] = False
        for c in self.cubes:
            if c.parent is not None:
                p = self.cubes[c.parent]
                if not np.all(self.labels[p.level][c.members] == p.id):
                    out["nested"] = False
            if c.children:
                joined = np.sort(np.concatenate([self.cubes[ch].members for ch in c.children]))
                if not np.array_equal(joined, np.sort(c.members)):
                    out["nested"] = False
            inner = self.space._order[c.center, : np.searchsorted(
                self.space._sorted[c.center], self.c1 * c.side, side="left")]
            mask = self.mask(c.id)
            outer = np.zeros(n, dtype=bool)
            outer[self._outer_ball(c.id, self.C1)] = True
            if not mask[inner].all() or not outer[c.members].all():
                out["balls"] = False
        out["monotone"] = self._property4_holds(self.C1)
        return out

    def check_nets(self):
        """Separation and covering of the reference points at each level (generic mode)."""
        if self.mode != "generic":
            return True
        d = self.space.dist_matrix
        p = self.params
        for k in self.levels:
            centers = np.array([self.cubes[c].center for c in self.by_level[k]])
            scale = p.delta ** k
            sub = d[np.ix_(centers, centers)]
            np.fill_diagonal(sub, np.inf)
            if centers.size > 1 and sub.min() < p.c0 * scale:
                return False
            if d[:, centers].min(axis=1).max() > p.C0 * scale:
                return False
        return True


# -- construction ----------------------------------------------------------


def _assemble(space, params, seed, labels, center_of, shifts=None, anchor_of=None):
    """Turn nested per-level label arrays into a :class:`DyadicSystem`."""
    levels = sorted(labels)
    cubes = []
    ids = {}
    for k in levels:
        lab = labels[k]
        keys, inverse = np.unique(lab, return_inverse=True)
        new = np.empty(space.n_points, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(keys.size + 1))
        for alpha, key in enumerate(keys):
            members = np.sort(order[bounds[alpha]: bounds[alpha + 1]])
            cid = len(cubes)
            parent = None
            if k != levels[0]:
                parent = int(ids[k - 1][members[0]])
            cube = Cube(cid, k, alpha, center_of(k, key, members), members, params.delta ** k,
                        parent=parent)
            if anchor_of is not None:
                cube.anchor = anchor_of(members)
            if parent is not None:
                cubes[parent].children.append(cid)
            cubes.append(cube)
            new[members] = cid
        ids[k] = new
    for c in cubes:
        c.members.flags.writeable = False
    return DyadicSystem(space, params, seed, cubes, ids, shifts)


def _level_shifts(seed, k_min, levels):
    """Translation of the level-``k`` binary grid, ``sum_{j > k} w_j 2**-j``.

    Seed 0 is the unshifted standard grid.
    """
    if seed == 0:
        bits = np.zeros(_SHIFT_BITS)
    else:
        bits = np.random.default_rng(seed).integers(0, 2, size=_SHIFT_BITS).astype(float)
    # bits[i] is w_j for j = k_min + 1 + i; at most 52 distinct powers of two,
    # so every partial sum is exact and the summation order is immaterial
    terms = bits * 2.0 ** -np.arange(k_min + 1, k_min + _SHIFT_BITS + 1)
    tail = np.append(np.cumsum(terms[::-1])[::-1], 0.0)
    shifts = {k: float(tail[min(k - k_min, _SHIFT_BITS)]) for k in levels}
    return shifts


def _shifted1d_levels(space, params):
    if space.kind != "grid1d" or space.coords is None or space.coords.shape[1] != 1:
        raise ValueError("shifted1d mode needs a 1D grid space")
    if params.delta != 0.5:
        raise ValueError("shifted1d mode uses delta = 1/2")
    a, b = space.domain
    h = (b - a) / space.n_points
    k_min = params.k_min if params.k_min is not None else math.floor(-math.log2(b - a) + 1e-12)
    k_max = params.k_max if params.k_max is not None else math.ceil(-math.log2(h) - 1e-12)
    if k_max < k_min:
        raise ValueError("empty level range")
    return k_min, k_max


def _build_shifted1d(space, params, seed):
    k_min, k_max = _shifted1d_levels(space, params)
    levels = list(range(k_min, k_max + 1))
    shifts = _level_shifts(seed, k_min, levels)
    x = space.coords[:, 0]
    labels = {k: np.floor((x - shifts[k]) / 2.0 ** (-k)).astype(np.int64) for k in levels}

    def center_of(k, key, members):
        mid = shifts[k] + (key + 0.5) * 2.0 ** (-k)
        return int(members[np.argmin(np.abs(x[members] - mid))])

    def anchor_of(members):
        return np.array([0.5 * (x[members].min() + x[members].max())])

    return _assemble(space, params, seed, labels, center_of, shifts, anchor_of)


def _greedy_net(dist, order, sep, start):
    net = list(start)
    blocked = np.zeros(dist.shape[0], dtype=bool)
    for z in net:
        blocked |= dist[z] < sep
    for p in order:
        if not blocked[p]:
            net.append(int(p))
            blocked |= dist[p] < sep
    return net


def _build_generic(space, params, seed):
    a0 = space.a0
    if 12 * a0 ** 3 * params.C0 * params.delta > params.c0:
        raise ValueError(
            f"generic mode needs 12*A0^3*C0*delta <= c0 (got {12 * a0**3 * params.C0 * params.delta:.4g}"
            f" > {params.c0})")
    n = space.n_points
    delta, c0 = params.delta, params.c0
    if n == 1:
        k_min = params.k_min if params.k_min is not None else 0
        k_max = params.k_max if params.k_max is not None else k_min
    else:
        res, diam = space.resolution, space.diameter
        k_min = params.k_min
        if k_min is None:
            k_min = math.ceil(math.log(diam / c0) / math.log(delta)) - 1
        k_max = params.k_max
        if k_max is None:
            k_max = math.ceil(math.log(res / c0) / math.log(delta) - 1e-12)
            k_max = max(k_max, k_min)
    if k_max < k_min:
        raise ValueError("empty level range")
    levels = list(range(k_min, k_max + 1))

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    d = space.dist_matrix

    nets = {}
    prev = []
    for k in levels:
        prev = _greedy_net(d, order, c0 * delta ** k, prev)
        if not prev:
            raise ValueError(f"empty net at level {k}")
        nets[k] = np.array(prev)

    def nearest(points, targets):
        sub = d[np.ix_(points, targets)]
        best = sub.min(axis=1, keepdims=True)
        # ties resolved by the seeded priority order
        cand = np.where(sub <= best, rank[targets][None, :], np.iinfo(np.int64).max)
        return targets[np.argmin(cand, axis=1)]

    # attachment of finer reference points to coarser ones
    attach = {}
    for k in levels[1:]:
        fine, coarse = nets[k], nets[k - 1]
        par = nearest(fine, coarse)
        in_coarse = np.isin(fine, coarse)
        par[in_coarse] = fine[in_coarse]
        attach[k] = dict(zip(fine.tolist(), par.tolist()))

    labels = {k_max: nearest(np.arange(n), nets[k_max])}
    for k in reversed(levels[:-1]):
        up = attach[k + 1]
        labels[k] = np.array([up[z] for z in labels[k + 1].tolist()], dtype=np.int64)

    def center_of(k, key, members):
        return int(key)

    return _assemble(space, params, seed, labels, center_of)


def build_system(space: Space, params: DyadicParams, seed: int = 0) -> DyadicSystem:
    """Build the dyadic system selected by ``seed`` (an element of the grid probability space)."""
    if params.mode == "shifted1d":
        return _build_shifted1d(space, params, seed)
    return _build_generic(space, params, seed)


def sample_random_system(space, params, seed):
    """Alias of :func:`build_system` that documents the random-grid reading of ``seed``."""
    return build_system(space, params, seed)


# -- goodness ----------------------------------------------------------------


def is_good(system, cid, other, r, eps):
    """Whether cube ``cid`` of ``system`` is ``r``-good with respect to ``other``.

    ``Q`` is good when every cube ``Q1`` of ``other`` at least ``r`` levels
    coarser keeps ``dist(Q, Q1)`` or ``dist(Q, X minus Q1)`` above
    ``l(Q)**eps * l(Q1)**(1 - eps)``.
    """
    q = system.cubes[cid]
    dq = system.dist_vector(cid)
    delta = other.params.delta
    for lev in other.levels:
        if other.params.delta ** lev < q.side / delta ** r * (1 - 1e-12):
            continue
        side1 = delta ** lev
        thresh = q.side ** eps * side1 ** (1 - eps)
        lab = other.labels[lev]
        ids = other.by_level[lev]
        dcube = np.full(len(other.cubes), np.inf)
        np.minimum.at(dcube, lab, dq)
        for c1 in ids[dcube[ids] < thresh]:
            outside = lab != c1
            if not outside.any():
                continue
            if dq[outside].min() < thresh:
                return False
    return True


def good_mask(system, other, r, eps):
    """Boolean array over the cubes of ``system``: ``True`` where ``r``-good in ``other``."""
    return np.array([is_good(system, c.id, other, r, eps) for c in system.cubes])


def bad_depth(system, other, eps):
    """Largest ``r`` for which each cube is ``r``-bad in ``other`` (``-1`` if never bad).

    A cube is ``r``-good exactly when its entry is below ``r``, so one call
    serves every goodness rank.
    """
    delta = other.params.delta
    out = np.full(len(system.cubes), -1, dtype=np.int64)
    for q in system.cubes:
        dq = system.dist_vector(q.id)
        for lev in other.levels:
            side1 = delta ** lev
            gap = math.floor(math.log(side1 / q.side) / math.log(1 / delta) + 1e-9)
            if gap <= out[q.id] or gap < 0:
                continue
            thresh = q.side ** eps * side1 ** (1 - eps)
            lab = other.labels[lev]
            ids = other.by_level[lev]
            dcube = np.full(len(other.cubes), np.inf)
            np.minimum.at(dcube, lab, dq)
            for c1 in ids[dcube[ids] < thresh]:
                outside = lab != c1
                if outside.any() and dq[outside].min() < thresh:
                    out[q.id] = gap
                    break
    return out


# -- surgery -----------------------------------------------------------------


def surgery_probability(space, params, x, level, tau, trials, seed=0):
    """Monte Carlo frequency of ``x`` lying in a ``tau * delta**k`` boundary layer.

    Returns ``(estimate, stderr)`` with the binomial standard error.  Each
    trial ``t`` uses the random system with seed ``derive_seed(seed, t)``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    x = space._check(x)
    if tau <= 0:
        return 0.0, 0.0
    eps = tau * params.delta ** level
    seeds = [derive_seed(seed, t) for t in range(trials)]
    if params.mode == "shifted1d":
        hits = _surgery_hits_1d(space, params, x, level, eps, seeds)
    else:
        hits = np.empty(trials, dtype=bool)
        for t, s in enumerate(seeds):
            sysm = build_system(space, params, s)
            lab = sysm.labels[level]
            other = lab != lab[x]
            hits[t] = other.any() and space.dist_matrix[x, other].min() <= eps
    p = float(hits.mean())
    return p, math.sqrt(p * (1 - p) / trials)


def _surgery_hits_1d(space, params, x, level, eps, seeds):
    k_min, k_max = _shifted1d_levels(space, params)
    if not k_min <= level <= k_max:
        raise ValueError("level outside the system's range")
    coords = np.sort(space.coords[:, 0])
    xc = space.coords[x, 0]
    side = 2.0 ** (-level)
    shifts = np.array([_level_shifts(s, k_min, [level])[level] for s in seeds])
    left = shifts + np.floor((xc - shifts) / side) * side
    right = left + side
    # nearest grid point outside [left, right) on each side
    i_right = np.searchsorted(coords, right, side="left")
    i_left = np.searchsorted(coords, left, side="left") - 1
    d_right = np.where(i_right < coords.size, coords[np.minimum(i_right, coords.size - 1)] - xc, np.inf)
    d_left = np.where(i_left >= 0, xc - coords[np.maximum(i_left, 0)], np.inf)
    return np.minimum(d_left, d_right) <= eps


def analytic_surgery_1d(space, params, level, tau):
    """Exact shift-averaged probability on a uniform 1D grid at an interior point.

    With grid step ``h`` and side ``L`` the event has probability
    ``2 * floor(tau * L / h) * h / L``, which tends to ``2 * tau``.
    """
    a, b = space.domain
    h = (b - a) / space.n_points
    side = params.delta ** level
    return 2 * math.floor(tau * side / h + 1e-12) * h / side
