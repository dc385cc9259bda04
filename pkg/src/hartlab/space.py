"""Finite atomic models of spaces of homogeneous type.

A :class:`Space` is a finite point set with a quasi-metric given as a dense
distance matrix and a strictly positive base measure ``mu`` (one atom per
point).  Other measures (the weights ``u`` and ``v``) are plain nonnegative
arrays indexed like the points.

Balls are open: ``B(x, r) = {y : d(x, y) < r}``.  Every ball query is served
from a per-point sorted distance index built once at construction.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Space",
    "as_measure",
    "grid1d",
    "grid2d",
    "tree",
    "from_points",
    "from_descriptor",
]


def as_measure(w, n):
    """Validate ``w`` as a measure on ``n`` points and return a float array."""
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"measure must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("measure atoms must be finite and nonnegative")
    return w


class Space:
    """A finite quasi-metric measure space.

    Parameters
    ----------
    dist : (N, N) array
        Symmetric distance matrix with zero diagonal.
    mu : (N,) array
        Strictly positive base measure.
    a0 : float
        Quasi-triangle constant (validated by sampling, not certified).
    n_dim : float
        Upper dimension used by the two-weight functionals.
    coords : (N, d) array, optional
        Embedding coordinates for Euclidean scenarios.
    kind : str
        Scenario tag (``grid1d``, ``grid2d``, ``tree``, ``points``).
    """

    def __init__(self, dist, mu, *, a0=1.0, n_dim=1.0, coords=None, kind="points",
                 domain=None):
        dist = np.array(dist, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1] or dist.shape[0] == 0:
            raise ValueError("dist must be a nonempty square matrix")
        n = dist.shape[0]
        if np.any(np.diag(dist) != 0):
            raise ValueError("dist must vanish on the diagonal")
        if not np.allclose(dist, dist.T, rtol=0, atol=0):
            raise ValueError("dist must be symmetric")
        off = dist[~np.eye(n, dtype=bool)]
        if np.any(off <= 0):
            raise ValueError("distinct points must have positive distance")
        mu = as_measure(mu, n)
        if np.any(mu <= 0):
            raise ValueError("the base measure must charge every point")
        if a0 < 1:
            raise ValueError("a0 must be >= 1")

        self.dist_matrix = dist
        self.mu = mu
        self.a0 = float(a0)
        self.n_dim = float(n_dim)
        self.coords = None if coords is None else np.asarray(coords, dtype=float).reshape(n, -1)
        self.kind = kind
        self.domain = domain

        self._order = np.argsort(dist, axis=1, kind="stable")
        self._sorted = np.take_along_axis(dist, self._order, axis=1)
        self._mu_cum = np.zeros((n, n + 1))
        np.cumsum(mu[self._order], axis=1, out=self._mu_cum[:, 1:])

        for arr in (self.dist_matrix, self.mu, self._order, self._sorted, self._mu_cum):
            arr.flags.writeable = False

    # -- basic queries -------------------------------------------------

    @property
    def n_points(self):
        return self.dist_matrix.shape[0]

    @property
    def resolution(self):
        """Smallest positive distance between two points."""
        if self.n_points == 1:
            return 0.0
        return float(self._sorted[:, 1].min())

    @property
    def diameter(self):
        return float(self._sorted[:, -1].max())

    def _check(self, x):
        if not (0 <= x < self.n_points) or int(x) != x:
            raise IndexError(f"unknown point index {x!r}")
        return int(x)

    def dist(self, x, y):
        return float(self.dist_matrix[self._check(x), self._check(y)])

    def ball_measure(self, x, r, w=None):
        """Mass of the open ball ``B(x, r)`` under ``w`` (default: ``mu``)."""
        x = self._check(x)
        if r < 0:
            raise ValueError("radius must be nonnegative")
        k = int(np.searchsorted(self._sorted[x], r, side="left"))
        if w is None:
            return float(self._mu_cum[x, k])
        w = as_measure(w, self.n_points)
        return float(w[self._order[x, :k]].sum())

    def mu_balls(self, x, radii):
        """Vectorized ``mu(B(x, r))`` for an array of radii."""
        x = self._check(x)
        radii = np.asarray(radii, dtype=float)
        k = np.searchsorted(self._sorted[x], radii, side="left")
        return self._mu_cum[x, k]

    def mu_balls_at(self, location, radii):
        """``mu`` of open Euclidean balls centred at an arbitrary location.

        Only available for embedded (coordinate) scenarios.
        """
        if self.coords is None:
            raise ValueError("space has no coordinates")
        location = np.asarray(location, dtype=float).reshape(-1)
        d = np.sqrt(((self.coords - location) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")
        cum = np.concatenate([[0.0], np.cumsum(self.mu[order])])
        k = np.searchsorted(d[order], np.asarray(radii, dtype=float), side="left")
        return cum[k]

    def volume_V(self, x, y):
        """``V(x, y) = mu(B(x, d(x, y)))``; undefined on the diagonal."""
        x, y = self._check(x), self._check(y)
        if x == y:
            raise ValueError("V(x, x) is undefined")
        return self.ball_measure(x, self.dist_matrix[x, y])

    def volume_matrix(self):
        """``V(x_i, x_j)`` for all pairs; the diagonal is set to ``nan``."""
        n = self.n_points
        # rank of d(i, j) among row i distances, counting strictly smaller ones
        k = np.empty((n, n), dtype=np.intp)
        for i in range(n):
            k[i] = np.searchsorted(self._sorted[i], self.dist_matrix[i], side="left")
        vol = np.take_along_axis(self._mu_cum, k, axis=1)
        np.fill_diagonal(vol, np.nan)
        return vol

    # -- diagnostics -----------------------------------------------------

    def shell_radii(self, lo, hi, count=24):
        """Radii in ``[lo, hi]`` placed halfway between consecutive distance shells.

        A radius equal to some pairwise distance makes open-ball counts depend on
        rounding, so sampled radii are moved off the distance set.
        """
        shells = np.unique(self._sorted)
        mids = 0.5 * (shells[:-1] + shells[1:])
        mids = mids[(mids >= lo) & (mids <= hi)]
        if mids.size == 0:
            return mids
        if mids.size > count:
            idx = np.unique(np.round(np.geomspace(1, mids.size, count)).astype(int) - 1)
            mids = mids[idx]
        return mids

    def estimate_doubling(self, radii=None, centers=None, multipliers=(2, 4, 8)):
        """Empirical doubling constant and upper dimension.

        Returns ``(c_mu, n_est)`` where ``c_mu`` is the largest observed
        ``mu(B(x, 2r)) / mu(B(x, r))`` and ``n_est`` the least-squares slope of
        ``log mu(B(x, m r)) / mu(B(x, r))`` against ``log m``.  Only balls whose
        radius stays inside the sampled scale range enter either estimate.
        """
        if self.n_points == 1:
            return 1.0, 0.0
        if radii is None:
            res, diam = self.resolution, self.diameter
            radii = self.shell_radii(2 * res, diam / 4)
        radii = np.asarray(radii, dtype=float)
        if radii.size == 0:
            raise ValueError("empty scale range")
        if np.any(radii <= 0):
            raise ValueError("radii must be positive")
        centers = np.arange(self.n_points) if centers is None else np.asarray(centers, dtype=int)
        top = radii.max()

        c_mu = 1.0
        xs, ys = [], []
        for x in centers:
            base = self.mu_balls(x, radii)
            dbl = radii[2 * radii <= top]
            if dbl.size:
                c_mu = max(c_mu, float(np.max(self.mu_balls(x, 2 * dbl) / base[: dbl.size])))
            for m in multipliers:
                keep = m * radii <= top
                ratio = self.mu_balls(x, m * radii[keep]) / base[keep]
                xs.append(np.full(ratio.size, math.log(m)))
                ys.append(np.log(ratio))
        xs = np.concatenate(xs)
        ys = np.concatenate(ys)
        if xs.size == 0:
            raise ValueError("scale range too narrow for the multipliers")
        # regression through the origin: the ratio is 1 at m = 1
        n_est = float(xs @ ys / (xs @ xs))
        return c_mu, n_est

    def quasi_triangle_violation(self, samples=20000, seed=0):
        """Largest sampled ``d(x, y) / (d(x, z) + d(z, y))``.

        The quasi-triangle inequality with constant ``a0`` holds on the sample
        iff the returned value is at most ``a0``.  Small spaces are checked
        exhaustively.
        """
        n = self.n_points
        if n < 3:
            return 0.0
        d = self.dist_matrix
        if n ** 3 <= samples:
            x, z, y = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
            x, z, y = x.ravel(), z.ravel(), y.ravel()
        else:
            rng = np.random.default_rng(seed)
            x, y, z = rng.integers(0, n, size=(3, samples))
        denom = d[x, z] + d[z, y]
        ok = denom > 0
        if not np.any(ok):
            return 0.0
        return float(np.max(d[x, y][ok] / denom[ok]))

    def validate(self, samples=20000, seed=0):
        """Raise ``ValueError`` when the sampled quasi-triangle check fails."""
        worst = self.quasi_triangle_violation(samples, seed)
        if worst > self.a0 * (1 + 1e-12):
            raise ValueError(f"quasi-triangle inequality fails: ratio {worst:.6g} > a0={self.a0}")
        return worst


# -- scenario constructors -------------------------------------------------


def _euclidean(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def grid1d(n_points, domain=(0.0, 1.0), base_measure="lebesgue", lam=1.0, a0=1.0, mu=None):
    """Cell-midpoint grid on ``[a, b)``.

    ``base_measure`` is ``"lebesgue"``, ``"bessel"`` (``x^(2 lam) dx``, density
    evaluated at cell midpoints) or ``"custom"`` with explicit atoms ``mu``.
    """
    a, b = map(float, domain)
    if not b > a:
        raise ValueError("domain must satisfy a < b")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    h = (b - a) / n_points
    x = a + (np.arange(n_points) + 0.5) * h
    if base_measure == "lebesgue":
        mu = np.full(n_points, h)
    elif base_measure == "bessel":
        if a < 0:
            raise ValueError("the Bessel measure lives on (0, inf)")
        mu = x ** (2 * lam) * h
    elif base_measure == "custom":
        if mu is None:
            raise ValueError("custom base measure needs explicit atoms")
    else:
        raise ValueError(f"unknown base measure {base_measure!r}")
    coords = x[:, None]
    return Space(np.abs(x[:, None] - x[None, :]), mu, a0=a0, n_dim=1.0, coords=coords,
                 kind="grid1d", domain=(a, b))


def grid2d(n_side, domain=(0.0, 1.0), a0=1.0):
    """``n_side x n_side`` cell-midpoint grid on a square with Lebesgue measure."""
    a, b = map(float, domain)
    h = (b - a) / n_side
    t = a + (np.arange(n_side) + 0.5) * h
    xx, yy = np.meshgrid(t, t, indexing="ij")
    coords = np.column_stack([xx.ravel(), yy.ravel()])
    mu = np.full(coords.shape[0], h * h)
    return Space(_euclidean(coords), mu, a0=a0, n_dim=2.0, coords=coords, kind="grid2d",
                 domain=(a, b))


def tree_distance(i, j, depth):
    """Leaf distance ``2**-j`` where ``j`` is the depth of the nearest common ancestor."""
    if i == j:
        return 0.0
    common = depth - (int(i) ^ int(j)).bit_length()
    return 2.0 ** (-common)


def tree(depth, a0=1.0):
    """Leaves of a complete binary tree with the ultrametric ``2**-(ancestor depth)``."""
    n = 2 ** depth
    idx = np.arange(n)
    xor = idx[:, None] ^ idx[None, :]
    bits = np.zeros_like(xor)
    nz = xor > 0
    bits[nz] = np.floor(np.log2(xor[nz])).astype(int) + 1
    dist = np.where(nz, 2.0 ** (-(depth - bits)), 0.0)
    return Space(dist, np.full(n, 1.0 / n), a0=a0, n_dim=1.0, kind="tree")


def from_points(coords, mu=None, a0=1.0, n_dim=None):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0]
    mu = np.full(n, 1.0 / n) if mu is None else mu
    n_dim = coords.shape[1] if n_dim is None else n_dim
    return Space(_euclidean(coords), mu, a0=a0, n_dim=n_dim, coords=coords, kind="points")


def from_descriptor(desc):
    """Build a space from the ``"space"`` block of a scenario descriptor."""
    kind = desc.get("kind", "grid1d")
    a0 = float(desc.get("a0", 1.0))
    if kind == "grid1d":
        return grid1d(int(desc["n_points"]), tuple(desc.get("domain", (0.0, 1.0))),
                      desc.get("base_measure", "lebesgue"), float(desc.get("lambda", 1.0)), a0,
                      desc.get("mu"))
    if kind == "grid2d":
        side = int(round(math.sqrt(int(desc["n_points"]))))
        if side * side != int(desc["n_points"]):
            raise ValueError("grid2d needs a square number of points")
        return grid2d(side, tuple(desc.get("domain", (0.0, 1.0))), a0)
    if kind == "tree":
        depth = int(desc["n_points"]).bit_length() - 1
        if 2 ** depth != int(desc["n_points"]):
            raise ValueError("tree needs a power-of-two number of points")
        return tree(depth, a0)
    if kind == "points":
        coords = np.asarray(desc["coords"], dtype=float)
        mu = desc.get("mu")
        return from_points(coords, None if mu is None else np.asarray(mu, float), a0)
    raise ValueError(f"unknown space kind {kind!r}")
