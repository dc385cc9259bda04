"""Discretized Calderon-Zygmund kernels and the weighted operator ``f -> T(f u)``.

The operator is the dense matrix ``K(x_i, x_j)`` with zero diagonal, i.e.
the kernel truncated at the resolution scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .space import Space, as_measure

__all__ = ["Kernel", "OperatorMatrix", "assemble", "apply_forward", "apply_adjoint",
           "kernel_from_descriptor"]

KINDS = ("hilbert1d", "riesz", "power", "zero")


@dataclass(frozen=True)
class Kernel:
    """Kernel descriptor.

    ``kind`` is one of ``hilbert1d`` (``1 / (x - y)``), ``riesz``
    (component ``component`` of ``(x - y) / |x - y|**(d + 1)`` on a
    ``d``-dimensional embedding), ``power`` (``s_i s_j / V(x_i, x_j)`` with
    alternating signs ``s_i = (-1)**i``) and ``zero``.
    """

    kind: str = "hilbert1d"
    kappa: float = 1.0
    d: int | None = None
    component: int = 0
    c_cz: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")

    @property
    def antisymmetric(self):
        return self.kind in ("hilbert1d", "riesz")


def kernel_from_descriptor(desc):
    d = desc.get("d")
    return Kernel(kind=desc.get("kind", "hilbert1d"), kappa=float(desc.get("kappa", 1.0)),
                  d=None if d is None else int(d), component=int(desc.get("component", 0)))


@dataclass
class OperatorMatrix:
    space: Space
    kernel: Kernel | None
    entries: np.ndarray
    report: dict = field(default_factory=dict)

    @classmethod
    def from_entries(cls, space, entries):
        """Wrap an explicit kernel matrix; the diagonal is forced to zero."""
        entries = np.array(entries, dtype=float)
        n = space.n_points
        if entries.shape != (n, n):
            raise ValueError(f"entries must have shape ({n}, {n})")
        np.fill_diagonal(entries, 0.0)
        entries.flags.writeable = False
        return cls(space, None, entries)

    @property
    def n(self):
        return self.entries.shape[0]

    def transpose(self):
        """Operator with the transposed kernel ``K(y, x)``."""
        return OperatorMatrix(self.space, self.kernel, self.entries.T.copy(), dict(self.report))

    def weighted(self, u, v):
        """``B = diag(sqrt v) K diag(sqrt u)``, the matrix whose norm is the operator norm."""
        return np.sqrt(v)[:, None] * self.entries * np.sqrt(u)[None, :]


def _kernel_matrix(space, kernel):
    n = space.n_points
    if kernel.kind == "zero":
        return np.zeros((n, n))
    if kernel.kind == "hilbert1d":
        if space.coords is None or space.coords.shape[1] != 1:
            raise ValueError("hilbert1d needs a space with 1D coordinates")
        x = space.coords[:, 0]
        diff = x[:, None] - x[None, :]
        with np.errstate(divide="ignore"):
            k = 1.0 / diff
    elif kernel.kind == "riesz":
        if space.coords is None:
            raise ValueError("riesz needs an embedded space")
        dim = space.coords.shape[1]
        if kernel.d is not None and kernel.d != dim:
            raise ValueError(f"riesz kernel of dimension {kernel.d} on a {dim}-dimensional space")
        if not 0 <= kernel.component < dim:
            raise ValueError("riesz component out of range")
        diff = space.coords[:, None, kernel.component] - space.coords[None, :, kernel.component]
        with np.errstate(divide="ignore", invalid="ignore"):
            k = diff / space.dist_matrix ** (dim + 1)
    else:  # power
        s = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        k = s[:, None] * s[None, :] / space.volume_matrix()
    np.fill_diagonal(k, 0.0)
    return k


def kernel_bounds(space, entries, kappa, samples=20000, seed=0, interior=None):
    """Measured size and smoothness constants of a kernel matrix.

    ``size`` is the largest ``|K(x, y)| V(x, y)``.  ``smooth`` is the largest
    ``(|K(x,y) - K(x',y)| + |K(y,x) - K(y,x')|) V(x, y) (d(x,y)/d(x,x'))**kappa``
    over sampled triples with ``0 < d(x, x') <= d(x, y) / (2 A0)``.
    ``interior`` restricts ``x`` (and ``y`` for the size bound) to a point subset.
    """
    n = space.n_points
    if n < 2:
        return {"size": 0.0, "smooth": 0.0, "triples": 0}
    vol = space.volume_matrix()
    d = space.dist_matrix
    pts = np.arange(n) if interior is None else np.asarray(interior)
    sub = np.ix_(pts, pts)
    off = ~np.eye(pts.size, dtype=bool)
    size = float(np.max((np.abs(entries[sub]) * vol[sub])[off])) if pts.size > 1 else 0.0

    rng = np.random.default_rng(seed)
    x = rng.choice(pts, size=samples)
    y = rng.integers(0, n, size=samples)
    xp = rng.integers(0, n, size=samples)
    ok = (x != y) & (x != xp) & (d[x, xp] <= d[x, y] / (2 * space.a0))
    x, y, xp = x[ok], y[ok], xp[ok]
    diff = np.abs(entries[x, y] - entries[xp, y]) + np.abs(entries[y, x] - entries[y, xp])
    smooth = diff * vol[x, y] * (d[x, y] / d[x, xp]) ** kappa
    return {"size": size, "smooth": float(smooth.max()) if smooth.size else 0.0,
            "triples": int(ok.sum())}


def assemble(space: Space, kernel: Kernel, validate=True, samples=20000, seed=0):
    """Dense kernel matrix with zero diagonal plus a report of measured kernel constants."""
    entries = _kernel_matrix(space, kernel)
    entries.flags.writeable = False
    m = OperatorMatrix(space, kernel, entries)
    if validate:
        m.report = kernel_bounds(space, entries, kernel.kappa, samples, seed)
    return m


def apply_forward(m: OperatorMatrix, f, u):
    """``T(f u)(x_i) = sum_{j != i} K(x_i, x_j) f(x_j) u_j``."""
    f = np.asarray(f, dtype=float)
    u = as_measure(u, m.n)
    return m.entries @ (f * u)


def apply_adjoint(m: OperatorMatrix, g, v):
    """``T*(g v)(y_j) = sum_{i != j} K(x_i, y_j) g(x_i) v_i`` (transposed kernel)."""
    g = np.asarray(g, dtype=float)
    v = as_measure(v, m.n)
    return m.entries.T @ (g * v)
