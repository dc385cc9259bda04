"""Haar bases adapted to a weight on a dyadic system.

Every Haar function is stored as one constant per child of its cube.  The
cancellative functions of a cube are obtained by Gram-Schmidt in ``L2(w)`` on
the child indicators, after removing the constant direction, in child order.
Children whose ``w``-mass is below ``1e-12 * w(Q)`` are null vectors of
``L2(w)`` and are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dyadic import DyadicSystem, good_mask
from .space import as_measure

__all__ = [
    "HaarFunction",
    "HaarBasis",
    "build_basis",
    "haar_project",
    "expectation",
    "split_good_bad",
    "norm_scaling_constant",
]

DROP_RTOL = 1e-12


@dataclass(frozen=True)
class HaarFunction:
    cube: int
    index: int
    children: np.ndarray  # child cube ids the constants refer to
    values: np.ndarray    # one constant per child


def _cancellative(masses):
    """Orthonormal mean-zero vectors in ``R^M`` with inner product ``diag(masses)``."""
    m = masses.size
    total = masses.sum()
    basis = []
    for i in range(m):
        vec = np.zeros(m)
        vec[i] = 1.0
        vec -= masses[i] / total
        for b in basis:
            vec -= (vec * b * masses).sum() * b
        norm2 = (vec * vec * masses).sum()
        # the last indicator is spanned by the constant and the previous ones
        if norm2 <= 1e-20:
            continue
        vec = vec / np.sqrt(norm2)
        # one more pass keeps orthogonality at round-off level
        for b in basis:
            vec -= (vec * b * masses).sum() * b
        vec -= (vec * masses).sum() / total
        vec /= np.sqrt((vec * vec * masses).sum())
        basis.append(vec)
        if len(basis) == m - 1:
            break
    return np.array(basis).reshape(-1, m)


class HaarBasis:
    """Weighted Haar basis ``{h_Q^eps}`` of a dyadic system.

    Attributes
    ----------
    mass : (n_cubes,) array
        ``w(Q)`` for every cube.
    children : list of arrays
        Positive-mass children of each cube (the ones the constants refer to).
    values : list of arrays
        ``(M_Q - 1, M_Q)`` per-child constants of the cancellative functions.
    """

    def __init__(self, system: DyadicSystem, w):
        w = as_measure(w, system.space.n_points)
        if not np.any(w > 0):
            raise ValueError("the weight vanishes identically")
        self.system = system
        self.weight = w
        self.mass = np.array([w[c.members].sum() for c in system.cubes])
        self.children = []
        self.values = []
        for c in system.cubes:
            kids = np.array(c.children, dtype=np.int64)
            if kids.size:
                km = self.mass[kids]
                kids = kids[km > DROP_RTOL * self.mass[c.id]]
            self.children.append(kids)
            if kids.size >= 2:
                self.values.append(_cancellative(self.mass[kids]))
            else:
                self.values.append(np.zeros((0, kids.size)))
        self._kid_all = np.concatenate([k for k in self.children if k.size >= 2] or [np.zeros(0, int)])
        self._par_all = np.concatenate([np.full(k.size, cid) for cid, k in enumerate(self.children)
                                        if k.size >= 2] or [np.zeros(0, int)])

    # -- bookkeeping ---------------------------------------------------

    @property
    def n_functions(self):
        return sum(v.shape[0] for v in self.values)

    def m_q(self, cid):
        """Number of positive-mass children (``M_Q``)."""
        return int(self.children[cid].size)

    @property
    def sup_m(self):
        return max(self.system.max_children, 1)

    def functions(self, cid):
        return [HaarFunction(cid, e + 1, self.children[cid], self.values[cid][e])
                for e in range(self.values[cid].shape[0])]

    def function_values(self, cid, eps):
        """Pointwise values of ``h_Q^eps``; ``eps = 0`` is the normalized indicator."""
        n = self.system.space.n_points
        out = np.zeros(n)
        cube = self.system.cubes[cid]
        if eps == 0:
            if self.mass[cid] <= 0:
                raise ValueError("cube has zero mass")
            out[cube.members] = self.mass[cid] ** -0.5
            return out
        vals = self.values[cid][eps - 1]
        for ch, a in zip(self.children[cid], vals):
            out[self.system.cubes[ch].members] = a
        return out

    # -- coefficients ----------------------------------------------------

    def cube_integrals(self, f):
        """``int_Q f dw`` for every cube, via one bincount per level."""
        system = self.system
        fw = np.asarray(f, dtype=float) * self.weight
        out = np.zeros(len(system.cubes))
        for k in system.levels:
            out += np.bincount(system.labels[k], weights=fw, minlength=len(system.cubes))
        return out

    def coefficients(self, f):
        """``<f, h_Q^eps>_w`` for every cube, as a list of arrays (one per cube)."""
        ints = self.cube_integrals(f)
        return [vals @ ints[kids] if vals.size else np.zeros(0)
                for kids, vals in zip(self.children, self.values)]

    def delta_norms_sq(self, f):
        """``||Delta_Q f||^2_{L2(w)}`` for every cube, without forming the projections.

        Uses ``||Delta_Q f||^2 = sum_R w(R) <f>_R^2 - w(Q) <f>_Q^2`` over the
        positive-mass children ``R``.
        """
        ints = self.cube_integrals(f)
        n = len(self.system.cubes)
        kids = self._kid_all
        fine = np.bincount(self._par_all, weights=ints[kids] ** 2 / self.mass[kids], minlength=n)
        coarse = np.zeros(n)
        has = np.array([k.size >= 2 for k in self.children])
        coarse[has] = ints[has] ** 2 / self.mass[has]
        return np.maximum(fine - coarse, 0.0)

    def averages(self, f):
        """``w``-average of ``f`` over each cube (``nan`` on null cubes)."""
        ints = self.cube_integrals(f)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.mass > 0, ints / np.where(self.mass > 0, self.mass, 1), np.nan)

    def synthesize(self, coeffs, cubes=None, with_top=None, f_top=None):
        """Sum ``sum_Q sum_eps c_Q^eps h_Q^eps`` over ``cubes`` (default all).

        ``with_top`` optionally adds the root expectations of ``f_top``.
        """
        n = self.system.space.n_points
        out = np.zeros(n)
        cubes = range(len(self.system.cubes)) if cubes is None else cubes
        for cid in cubes:
            c = coeffs[cid]
            if c.size == 0:
                continue
            per_child = c @ self.values[cid]
            for ch, a in zip(self.children[cid], per_child):
                out[self.system.cubes[ch].members] += a
        if with_top:
            out += self.expectation_level(f_top, self.system.k_min)
        return out

    def delta(self, f, cid):
        """Martingale difference ``Delta_Q f``."""
        return haar_project(f, cid, self)

    def expectation_level(self, f, level):
        """``E_k f``: the ``w``-average of ``f`` on each level-``k`` cube."""
        avg = self.averages(f)
        lab = self.system.labels[level]
        out = avg[lab]
        return np.where(np.isnan(out), 0.0, out)

    def difference_level(self, f, level):
        """``D_k f = sum over level-k cubes of Delta_Q f``."""
        coeffs = self.coefficients(f)
        return self.synthesize(coeffs, cubes=self.system.by_level[level])

    def norm(self, f):
        f = np.asarray(f, dtype=float)
        return float(np.sqrt((f * f * self.weight).sum()))

    def inner(self, f, g):
        return float((np.asarray(f) * np.asarray(g) * self.weight).sum())


def build_basis(system, w):
    return HaarBasis(system, w)


def haar_project(f, cid, basis):
    """``Delta_Q f = sum_eps <f, h_Q^eps>_w h_Q^eps`` (supported on ``Q``)."""
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    vals = basis.values[cid]
    if vals.size == 0:
        return out
    kids = basis.children[cid]
    cubes = basis.system.cubes
    fw = f * basis.weight
    ints = np.array([fw[cubes[ch].members].sum() for ch in kids])
    per_child = (vals @ ints) @ vals
    for ch, a in zip(kids, per_child):
        out[cubes[ch].members] = a
    return out


def expectation(f, cid, basis):
    """``E_Q f``: the ``w``-average of ``f`` over ``Q`` on ``Q``, zero elsewhere."""
    m = basis.mass[cid]
    if m <= 0:
        raise ValueError("w(Q) = 0")
    f = np.asarray(f, dtype=float)
    members = basis.system.cubes[cid].members
    out = np.zeros_like(f)
    out[members] = (f[members] * basis.weight[members]).sum() / m
    return out


def split_good_bad(f, basis, other, r, eps):
    """Split ``f`` into the Haar projections on good and on bad cubes.

    The bad part collects ``Delta_Q f`` over cubes of ``basis.system`` that
    are ``r``-bad in ``other``; the good part is ``f - f_bad``.
    """
    f = np.asarray(f, dtype=float)
    good = good_mask(basis.system, other, r, eps)
    bad_ids = np.flatnonzero(~good)
    coeffs = basis.coefficients(f)
    f_bad = basis.synthesize(coeffs, cubes=bad_ids)
    return f - f_bad, f_bad


def norm_scaling_constant(basis):
    """Single constant ``C`` with ``||h||_p / w(Q)**(1/p - 1/2)`` in ``[1/C, C]``, p in {1, 2, inf}.

    Also returns the spread of ``||h||_1 * ||h||_inf``.
    """
    lo, hi = np.inf, 0.0
    prod_lo, prod_hi = np.inf, 0.0
    for cid, (kids, vals) in enumerate(zip(basis.children, basis.values)):
        if vals.size == 0:
            continue
        wq = basis.mass[cid]
        km = basis.mass[kids]
        for row in vals:
            l1 = (np.abs(row) * km).sum()
            l2 = np.sqrt((row * row * km).sum())
            linf = np.abs(row).max()
            ratios = (l1 / wq ** 0.5, l2, linf * wq ** 0.5)
            lo = min(lo, *ratios)
            hi = max(hi, *ratios)
            prod_lo = min(prod_lo, l1 * linf)
            prod_hi = max(prod_hi, l1 * linf)
    if hi == 0:
        return 1.0, (1.0, 1.0)
    return float(max(hi, 1 / lo)), (float(prod_lo), float(prod_hi))
