import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hartlab import (DyadicParams, Kernel, TwoWeightParams, assemble, build_system, from_points,
                     grid1d)
from hartlab.constants import (ConvergenceError, a2_constant, carleson_embedding,
                               classical_poisson_1d, compute_constants, decay_ratio,
                               offsupport_ratio, operator_norm, pivotal_constant, pivotal_psi,
                               poisson_K, power_norm, weak_boundedness)
from hartlab.constants import testing_constant as t_const
from hartlab.verify import count_subpartitions, enumerate_psi

PARAMS = TwoWeightParams()


def _poisson_oracle(system, cid, w, kappa=1.0):
    # direct double loop over points
    space = system.space
    cube = system.cubes[cid]
    x = space.coords[:, 0]
    a = cube.anchor[0]
    total = 0.0
    for y in range(space.n_points):
        d = min(abs(x[y] - x[z]) for z in cube.members)
        rho = cube.side + d
        vol = space.mu[np.abs(x - a) < rho].sum()
        total += (cube.side / rho) ** kappa / vol * w[y]
    return total


def test_params_exponents():
    assert PARAMS.sigma0 == pytest.approx(-0.6)
    assert PARAMS.gamma_decay == pytest.approx(0.6)
    with pytest.raises(ValueError):
        TwoWeightParams(lam=0.5)
    with pytest.raises(ValueError):
        TwoWeightParams(kappa=0.0)


def test_poisson_matches_direct_sum(rng):
    space = grid1d(32)
    system = build_system(space, DyadicParams(), 9)
    w = rng.random(32)
    for cid in range(0, len(system.cubes), 5):
        assert poisson_K(system, cid, w, 1.0) == pytest.approx(_poisson_oracle(system, cid, w),
                                                               rel=1e-12)
        assert poisson_K(system, cid, w, 0.5) == pytest.approx(
            _poisson_oracle(system, cid, w, 0.5), rel=1e-12)


def test_poisson_is_half_the_classical_integral_inside():
    space = grid1d(512)
    system = build_system(space, DyadicParams(), 0)
    x = space.coords[:, 0]
    q = system.cube_at(int(np.searchsorted(x, 0.51)), 4)
    w = ((x > 0.35) & (x < 0.7)).astype(float)
    k = poisson_K(system, q, w, 1.0)
    p = classical_poisson_1d(system, q, w)
    assert k == pytest.approx(0.5 * p, rel=1e-9)


def test_poisson_zero_weight_and_nonembedded():
    system = build_system(grid1d(8), DyadicParams(), 0)
    assert poisson_K(system, 0, np.zeros(8), 1.0) == 0.0
    from hartlab import tree
    t = build_system(tree(3), DyadicParams(delta=1 / 12, mode="generic"), 0)
    with pytest.raises(ValueError):
        classical_poisson_1d(t, 0, np.ones(8))


def test_a2_matches_brute_force(rng):
    space = grid1d(16)
    system = build_system(space, DyadicParams(), 2)
    u, v = rng.random(16), rng.random(16)
    fwd = dual = 0.0
    for c in system.cubes:
        uq, vq = u[c.members].sum(), v[c.members].sum()
        fwd = max(fwd, math.sqrt(uq * _poisson_oracle(system, c.id, v) / c.side))
        dual = max(dual, math.sqrt(vq * _poisson_oracle(system, c.id, u) / c.side))
    f, d, _ = a2_constant(system, u, v, PARAMS)
    assert (f, d) == pytest.approx((fwd, dual), rel=1e-12)


def test_two_point_hand_values(two_point):
    space, m, u, v = two_point
    system = build_system(space, DyadicParams(), 0)
    # top cube: T(u) = (8, -2); ||.||_v^2 = 64*9 + 4 = 580, u(Q) = 5
    tf, td, arg = t_const(system, m, u, v)
    assert tf == pytest.approx(math.sqrt(116), abs=1e-12)
    assert tf == pytest.approx(math.sqrt(580 / 5), abs=1e-12)
    # transposed: T*(v) = (-2, 18); 4 * 1 + 324 * 4 = 1300, v(Q) = 10
    assert td == pytest.approx(math.sqrt(130), abs=1e-12)
    assert arg == (system.roots[0], system.roots[0])
    # diag(sqrt v) K diag(sqrt u) = [[0, 12], [-2, 0]]
    assert operator_norm(m, u, v) == pytest.approx(12.0, abs=1e-12)
    # singletons give 72 / 6 and 2 / 1, the top pair 70 / sqrt(50)
    assert weak_boundedness(system, system, m, u, v, rho=1) == pytest.approx(12.0, abs=1e-12)
    assert 70 / math.sqrt(50) < 12


def test_pivotal_leaf_and_two_level():
    space = grid1d(2)
    system = build_system(space, DyadicParams(), 0)
    root = system.roots[0]
    u, v = np.array([1.0, 3.0]), np.array([2.0, 5.0])
    leaf = system.cube_at(1, system.k_max)
    k_leaf = poisson_K(system, leaf, u * [0, 1], 1.0)
    assert pivotal_psi(system, leaf, [1], u, v, 1.0) == pytest.approx(5 * k_leaf ** 2)
    phi = {c.id: v[c.members].sum() * poisson_K(system, c.id, u, 1.0) ** 2 for c in system.cubes}
    kids = system.cubes[root].children
    want = max(phi[root], sum(phi[k] for k in kids))
    assert pivotal_psi(system, root, [0, 1], u, v, 1.0) == pytest.approx(want, rel=1e-14)
    proper = pivotal_psi(system, root, [0, 1], u, v, 1.0, include_self=False)
    assert proper == pytest.approx(sum(phi[k] for k in kids), rel=1e-14)


def test_subpartition_count_on_sixteen_points():
    system = build_system(grid1d(16), DyadicParams(), 0)
    assert system.levels == [0, 1, 2, 3, 4]
    # binary tree of height h: c(h) = 1 + c(h - 1)**2
    assert [count_subpartitions(system, system.by_level[k][0]) for k in (4, 3, 2, 1, 0)] == \
        [1, 2, 5, 26, 677]


def test_pivotal_matches_enumeration(rng):
    space = grid1d(16)
    system = build_system(space, DyadicParams(), 0)
    u = rng.random(16)
    v = rng.random(16)
    v[5] = 50.0  # a spike makes a nontrivial partition win
    best = 0.0
    for c in system.cubes:
        phi = [v[s.members].sum() * poisson_K(system, s.id, u * system.mask(c.id), 1.0) ** 2
               for s in system.cubes]
        best = max(best, enumerate_psi(system, c.id, phi) / u[c.members].sum())
    f, _, _ = pivotal_constant(system, u, v, PARAMS)
    assert f == pytest.approx(math.sqrt(best), rel=1e-13)


def test_pivotal_zero_weight():
    system = build_system(grid1d(8), DyadicParams(), 0)
    f, d, _ = pivotal_constant(system, np.ones(8), np.zeros(8), PARAMS)
    assert f == 0.0 and d == 0.0
    with pytest.raises(ValueError):
        pivotal_constant(system, np.zeros(8), np.ones(8), PARAMS)


def test_pivotal_single_cube():
    system = build_system(from_points([[0.5]]), DyadicParams(delta=1 / 12, mode="generic"), 0)
    f, d, _ = pivotal_constant(system, [2.0], [3.0], PARAMS)
    k_u = poisson_K(system, 0, [2.0], 1.0)
    assert f == pytest.approx(math.sqrt(3 * k_u ** 2 / 2), rel=1e-12)
    assert d > 0


def test_power_iteration_matches_svd(rng):
    space = grid1d(128)
    m = assemble(space, Kernel("hilbert1d"))
    u, v = rng.random(128) / 128, rng.random(128) / 128
    svd = operator_norm(m, u, v, method="svd")
    power = operator_norm(m, u, v, method="power", tol=1e-14)
    assert power == pytest.approx(svd, rel=1e-8)
    assert operator_norm(m, np.zeros(128), v) == 0.0
    with pytest.raises(ValueError):
        operator_norm(m, u, v, method="lanczos")


def test_power_iteration_cap_raises_interval(rng):
    b = rng.standard_normal((20, 20))
    with pytest.raises(ConvergenceError) as info:
        power_norm(b, max_iter=1)
    lo, hi = info.value.interval
    assert 0 <= lo <= hi


def test_carleson_single_cube_hand_value():
    system = build_system(from_points([[0.5]]), DyadicParams(delta=1 / 12, mode="generic"), 0)
    a = np.zeros(len(system.cubes))
    a[0] = 10.0
    # sup_f 10 <f>_u^2 / ||f||^2 = 10 / u = 2 and 10 / u(Q) = 2
    assert carleson_embedding(system, [5.0], a) == pytest.approx((2.0, 2.0), rel=1e-12)


@given(st.integers(0, 2 ** 32))
def test_carleson_sandwich(seed):
    rng = np.random.default_rng(seed)
    system = build_system(grid1d(32), DyadicParams(), seed)
    u = np.exp(rng.standard_normal(32))
    a = rng.random(len(system.cubes)) * (rng.random(len(system.cubes)) < 0.5)
    embed, carleson = carleson_embedding(system, u, a)
    assert carleson <= embed * (1 + 1e-10) or not np.any(a)
    assert embed <= 4 * carleson * (1 + 1e-10)


def test_carleson_rejects_bad_input():
    system = build_system(grid1d(4), DyadicParams(), 0)
    with pytest.raises(ValueError):
        carleson_embedding(system, np.ones(4), -np.ones(len(system.cubes)))
    a = np.zeros(len(system.cubes))
    a[system.cube_at(0, 2)] = 1.0
    with pytest.raises(ValueError):
        carleson_embedding(system, [0.0, 1.0, 1.0, 1.0], a)


@given(st.integers(0, 2 ** 32))
def test_duality_and_scaling(seed):
    rng = np.random.default_rng(seed)
    space = grid1d(16)
    system = build_system(space, DyadicParams(), seed)
    m = assemble(space, Kernel("hilbert1d"), validate=False)
    u, v = rng.random(16), rng.random(16)
    tf, td, _ = t_const(system, m, u, v)
    tf2, td2, _ = t_const(system, m.transpose(), v, u)
    assert (tf, td) == pytest.approx((td2, tf2), rel=1e-12)
    pf, pd, _ = pivotal_constant(system, u, v, PARAMS)
    pf2, pd2, _ = pivotal_constant(system, v, u, PARAMS)
    assert (pf, pd) == pytest.approx((pd2, pf2), rel=1e-12)
    # every functional scales like sqrt(a b) under (u, v) -> (a u, b v)
    a, b = 4.0, 0.25
    tfs, _, _ = t_const(system, m, a * u, b * v)
    pfs, _, _ = pivotal_constant(system, a * u, b * v, PARAMS)
    afs, _, _ = a2_constant(system, a * u, b * v, PARAMS)
    af, _, _ = a2_constant(system, u, v, PARAMS)
    assert tfs == pytest.approx(tf, rel=1e-12)
    assert pfs == pytest.approx(pf, rel=1e-12)
    assert afs == pytest.approx(af, rel=1e-12)
    assert operator_norm(m, a * u, b * v) == pytest.approx(operator_norm(m, u, v), rel=1e-10)


def test_necessity_on_random_weights(rng):
    space = grid1d(64)
    system = build_system(space, DyadicParams(), 3)
    m = assemble(space, Kernel("hilbert1d"))
    u, v = rng.random(64), rng.random(64)
    tf, td, _ = t_const(system, m, u, v)
    assert max(tf, td) <= operator_norm(m, u, v) * (1 + 1e-12)


def test_diagnostic_ratios_need_admissible_triples():
    system = build_system(from_points([[0.5]]), DyadicParams(delta=1 / 12, mode="generic"), 0)
    m = assemble(system.space, Kernel("zero"))
    with pytest.raises(ValueError):
        offsupport_ratio(system, m, [1.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        decay_ratio(system, [1.0], PARAMS)


def test_diagnostic_ratios_are_finite_on_a_line(rng):
    space = grid1d(64)
    system = build_system(space, DyadicParams(), 1)
    m = assemble(space, Kernel("hilbert1d"))
    u, v = rng.random(64), rng.random(64)
    assert 0 < offsupport_ratio(system, m, u, v, 1.0) < math.inf
    assert 0 < decay_ratio(system, u, PARAMS) < math.inf


def test_compute_constants_flags(two_point):
    space, m, u, v = two_point
    system = build_system(space, DyadicParams(), 0)
    rep = compute_constants(system, m, u, v, PARAMS)
    assert rep.flags["common_atom"]
    assert rep.norm == pytest.approx(12.0)
    assert rep.ratio == pytest.approx(12.0 / (rep.a2_max + rep.testing_max + rep.pivotal_max))
    rep = compute_constants(system, m, [1.0, 0.0], [0.0, 1.0], PARAMS)
    assert not rep.flags["common_atom"]
