import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hartlab import DyadicParams, build_system, from_points, grid1d, grid2d, tree
from hartlab.dyadic import (analytic_surgery_1d, bad_depth, derive_seed, good_mask, is_good,
                            sample_random_system, surgery_probability)

SHIFTED = DyadicParams()
GENERIC = DyadicParams(delta=1 / 12, mode="generic")


def test_seed_zero_is_the_standard_grid(line256, standard256):
    x = line256.coords[:, 0]
    for k in standard256.levels:
        # same partition as floor(x 2^k)
        blocks = np.floor(x * 2 ** k).astype(int)
        lab = standard256.labels[k]
        assert all(len(set(lab[blocks == b])) == 1 for b in np.unique(blocks))
        assert len(np.unique(lab)) == len(np.unique(blocks))
    assert standard256.shifts[0] == 0.0


def test_shifted_sides_and_levels(standard256):
    assert standard256.levels == list(range(0, 9))
    for c in standard256.cubes:
        assert c.side == 2.0 ** -c.level


@given(st.integers(1, 2 ** 62))
def test_shifted_properties_hold_for_any_seed(seed):
    s = build_system(grid1d(64), SHIFTED, seed)
    assert all(s.check_properties().values())


@pytest.mark.parametrize("space", [grid2d(8), tree(6), grid1d(40)], ids=["2d", "tree", "1d"])
@pytest.mark.parametrize("seed", [1, 99])
def test_generic_properties_and_nets(space, seed):
    s = build_system(space, GENERIC, seed)
    assert all(s.check_properties().values())
    assert s.check_nets()


def _net_oracle(space, centers, sep, cover):
    d = space.dist_matrix
    for a in centers:
        for b in centers:
            if a != b and d[a, b] < sep:
                return False
    return all(min(d[x, c] for c in centers) <= cover for x in range(space.n_points))


def test_generic_fine_delta_on_2d_grid():
    space = grid2d(8)
    p = DyadicParams(delta=1 / 150, mode="generic")
    s = build_system(space, p, 4)
    assert all(s.check_properties().values())
    for k in s.levels:
        centers = [s.cubes[c].center for c in s.by_level[k]]
        assert _net_oracle(space, centers, p.c0 * p.delta ** k, p.C0 * p.delta ** k)
    # the coarsest level is a single cube, the finest the singletons
    assert len(s.by_level[s.k_min]) == 1
    assert len(s.by_level[s.k_max]) == 64


def test_generic_mode_rejects_coarse_delta():
    with pytest.raises(ValueError, match="12"):
        build_system(grid1d(16), DyadicParams(delta=0.25, mode="generic"), 0)


def test_shifted_mode_needs_a_line_and_half():
    with pytest.raises(ValueError):
        build_system(grid2d(4), SHIFTED, 0)
    with pytest.raises(ValueError):
        DyadicParams(delta=1.5)


def test_single_point_space():
    s = build_system(from_points([[0.5]]), GENERIC, 3)
    for k in s.levels:
        assert len(s.by_level[k]) == 1
        assert s.cubes[s.by_level[k][0]].members.tolist() == [0]


def test_distinct_seeds_move_level4_boundaries(line256):
    def boundaries(system):
        lab = system.labels[4]
        return set(np.flatnonzero(np.diff(lab) != 0).tolist())

    a = sample_random_system(line256, SHIFTED, 17)
    b = sample_random_system(line256, SHIFTED, 18)
    assert boundaries(a) != boundaries(b)


def test_determinism(line256):
    a = build_system(line256, SHIFTED, 5)
    b = build_system(line256, SHIFTED, 5)
    assert all(np.array_equal(a.labels[k], b.labels[k]) for k in a.levels)
    g1 = build_system(tree(6), GENERIC, 5)
    g2 = build_system(tree(6), GENERIC, 5)
    assert [c.center for c in g1.cubes] == [c.center for c in g2.cubes]


def test_derive_seed_streams():
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    assert len({derive_seed(7, 1, t) for t in range(1000)}) == 1000
    assert derive_seed(7, 1) != derive_seed(7, 2)


def test_dist_to_cube(line256, standard256):
    left = standard256.cube_at(0, 1)  # [0, 0.5)
    x = line256.coords[:, 0]
    assert standard256.dist_to_cube(10, left) == 0.0
    i = int(np.argmin(np.abs(x - 0.75)))
    assert standard256.dist_to_cube(i, left) == pytest.approx(0.25, abs=1 / 256)
    # brute-force pair minimum
    right = standard256.cube_at(255, 2)
    d = line256.dist_matrix
    brute = min(d[a, b] for a in standard256.cubes[left].members
                for b in standard256.cubes[right].members)
    assert standard256.dist_between(left, right) == brute


def test_boundary_layer(line256, standard256):
    q = standard256.cube_at(70, 3)
    members = standard256.cubes[q].members
    tiny = standard256.boundary_layer(q, 0.5 / 256)
    assert set(tiny.tolist()) <= {members.min(), members.max()}
    one = standard256.boundary_layer(q, 1 / 256)
    assert set(one.tolist()) == {members.min() - 1, members.min(), members.max(), members.max() + 1}
    assert standard256.boundary_layer(standard256.roots[0], 0.3).size == 0
    wide = standard256.boundary_layer(q, 2 * standard256.C1 * standard256.cubes[q].side)
    assert set(members.tolist()) <= set(wide.tolist())
    with pytest.raises(ValueError):
        standard256.boundary_layer(q, 0.0)


def _is_good_oracle(system, cid, other, r, eps):
    q = system.cubes[cid]
    d = system.space.dist_matrix
    for c1 in other.cubes:
        if q.side > other.params.delta ** r * c1.side * (1 + 1e-12):
            continue
        thresh = q.side ** eps * c1.side ** (1 - eps)
        inside = set(c1.members.tolist())
        outside = [y for y in range(system.space.n_points) if y not in inside]
        d_in = min(d[a, b] for a in q.members for b in c1.members)
        d_out = min((d[a, b] for a in q.members for b in outside), default=math.inf)
        if d_in < thresh and d_out < thresh:
            return False
    return True


def test_goodness_hand_example(line256, standard256):
    x = line256.coords[:, 0]
    q = standard256.cube_at(int(np.argmin(np.abs(x - 0.26))), 4)
    members = x[standard256.cubes[q].members]
    assert members.min() > 0.25 and members.max() < 0.3125
    # l(Q) = 1/16, Q1 = [0, 0.5): threshold 2**-1.6 exceeds dist(Q, X - Q1) = 0.1875
    assert 2 ** -1.6 == pytest.approx(0.3299, abs=1e-4)
    assert not is_good(standard256, q, standard256, 2, 0.2)
    assert not _is_good_oracle(standard256, q, standard256, 2, 0.2)


def test_goodness_vacuous_and_centered(line256, standard256):
    leaf = standard256.cube_at(100, 8)
    assert is_good(standard256, leaf, standard256, 9, 0.2)  # nothing 9 levels coarser
    x = line256.coords[:, 0]
    q = standard256.cube_at(int(np.argmin(np.abs(x - 1 / 3))), 6)
    assert is_good(standard256, q, standard256, 2, 0.9)
    assert _is_good_oracle(standard256, q, standard256, 2, 0.9)


@given(st.integers(1, 2 ** 40), st.integers(1, 2 ** 40), st.integers(0, 5),
       st.sampled_from([0.1, 0.2, 0.5]))
def test_goodness_matches_oracle_and_depth(seed_a, seed_b, r, eps):
    space = grid1d(32)
    a, b = build_system(space, SHIFTED, seed_a), build_system(space, SHIFTED, seed_b)
    mask = good_mask(a, b, r, eps)
    assert np.array_equal(mask, bad_depth(a, b, eps) < r)
    for cid in range(0, len(a.cubes), 7):
        assert mask[cid] == _is_good_oracle(a, cid, b, r, eps)


def test_surgery_trivial_cases(line256):
    assert surgery_probability(line256, SHIFTED, 128, 0, 0.0, 10) == (0.0, 0.0)
    est, err = surgery_probability(line256, SHIFTED, 128, 2, 1.0, 200, seed=3)
    assert est == 1.0 and err == 0.0
    with pytest.raises(ValueError):
        surgery_probability(line256, SHIFTED, 128, 0, 0.1, 0)


def test_surgery_matches_lattice_value():
    space = grid1d(1000)
    assert analytic_surgery_1d(space, SHIFTED, 0, 0.1) == pytest.approx(0.2, abs=1e-15)
    est, err = surgery_probability(space, SHIFTED, 500, 0, 0.1, 4000, seed=1)
    assert abs(est - 0.2) <= 3 * err


def test_surgery_generic_mode_is_a_frequency():
    est, err = surgery_probability(tree(5), GENERIC, 3, 1, 0.5, 20, seed=2)
    assert 0.0 <= est <= 1.0 and err >= 0.0
