import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hartlab import Space, from_descriptor, from_points, grid1d, grid2d, tree


def test_dist_axioms():
    s = grid1d(4)
    assert s.dist(2, 2) == 0.0
    assert s.dist(0, 2) == s.dist(2, 0) == pytest.approx(0.5)
    with pytest.raises(IndexError):
        s.dist(0, 4)


def test_euclidean_quarter_points():
    s = grid1d(2)
    assert s.coords[:, 0].tolist() == [0.25, 0.75]
    assert s.dist(0, 1) == 0.5


def _tree_path_distance(i, j, depth):
    # walk both leaves up the tree until the paths meet
    a, b, up = i, j, 0
    while a != b:
        a, b, up = a // 2, b // 2, up + 1
    return 0.0 if up == 0 else 2.0 ** -(depth - up)


def test_tree_metric_matches_path_oracle():
    depth = 5
    s = tree(depth)
    for i in range(2 ** depth):
        for j in range(2 ** depth):
            assert s.dist(i, j) == _tree_path_distance(i, j, depth)
    assert s.quasi_triangle_violation() <= 1.0


def test_ball_measure_examples():
    s = grid1d(256)
    assert s.ball_measure(128, 0.0) == 0.0
    # oracle: count grid points with |y - x| < 0.25 directly
    x = s.coords[:, 0]
    count = int(np.sum(np.abs(x - x[128]) < 0.25))
    assert count == 127
    assert s.ball_measure(128, 0.25) == pytest.approx(127 / 256, abs=1e-15)
    assert s.ball_measure(7, 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        s.ball_measure(0, -0.1)


def test_ball_measure_with_weight():
    s = grid1d(8)
    w = np.arange(8.0)
    assert s.ball_measure(3, 0.2, w) == pytest.approx(2 + 3 + 4)


def test_volume_interior_and_diagonal():
    s = grid1d(256, domain=(0.0, 2.0))
    i, j = 128, 192
    assert s.dist(i, j) == pytest.approx(0.5)
    x = s.coords[:, 0]
    oracle = s.mu[np.abs(x - x[i]) < s.dist(i, j)].sum()
    assert s.volume_V(i, j) == pytest.approx(oracle, abs=1e-15)
    assert s.volume_V(i, j) == pytest.approx(1.0, abs=0.01)
    with pytest.raises(ValueError):
        s.volume_V(3, 3)


def test_volume_matrix_matches_pointwise():
    s = tree(4)
    vol = s.volume_matrix()
    for i in range(16):
        for j in range(16):
            if i != j:
                assert vol[i, j] == s.volume_V(i, j)
    assert np.all(np.isnan(np.diag(vol)))


def test_bessel_volume_against_double_resolution():
    def volume(n):
        s = grid1d(n, domain=(0.0, 4.0), base_measure="bessel", lam=1.0)
        x = s.coords[:, 0]
        i, j = np.argmin(np.abs(x - 1.0)), np.argmin(np.abs(x - 2.0))
        direct = float(np.sum(x[np.abs(x - x[i]) < abs(x[j] - x[i])] ** 2 * (4.0 / n)))
        assert s.volume_V(i, j) == pytest.approx(direct, rel=1e-12)
        return direct

    coarse, fine = volume(400), volume(800)
    assert coarse == pytest.approx(fine, rel=0.01)
    # the ball B(1, 1) meets (0, 2): integral of t^2 is 8/3
    assert fine == pytest.approx(8 / 3, rel=0.01)


def test_doubling_1d_interior():
    s = grid1d(512)
    x = s.coords[:, 0]
    interior = np.flatnonzero((x > 0.25) & (x < 0.75))
    radii = s.shell_radii(2 * s.resolution, 1 / 8)
    c_mu, n_est = s.estimate_doubling(radii=radii, centers=interior)
    assert abs(c_mu - 2) <= 0.1
    assert n_est == pytest.approx(1.0, abs=0.1)


def test_doubling_2d_dimension():
    s = grid2d(24)
    _, n_est = s.estimate_doubling()
    assert n_est == pytest.approx(2.0, abs=0.35)


def test_doubling_degenerate_cases():
    assert from_points([[0.3]]).estimate_doubling() == (1.0, 0.0)
    with pytest.raises(ValueError):
        grid1d(2).estimate_doubling()


def test_quasi_triangle_violation_detected():
    # squared distances on a line satisfy the quasi-triangle inequality with A0 = 2
    x = np.linspace(0, 1, 9)
    d = (x[:, None] - x[None, :]) ** 2
    Space(d, np.ones(9), a0=2.0).validate()
    with pytest.raises(ValueError):
        Space(d, np.ones(9), a0=1.0).validate()


@pytest.mark.parametrize("bad", [
    dict(dist=[[0, 1], [2, 0]], mu=[1, 1]),
    dict(dist=[[0, 0], [0, 0]], mu=[1, 1]),
    dict(dist=[[0, 1], [1, 0]], mu=[1, 0]),
    dict(dist=[[1, 1], [1, 0]], mu=[1, 1]),
])
def test_space_rejects_invalid_input(bad):
    with pytest.raises(ValueError):
        Space(bad["dist"], bad["mu"])


def test_descriptor_round_trip():
    s = from_descriptor({"kind": "grid2d", "n_points": 16})
    assert s.n_points == 16 and s.n_dim == 2.0
    s = from_descriptor({"kind": "tree", "n_points": 32})
    assert s.kind == "tree"
    with pytest.raises(ValueError):
        from_descriptor({"kind": "tree", "n_points": 30})
    with pytest.raises(ValueError):
        from_descriptor({"kind": "grid2d", "n_points": 15})


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=30, unique=True),
       st.integers(0, 29), st.floats(0, 1.5), st.floats(0, 1.5))
def test_ball_measure_brute_force_and_monotone(ticks, x, r1, r2):
    xs = np.array(ticks) / 1000
    s = from_points(xs)
    x = x % s.n_points
    d = np.abs(xs - xs[x])
    for r in (r1, r2):
        assert s.ball_measure(x, r) == pytest.approx(s.mu[d < r].sum(), abs=1e-15)
    lo, hi = sorted((r1, r2))
    assert s.ball_measure(x, lo) <= s.ball_measure(x, hi)


@given(st.integers(2, 7), st.integers(0, 200))
def test_shell_radii_avoid_distance_set(depth, seed):
    s = tree(depth)
    radii = s.shell_radii(0, s.diameter)
    shells = np.unique(s.dist_matrix)
    assert not np.any(np.isin(radii, shells))
    assert math.isfinite(s.estimate_doubling(radii=radii[radii > 0])[0]) if radii.size else True
