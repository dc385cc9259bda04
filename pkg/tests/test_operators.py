import numpy as np
import pytest
from hypothesis import given, strategies as st

from hartlab import Kernel, OperatorMatrix, apply_adjoint, apply_forward, assemble, grid1d, grid2d
from hartlab.operators import kernel_bounds


def test_hilbert_two_points():
    m = assemble(grid1d(2), Kernel("hilbert1d"))
    assert m.entries.tolist() == [[0.0, -2.0], [2.0, 0.0]]


def test_hilbert_size_constant_interior():
    space = grid1d(256)
    m = assemble(space, Kernel("hilbert1d"))
    x = space.coords[:, 0]
    interior = np.flatnonzero((x > 0.25) & (x < 0.75))
    rep = kernel_bounds(space, m.entries, 1.0, interior=interior)
    assert 1.5 <= rep["size"] <= 2.5
    # oracle over the same pairs: |1/(x-y)| * mu(B(x, |x-y|))
    vol = space.volume_matrix()
    sub = np.ix_(interior, interior)
    with np.errstate(divide="ignore"):
        direct = np.abs(1 / (x[:, None] - x[None, :]))[sub] * vol[sub]
    assert rep["size"] == pytest.approx(np.nanmax(np.where(np.isinf(direct), np.nan, direct)))


def test_power_kernel_smoothness_is_finite():
    space = grid1d(128)
    m = assemble(space, Kernel("power"))
    assert np.isfinite(m.report["smooth"]) and m.report["triples"] > 0
    assert np.isfinite(m.report["size"])
    vol = space.volume_matrix()
    i, j = 10, 77
    assert m.entries[i, j] == pytest.approx((-1) ** (i + j) / vol[i, j], rel=1e-15)
    assert np.all(np.abs(m.entries) * np.nan_to_num(vol) <= 1 + 1e-12)


def test_riesz_antisymmetric_and_dimension_check():
    space = grid2d(6)
    m = assemble(space, Kernel("riesz", d=2, component=1))
    assert np.abs(m.entries + m.entries.T).max() <= 1e-12
    with pytest.raises(ValueError):
        assemble(space, Kernel("riesz", d=3))
    with pytest.raises(ValueError):
        assemble(space, Kernel("hilbert1d"))


def test_kernel_descriptor_validation():
    with pytest.raises(ValueError):
        Kernel("bergman")
    with pytest.raises(ValueError):
        Kernel("hilbert1d", kappa=1.5)


def test_from_entries_zeroes_diagonal():
    m = OperatorMatrix.from_entries(grid1d(2), [[5.0, 2.0], [-2.0, 7.0]])
    assert np.diag(m.entries).tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        OperatorMatrix.from_entries(grid1d(2), np.zeros((3, 3)))


def test_apply_forward_examples(two_point):
    space, m, u, _ = two_point
    assert not np.any(apply_forward(m, np.zeros(2), u))
    assert apply_forward(m, [0.0, 1.0], u).tolist() == [8.0, 0.0]
    hilbert = assemble(space, Kernel("hilbert1d"))
    assert apply_forward(hilbert, [0.0, 1.0], u).tolist() == [-8.0, 0.0]


def test_adjoint_identity_64_points(rng):
    space = grid1d(64)
    m = assemble(space, Kernel("hilbert1d"))
    u, v = rng.random(64), rng.random(64)
    f, g = rng.standard_normal((2, 64))
    lhs = float((apply_forward(m, f, u) * g * v).sum())
    rhs = float((apply_adjoint(m, g, v) * f * u).sum())
    # independent double loop
    direct = sum(m.entries[i, j] * f[j] * u[j] * g[i] * v[i]
                 for i in range(64) for j in range(64))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1)
    assert lhs == pytest.approx(direct, rel=1e-12)


@given(st.integers(0, 2 ** 32), st.floats(-3, 3), st.floats(-3, 3))
def test_forward_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    m = assemble(grid1d(16), Kernel("hilbert1d"), validate=False)
    u = rng.random(16)
    f, g = rng.standard_normal((2, 16))
    lhs = apply_forward(m, a * f + b * g, u)
    rhs = a * apply_forward(m, f, u) + b * apply_forward(m, g, u)
    assert lhs == pytest.approx(rhs, abs=1e-9)
