import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from klreg.grid import (Grid, GridFunction, GridMismatchError, inner_product, make_uniform_grid,
                        norm)


def test_midpoint_nodes_and_weights():
    g = make_uniform_grid(0, 1, 4)
    np.testing.assert_allclose(g.weights, 0.25)
    np.testing.assert_allclose(g.nodes, [0.125, 0.375, 0.625, 0.875])


def test_two_cells_on_0_2():
    g = make_uniform_grid(0, 2, 2)
    np.testing.assert_allclose(g.weights, 1.0)


def test_weights_partition_unity():
    g = make_uniform_grid(0, 1, 1000)
    assert abs(g.weights.sum() - 1.0) <= 1e-12


@pytest.mark.parametrize("a,b,n", [(0, 1, 1), (0, np.inf, 10), (np.nan, 1, 10), (1, 0, 5)])
def test_make_uniform_grid_rejects(a, b, n):
    with pytest.raises(ValueError):
        make_uniform_grid(a, b, n)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(np.array([0.1, 0.2]), np.array([0.5, -0.5]))
    with pytest.raises(ValueError):
        Grid(np.array([0.2, 0.1]), np.array([0.5, 0.5]))


def test_gridfunction_checks(unit_grid):
    with pytest.raises(ValueError):
        GridFunction(unit_grid, np.ones(3))
    with pytest.raises(ValueError):
        GridFunction(unit_grid, np.full(64, np.nan))


def test_inner_product_examples():
    g = make_uniform_grid(0, 1, 200)
    one = g.function(1.0)
    assert inner_product(one, one) == pytest.approx(1.0)
    assert inner_product(one, g.function(0.0)) == 0.0
    t = g.function(lambda s: s)
    assert abs(inner_product(t, t) - 1 / 3) <= 1e-4


def test_norm_examples():
    g = make_uniform_grid(0, 1, 200)
    one = g.function(1.0)
    assert norm(one, 1) == pytest.approx(1.0)
    assert norm(one, np.inf) == pytest.approx(1.0)
    assert abs(norm(g.function(lambda s: s), 2) - 1 / np.sqrt(3)) <= 1e-3
    with pytest.raises(ValueError):
        norm(one, 3)


def test_grid_mismatch():
    a = make_uniform_grid(0, 1, 8)
    b = make_uniform_grid(0, 1, 9)
    with pytest.raises(GridMismatchError):
        inner_product(a.function(1.0), b.function(1.0))


def test_grid_roundtrip():
    g = make_uniform_grid(-1, 3, 17, "Gamma")
    assert Grid.from_json(g.to_json()) == g


vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=12, max_size=12)


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec, st.floats(-10, 10))
def test_inner_product_properties(x, y, z, lam):
    g = make_uniform_grid(0, 2, 12)
    u, v, w = (GridFunction(g, np.array(a)) for a in (x, y, z))
    scale = 1.0 + norm(u) * norm(v) + norm(w) * norm(v)
    assert abs(inner_product(u, v)) <= norm(u, 2) * norm(v, 2) * (1 + 1e-12) + 1e-12
    assert inner_product(u, v) == pytest.approx(inner_product(v, u), abs=1e-12 * scale)
    lhs = inner_product(u * lam + w, v)
    rhs = lam * inner_product(u, v) + inner_product(w, v)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lam)) * scale * 10
    assert norm(u, 1) <= g.measure * norm(u, np.inf) * (1 + 1e-12)
