import numpy as np
import pytest

from klreg.grid import GridFunction, GridMismatchError, inner_product, make_uniform_grid
from klreg.operators import (DiscreteOperator, SingularSystemError, adjoint_apply, apply,
                             fredholm_from_kernel, least_squares_preimage, operator_norm,
                             range_decomposition)


@pytest.fixture
def grids():
    return make_uniform_grid(0, 1, 200), make_uniform_grid(0, 1, 200, "Gamma")


@pytest.fixture
def blur():
    dom = make_uniform_grid(0, 1, 64)
    cod = make_uniform_grid(0, 1, 48, "Gamma")
    return fredholm_from_kernel("gaussian", dom, cod, amp=1.0, width=0.02, floor=0.1)


def test_constant_kernel_integrates(grids):
    A = fredholm_from_kernel("constant", *grids)
    out = apply(A, grids[0].function(1.0))
    np.testing.assert_allclose(out.values, 1.0, rtol=1e-12)
    out = apply(A, grids[0].function(lambda s: s))
    np.testing.assert_allclose(out.values, 0.5, atol=1e-4)
    back = adjoint_apply(A, grids[1].function(1.0))
    np.testing.assert_allclose(back.values, 1.0, rtol=1e-12)


def test_bilinear_kernel(grids):
    A = fredholm_from_kernel("bilinear", *grids, c=1.0)
    out = apply(A, grids[0].function(1.0))
    np.testing.assert_allclose(out.values, 1 + grids[1].nodes / 2, atol=1e-4)


def test_callable_kernel_and_nonfinite():
    dom = make_uniform_grid(0, 1, 10)
    A = fredholm_from_kernel(lambda t, s: 2.0 + 0 * t * s, dom, dom)
    np.testing.assert_allclose(A.matvec(np.ones(10)), 2.0)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        fredholm_from_kernel(lambda t, s: 1.0 / (t - s), dom, dom)


def test_gaussian_floor_certificate(blur):
    # the Gaussian tail exp(-48.6) is below the resolution of 0.1 in double precision
    assert blur.kernel_lower >= 0.1
    assert np.exp(-(blur.domain_grid.nodes[-1] - blur.codomain_grid.nodes[0]) ** 2 / 0.02) < \
        np.spacing(0.1)
    assert blur.shape == (48, 64)


def test_linearity_and_zero(blur, rng):
    u1, u2 = rng.standard_normal(64), rng.standard_normal(64)
    np.testing.assert_allclose(blur.matvec(u1 + u2), blur.matvec(u1) + blur.matvec(u2),
                               atol=1e-12)
    assert np.all(blur.matvec(np.zeros(64)) == 0)
    assert np.all(blur.rmatvec(np.zeros(48)) == 0)


def test_adjoint_consistency(blur, rng):
    for _ in range(100):
        u = GridFunction(blur.domain_grid, rng.standard_normal(64))
        p = GridFunction(blur.codomain_grid, rng.standard_normal(48))
        lhs = inner_product(apply(blur, u), p)
        rhs = inner_product(u, adjoint_apply(blur, p))
        assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + abs(rhs) + 1e-300) + 1e-15


def test_apply_grid_mismatch(blur):
    with pytest.raises(GridMismatchError):
        apply(blur, make_uniform_grid(0, 1, 10).function(1.0))


def test_singular_values_decay_and_conditioning():
    g = make_uniform_grid(0, 1, 100)
    A = fredholm_from_kernel("gaussian", g, g)
    s = A.singular_values
    assert np.all(np.diff(s) <= 1e-15 * s[0])
    assert s[0] / s[-1] > 1e6 / 10


def test_operator_norm_power_iteration(blur):
    assert operator_norm(blur) == pytest.approx(blur.singular_values[0], rel=1e-8)
    assert blur.norm == pytest.approx(blur.singular_values[0], rel=1e-8)


def test_preimage_consistent_full_rank(rng):
    g = make_uniform_grid(0, 1, 6)
    A = fredholm_from_kernel("exponential", g, g, amp=1.0, scale=0.3, floor=0.0)
    v0 = rng.standard_normal(6)
    v, res = least_squares_preimage(A, A.matvec(v0), 0.0)
    assert res <= 1e-8
    np.testing.assert_allclose(A.matvec(v.values), A.matvec(v0), atol=1e-10)


def test_preimage_orthogonal_target():
    g = make_uniform_grid(0, 1, 20)
    A = fredholm_from_kernel("constant", g, g)
    target = np.cos(2 * np.pi * g.nodes)       # integrates to zero: orthogonal to constants
    _, outside = range_decomposition(A, target)
    v, res = least_squares_preimage(A, outside, 1e-10 * A.norm ** 2)
    assert res == pytest.approx(1.0, abs=0.05)


def test_preimage_zero_and_singular():
    g = make_uniform_grid(0, 1, 20)
    A = fredholm_from_kernel("constant", g, g)
    v, res = least_squares_preimage(A, np.zeros(20), 1e-3)
    assert res == 0 and np.all(v.values == 0)
    with pytest.raises(SingularSystemError):
        least_squares_preimage(A, np.ones(20), 0.0)
    v, res = least_squares_preimage(A, np.ones(20), 1e-10 * A.norm ** 2)
    assert res <= 1e-12
    np.testing.assert_allclose(A.matvec(v.values), 1.0, rtol=1e-10)


def test_serialization_roundtrip(blur):
    B = DiscreteOperator.from_dict(blur.to_dict(), blur.matrix_bytes())
    assert np.array_equal(B.matrix, blur.matrix)
    assert B.domain_grid == blur.domain_grid and B.codomain_grid == blur.codomain_grid
