import numpy as np
import pytest

from klreg.bregman import SubgradientError, bregman, symmetric_bregman
from klreg.functionals import (boltzmann_shannon, kl_fidelity, kl_penalty, quadratic_penalty)
from klreg.grid import GridMismatchError, make_uniform_grid


class _Conjugate:
    """View of ``F*`` with the interface the Bregman helpers use."""

    def __init__(self, F):
        self.F, self.grid = F, F.grid

    def __call__(self, z):
        return self.F.conj(z)

    def subgrad(self, z):
        return self.F.conj_subgrad(z)


def _inner(g, a, b):
    return float(np.dot(g.weights, np.asarray(a) * np.asarray(b)))


@pytest.fixture
def g():
    return make_uniform_grid(0, 1, 16)


def test_zero_on_diagonal(g, rng):
    R = kl_penalty(g.function(1.0))
    v = rng.uniform(0.2, 2, 16)
    assert bregman(R, v, v, R.subgrad(v)) == 0.0
    assert symmetric_bregman(R, v, v, R.subgrad(v), R.subgrad(v)) == 0.0


def test_quadratic_bregman(g, rng):
    R = quadratic_penalty(g)
    u, v = rng.standard_normal(16), rng.standard_normal(16)
    half = 0.5 * _inner(g, u - v, u - v)
    assert bregman(R, u, v, v) == pytest.approx(half, rel=1e-12)
    assert symmetric_bregman(R, u, v, u, v) == pytest.approx(2 * half, rel=1e-12)


def test_boltzmann_shannon_matches_kl(g):
    B = boltzmann_shannon(g)
    v = np.full(16, np.e)
    d = bregman(B, np.ones(16), v, np.log(v) + 1.0)
    assert d == pytest.approx(np.e - 2, abs=1e-12)
    assert d == pytest.approx(kl_fidelity(g.function(1.0))(v), abs=1e-12)


def test_infinite_value_propagates(g):
    R = kl_penalty(g.function(1.0))
    u = -np.ones(16)
    assert bregman(R, u, np.ones(16), np.zeros(16)) == np.inf


def test_grid_mismatch(g):
    R = quadratic_penalty(g)
    other = make_uniform_grid(0, 1, 8)
    with pytest.raises(GridMismatchError):
        bregman(R, other.function(1.0), np.ones(16), np.ones(16))


def test_debug_certification(g, rng):
    R = kl_penalty(g.function(1.0))
    v = rng.uniform(0.5, 2, 16)
    assert bregman(R, v + 0.1, v, R.subgrad(v), debug=True) >= 0
    with pytest.raises(SubgradientError):
        bregman(R, v + 0.1, v, R.subgrad(v) + 1.0, debug=True)


@pytest.mark.parametrize("make", [
    lambda g: kl_penalty(g.function(lambda t: 1 + t)),
    lambda g: quadratic_penalty(g),
    lambda g: boltzmann_shannon(g),
    lambda g: kl_fidelity(g.function(lambda t: 1 + t)),
])
def test_nonnegative_and_three_point(g, make):
    F = make(g)
    rng = np.random.default_rng(3)
    for _ in range(50):
        u, v, w = (rng.uniform(0.1, 3.0, 16) for _ in range(3))
        xv, xw = F.subgrad(v), F.subgrad(w)
        assert bregman(F, u, v, xv) >= -1e-10
        lhs = bregman(F, u, w, xw)
        rhs = bregman(F, u, v, xv) + bregman(F, v, w, xw) + _inner(g, xw - xv, v - u)
        assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)))
        xu = F.subgrad(u)
        s = symmetric_bregman(F, u, v, xu, xv)
        assert s == pytest.approx(bregman(F, u, v, xv) + bregman(F, v, u, xu),
                                  abs=1e-9 * (1 + abs(s)))


def test_symmetric_kl_conjugate_formula(g, rng):
    f = g.function(lambda t: 1 + 0.5 * np.cos(2 * np.pi * t))
    H = kl_fidelity(f)
    Hs = _Conjugate(H)
    alpha = 0.05
    for _ in range(20):
        pa, pd = rng.uniform(-2, 2, 16), rng.uniform(-2, 2, 16)
        a, b = -alpha * pa, -alpha * pd
        s = symmetric_bregman(Hs, a, b, Hs.subgrad(a), Hs.subgrad(b))
        closed = _inner(g, f.values, (alpha * pa - alpha * pd) ** 2
                         / ((1 + alpha * pa) * (1 + alpha * pd)))
        assert s == pytest.approx(closed, rel=1e-9, abs=1e-15)

