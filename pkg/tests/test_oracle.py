import numpy as np
import pytest

from klreg.functionals import kl_fidelity, quadratic_penalty
from klreg.grid import make_uniform_grid
from klreg.oracle import (catalog_entries, conjugate_oracle, finite_difference_derivatives,
                          prox_oracle, run_catalog_oracles, subgradient_oracle)


def kl_phi(c):
    return lambda t: c * np.log(c / t) - c + t if t > 0 else np.inf


def test_conjugate_square():
    assert conjugate_oracle(lambda t: 0.5 * t * t, 3.0, (-10, 10)) == pytest.approx(4.5, abs=1e-8)


def test_conjugate_kl():
    val = conjugate_oracle(kl_phi(2.0), 0.5, (1e-8, 1e3))
    assert val == pytest.approx(2 * np.log(2), abs=1e-6)


def test_conjugate_kl_diverges_at_one():
    assert conjugate_oracle(kl_phi(1.0), 1.0, (1e-8, 1e3)) == np.inf


def test_conjugate_grid_size_guard():
    with pytest.raises(ValueError):
        conjugate_oracle(lambda t: t * t, 0.0, (-1, 1), grid_n=10)


def test_prox_zero_function():
    assert prox_oracle(lambda t: 0.0, 0.7, 1.0, (-5, 5)) == pytest.approx(0.7, abs=1e-8)


def test_prox_kl():
    assert prox_oracle(kl_phi(2.0), 0.0, 1.0, (1e-8, 10)) == pytest.approx(1.0, abs=1e-8)


def test_prox_indicator():
    ind = lambda t: 0.0 if t >= 0 else np.inf
    assert prox_oracle(ind, -1.0, 1.0, (0.0, 10)) == pytest.approx(0.0, abs=1e-8)


def test_subgradient_oracle():
    g = make_uniform_grid(0, 1, 16)
    R = quadratic_penalty(g)
    v = np.sin(np.arange(16.0))
    ok, worst = subgradient_oracle(R, v, v)
    assert ok and worst >= 0
    ok, _ = subgradient_oracle(R, v, 1.5 * v)
    assert not ok
    f = g.function(lambda t: 1 + t)
    ok, worst = subgradient_oracle(kl_fidelity(f), f, np.zeros(16))
    assert ok and worst >= 0


def test_finite_differences():
    d = finite_difference_derivatives(lambda t: t ** 3, 1.0, h=1e-3)
    np.testing.assert_allclose(d, (3, 6, 6), atol=1e-6)
    d = finite_difference_derivatives(lambda t: np.log(1 / t) - 1 + t, 1.0)
    np.testing.assert_allclose(d, (0, 1, -2), atol=1e-5)
    d, err = finite_difference_derivatives(lambda t: np.log(t) + 1 / t - 1, 1.0,
                                           return_error=True)
    np.testing.assert_allclose(d, (0, 1, -4), atol=1e-4)
    assert err < 1e-3


def test_catalog_suite():
    cases = run_catalog_oracles(cases=100)
    assert {c.entry for c in cases} == set(catalog_entries())
    bad = [(c.entry, c.conj_error, c.prox_error) for c in cases if not c.passed]
    assert not bad


def test_catalog_deterministic():
    a = run_catalog_oracles(cases=5, seed=3, entries=["kl", "itakura_saito"])
    b = run_catalog_oracles(cases=5, seed=3, entries=["kl", "itakura_saito"])
    assert [(c.conj_error, c.prox_error) for c in a] == [(c.conj_error, c.prox_error) for c in b]
