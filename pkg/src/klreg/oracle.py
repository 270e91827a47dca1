"""Brute-force reference computations.

Every closed form in :mod:`klreg.functionals` is checked against these
routines, which only evaluate the scalar integrand itself: a dense scan of
the domain followed by a golden-section refinement.  Integral functionals
act pointwise on a grid, so scalar checks are enough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .grid import Grid, GridFunction, inner_product
from . import functionals as fn

__all__ = [
    "conjugate_oracle",
    "prox_oracle",
    "subgradient_oracle",
    "finite_difference_derivatives",
    "OracleCase",
    "catalog_entries",
    "run_catalog_oracles",
]


def _vectorized(phi):
    def call(x):
        x = np.asarray(x, dtype=float)
        try:
            y = np.asarray(phi(x), dtype=float)
            if y.shape == x.shape:
                return y
        except (TypeError, ValueError):
            pass
        return np.array([float(phi(float(t))) for t in x.ravel()]).reshape(x.shape)
    return call


def _scan_grid(lo, hi, n):
    if lo >= 0 and hi / max(lo, 1e-300) > 1e3:
        pts = np.geomspace(max(lo, 1e-12), hi, n)
        return np.concatenate([[lo], pts]) if lo < pts[0] else pts
    return np.linspace(lo, hi, n)


def _maximize(obj, lo, hi, grid_n, open_ends):
    """Maximize a scalar function on ``[lo, hi]`` by scan plus refinement."""
    f = _vectorized(obj)
    x = _scan_grid(lo, hi, grid_n)
    with np.errstate(all="ignore"):
        y = f(x)
    y = np.where(np.isnan(y), -np.inf, y)
    k = int(np.argmax(y))
    if not np.isfinite(y[k]):
        return -np.inf, np.nan
    last = x.size - 1
    if (k == last and open_ends[1]) or (k == 0 and open_ends[0]):
        return np.inf, x[k]
    best_x, best = x[k], y[k]
    neg = lambda t: -float(f(np.array([t]))[0])
    if 0 < k < last and y[k - 1] < y[k] and y[k + 1] < y[k]:
        res = minimize_scalar(neg, bracket=(x[k - 1], x[k], x[k + 1]), method="golden",
                              tol=1e-12)
        cand = [(res.x, -res.fun)]
    else:
        a = x[max(k - 1, 0)]
        b = x[min(k + 1, last)]
        res = minimize_scalar(neg, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-14 * (1 + abs(b))})
        cand = [(res.x, -res.fun)]
    for cx, cy in cand:
        if lo <= cx <= hi and np.isfinite(cy) and cy > best:
            best_x, best = cx, cy
    return float(best), float(best_x)


def conjugate_oracle(phi, tau_star: float, domain, grid_n: int = 20001,
                     open_ends=(True, True)) -> float:
    """Brute-force Fenchel conjugate ``sup_tau tau_star*tau - phi(tau)``.

    Parameters
    ----------
    phi : callable
        Scalar convex function (``+inf`` outside its domain is allowed).
    tau_star : float
    domain : (float, float)
        Finite search window.
    grid_n : int
        Number of scan points, at least 1000.
    open_ends : (bool, bool)
        Whether each end of the window is artificial.  A maximum found at
        an artificial end means the supremum was not bracketed and
        ``+inf`` is returned.

    Examples
    --------
    >>> round(conjugate_oracle(lambda t: 0.5 * t ** 2, 3.0, (-10, 10)), 10)
    4.5
    """
    if grid_n < 1000:
        raise ValueError("grid_n must be at least 1000")
    lo, hi = map(float, domain)
    f = _vectorized(phi)
    val, _ = _maximize(lambda t: tau_star * np.asarray(t) - f(t), lo, hi, grid_n, open_ends)
    return val


def prox_oracle(phi, z: float, tau: float, domain, grid_n: int = 20001) -> float:
    """Brute-force ``argmin_x 1/2 (x - z)^2 + tau phi(x)`` on a window."""
    if grid_n < 1000:
        raise ValueError("grid_n must be at least 1000")
    lo, hi = map(float, domain)
    f = _vectorized(phi)
    _, x = _maximize(lambda t: -(0.5 * (np.asarray(t) - z) ** 2 + tau * f(t)), lo, hi,
                     grid_n, (False, False))
    return x


def subgradient_oracle(F, v, xi, num_probes: int = 100, seed: int = 0):
    """Probe the subgradient inequality ``F(u) >= F(v) + <xi, u - v>``.

    Half of the probes are small perturbations of ``v`` at several scales,
    the rest are global draws (random positive rescalings and shifts).

    Returns
    -------
    passed : bool
    worst_margin : float
        Smallest ``F(u) - F(v) - <xi, u - v>`` over finite probes.
    """
    grid = F.grid
    v = v if isinstance(v, GridFunction) else GridFunction(grid, v)
    xi = xi if isinstance(xi, GridFunction) else GridFunction(grid, xi)
    Fv = F(v)
    if not np.isfinite(Fv):
        raise ValueError("F(v) must be finite")
    rng = np.random.default_rng(seed)
    vv = v.values
    scale = 1.0 + np.abs(vv)
    worst = np.inf
    for k in range(num_probes):
        if k % 2 == 0:
            eps = (1e-3, 1e-2, 1e-1)[(k // 2) % 3]
            u = vv + eps * scale * rng.standard_normal(vv.size)
        elif k % 4 == 1:
            u = vv * np.exp(rng.standard_normal(vv.size))
        else:
            u = vv + rng.standard_normal(vv.size)
        Fu = F(u)
        if not np.isfinite(Fu):
            continue
        margin = Fu - Fv - inner_product(xi, GridFunction(grid, u - vv))
        worst = min(worst, margin)
    return bool(worst >= -1e-8 * (1.0 + abs(Fv))), float(worst)


def finite_difference_derivatives(phi, t0: float, h: float = 1e-3, return_error: bool = False):
    """First three derivatives by central differences with Richardson extrapolation.

    The first two derivatives use steps ``h`` and ``h/2``; the third uses
    ``2h`` and ``h`` because its stencil divides roundoff by ``h^3``.  All
    nodes lie in ``[t0 - 4h, t0 + 4h]``.  With ``return_error`` the
    difference between the extrapolated and the plain fine-step estimate
    is returned as an accuracy indicator.

    Examples
    --------
    >>> d = finite_difference_derivatives(lambda t: t ** 3, 1.0)
    >>> np.allclose(d, (3, 6, 6), atol=1e-6)
    True
    """
    f = lambda t: float(phi(t))
    vals = [f(t0 + k * h / 2) for k in range(-8, 9)]
    if not np.all(np.isfinite(vals)):
        raise ValueError("phi is not finite on the stencil")

    def stencils(hh):
        g = lambda k: f(t0 + k * hh)
        d1 = (g(1) - g(-1)) / (2 * hh)
        d2 = (g(1) - 2 * g(0) + g(-1)) / hh ** 2
        d3 = (g(2) - 2 * g(1) + 2 * g(-1) - g(-2)) / (2 * hh ** 3)
        return np.array([d1, d2, d3])

    coarse, fine = stencils(h), stencils(h / 2)
    coarse[2], fine[2] = stencils(2 * h)[2], coarse[2]
    rich = (4 * fine - coarse) / 3
    if return_error:
        return tuple(rich), float(np.max(np.abs(rich - fine)))
    return tuple(rich)


# --------------------------------------------------------------------------
# catalog-wide comparison
# --------------------------------------------------------------------------


@dataclass
class OracleCase:
    """Outcome of the oracle comparison for one catalog entry."""

    entry: str
    cases: int
    conj_error: float
    prox_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.conj_error <= self.tol and self.prox_error <= self.tol


def _unit_grid() -> Grid:
    return Grid(np.array([0.5]), np.array([1.0]), "scalar")


def catalog_entries():
    """Scalar sampling recipes for every catalog functional.

    Each recipe maps a random generator to ``(F, phi, c)`` plus samplers for
    conjugate arguments and prox inputs, and the search window.
    """
    g = _unit_grid()

    def gf(c):
        return GridFunction(g, [c])

    kl_spec = fn.kl_integrand_spec()
    return {
        "kl": dict(
            make=lambda c: fn.make_fidelity("kl", gf(c)),
            param=lambda r: r.uniform(0.2, 3.0),
            phi=lambda c: (lambda t: c * np.log(c / t) - c + t),
            dual=lambda r, c: r.uniform(-3.0, 0.9),
            window=lambda c: (1e-8, 1e3), ends=(True, True)),
        "quadratic": dict(
            make=lambda c: fn.make_fidelity("quadratic", gf(c)),
            param=lambda r: r.uniform(-2.0, 2.0),
            phi=lambda c: (lambda t: 0.5 * (t - c) ** 2),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (-50.0, 50.0), ends=(True, True)),
        "power_norm:q=2": dict(
            make=lambda c: fn.make_fidelity("power_norm:q=2", gf(c)),
            param=lambda r: r.uniform(-2.0, 2.0),
            phi=lambda c: (lambda t: 0.5 * np.abs(t - c) ** 2),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (-50.0, 50.0), ends=(True, True)),
        "power_norm:q=3": dict(
            make=lambda c: fn.make_fidelity("power_norm:q=3", gf(c)),
            param=lambda r: r.uniform(-2.0, 2.0),
            phi=lambda c: (lambda t: np.abs(t - c) ** 3 / 3.0),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (-50.0, 50.0), ends=(True, True)),
        "itakura_saito": dict(
            make=lambda c: fn.make_fidelity("itakura_saito", gf(c)),
            param=lambda r: r.uniform(0.2, 3.0),
            phi=lambda c: (lambda t: np.where(t <= 2 * c - 1e-12, np.log(t / c) + c / t - 1.0,
                                              np.inf)),
            dual=lambda r, c: r.uniform(-5.0 / c, 0.5 / c),
            window=lambda c: (1e-12, 2 * c - 1e-12), ends=(True, False)),
        "general:kl": dict(
            make=lambda c: fn.general_integrand_fidelity(kl_spec, gf(c)),
            param=lambda r: r.uniform(0.2, 3.0),
            phi=lambda c: (lambda t: c * np.log(c / t) - c + t),
            dual=lambda r, c: r.uniform(-3.0, 0.9),
            window=lambda c: (1e-8, 1e3), ends=(True, True)),
        "kl_penalty": dict(
            make=lambda c: fn.make_penalty("kl_penalty", g, gf(c)),
            param=lambda r: r.uniform(0.2, 3.0),
            phi=lambda c: (lambda t: np.where(t > 0, t * np.log(np.maximum(t, 1e-300) / c), 0.0)
                           - t + c),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (0.0, 1e3), ends=(False, True)),
        "nonneg+kl_penalty": dict(
            make=lambda c: fn.make_penalty("nonneg+kl_penalty", g, gf(c)),
            param=lambda r: r.uniform(0.2, 3.0),
            phi=lambda c: (lambda t: np.where(t > 0, t * np.log(np.maximum(t, 1e-300) / c), 0.0)
                           - t + c),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (0.0, 1e3), ends=(False, True)),
        "quadratic_penalty": dict(
            make=lambda c: fn.make_penalty("quadratic_penalty", g),
            param=lambda r: 0.0,
            phi=lambda c: (lambda t: 0.5 * t ** 2),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (-50.0, 50.0), ends=(True, True)),
        "nonneg+quadratic_penalty": dict(
            make=lambda c: fn.make_penalty("nonneg+quadratic_penalty", g),
            param=lambda r: 0.0,
            phi=lambda c: (lambda t: 0.5 * t ** 2),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (0.0, 50.0), ends=(False, True)),
        "nonneg": dict(
            make=lambda c: fn.make_penalty("nonneg", g),
            param=lambda r: 0.0,
            phi=lambda c: (lambda t: np.zeros_like(np.asarray(t, dtype=float))),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (0.0, 1e3), ends=(False, True)),
        "boltzmann_shannon": dict(
            make=lambda c: fn.boltzmann_shannon(g),
            param=lambda r: 0.0,
            phi=lambda c: (lambda t: np.where(t > 0, t * np.log(np.maximum(t, 1e-300)), 0.0)),
            dual=lambda r, c: r.uniform(-3.0, 3.0),
            window=lambda c: (0.0, 1e3), ends=(False, True)),
    }


def _agree(a, b):
    if np.isinf(a) or np.isinf(b):
        return 0.0 if a == b else np.inf
    return abs(a - b) / (1.0 + abs(b))


def run_catalog_oracles(cases: int = 100, seed: int = 0, tol: float = 1e-6,
                        entries=None) -> list[OracleCase]:
    """Compare closed-form conjugates and prox maps with the oracles.

    For each entry, ``cases`` random scalar instances (parameter, conjugate
    argument, prox input and step) are drawn from a generator seeded by
    ``seed`` and the entry's position, so the suite is deterministic.
    Errors are relative, ``|a - b| / (1 + |b|)``.
    """
    recipes = catalog_entries()
    names = list(recipes) if entries is None else list(entries)
    out = []
    for idx, name in enumerate(names):
        rec = recipes[name]
        rng = np.random.default_rng([seed, idx])
        conj_err = prox_err = 0.0
        for _ in range(cases):
            c = float(rec["param"](rng))
            F = rec["make"](c)
            phi = rec["phi"](c)
            lo, hi = rec["window"](c)
            s = float(rec["dual"](rng, c))
            want = conjugate_oracle(phi, s, (lo, hi), open_ends=rec["ends"])
            got = F.conj_eval(np.array([s]))
            conj_err = max(conj_err, _agree(got, want))
            z = float(rng.uniform(-3.0, 3.0))
            step = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
            want_x = prox_oracle(phi, z, step, (lo, hi))
            got_x = float(F.prox(np.array([z]), step)[0])
            prox_err = max(prox_err, _agree(got_x, want_x))
        out.append(OracleCase(name, cases, conj_err, prox_err, tol))
    return out
