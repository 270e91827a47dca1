r"""Bregman distances with explicitly supplied subgradients.

.. math::

    D_F^\xi(u, v) = F(u) - F(v) - \langle \xi, u - v \rangle,
    \qquad \xi \in \partial F(v).

The subgradient is never chosen implicitly; the error estimates this
package checks are stated for specific subgradients.
"""

from __future__ import annotations

import numpy as np

from .grid import values_of

__all__ = ["SubgradientError", "bregman", "symmetric_bregman"]


class SubgradientError(ValueError):
    """The supplied element fails the subgradient inequality."""


def _pair(F, a, b):
    return float(np.dot(F.grid.weights, a * b))


def _certify(F, v, xi, Fv, probes=10, seed=0):
    rng = np.random.default_rng(seed)
    tol = 1e-8 * (1.0 + abs(Fv))
    for k in range(probes):
        scale = 10.0 ** (-(k % 3) - 1)
        u = v + scale * (1.0 + np.abs(v)) * rng.standard_normal(v.size)
        Fu = F(u)
        if np.isfinite(Fu) and Fu - Fv - _pair(F, xi, u - v) < -tol:
            raise SubgradientError("xi is not a subgradient of F at v")


def bregman(F, u, v, xi, debug: bool = False) -> float:
    """Bregman distance ``F(u) - F(v) - <xi, u - v>``.

    Parameters
    ----------
    F : ConvexFunctional
    u, v : GridFunction or array_like
    xi : GridFunction or array_like
        Subgradient of ``F`` at ``v``, certified by the caller.
    debug : bool
        Probe the subgradient inequality at 10 random points first.

    Returns
    -------
    float
        Nonnegative up to roundoff; ``+inf`` if ``F(u)`` is infinite.

    Examples
    --------
    >>> from klreg.grid import make_uniform_grid
    >>> from klreg.functionals import quadratic_penalty
    >>> g = make_uniform_grid(0, 1, 4)
    >>> R = quadratic_penalty(g)
    >>> bregman(R, np.full(4, 3.0), np.ones(4), np.ones(4))
    2.0
    """
    uv = values_of(u, F.grid)
    vv = values_of(v, F.grid)
    xv = values_of(xi, F.grid)
    Fv = F(vv)
    if not np.isfinite(Fv):
        raise ValueError("F(v) must be finite")
    if debug:
        _certify(F, vv, xv, Fv)
    Fu = F(uv)
    if not np.isfinite(Fu):
        return np.inf
    return Fu - Fv - _pair(F, xv, uv - vv)


def symmetric_bregman(F, u, v, xi_u, xi_v, check: bool = True) -> float:
    """Symmetric Bregman distance ``<xi_u - xi_v, u - v>``.

    With ``check`` the sum of the two one-sided distances is computed as
    well and must agree to ``1e-9`` relative to the size of the terms.
    """
    uv = values_of(u, F.grid)
    vv = values_of(v, F.grid)
    xu = values_of(xi_u, F.grid)
    xv = values_of(xi_v, F.grid)
    d = _pair(F, xu - xv, uv - vv)
    if check:
        Fu, Fv = F(uv), F(vv)
        if np.isfinite(Fu) and np.isfinite(Fv):
            s = (Fu - Fv - _pair(F, xv, uv - vv)) + (Fv - Fu - _pair(F, xu, vv - uv))
            scale = 1.0 + abs(Fu) + abs(Fv) + abs(_pair(F, xv, uv - vv)) + abs(_pair(F, xu, vv - uv))
            if abs(s - d) > 1e-9 * scale:
                raise ArithmeticError(
                    f"symmetric Bregman forms disagree: {d!r} vs {s!r}")
    return d
