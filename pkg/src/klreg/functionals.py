r"""Convex integral functionals with conjugates, subgradients and prox maps.

Most catalog entries are integral functionals

.. math::

    F(z) = \int \varphi(z(t), c(t))\, dt \approx \sum_i w_i \varphi(z_i, c_i),

where ``c`` is a per-node parameter (the data ``f`` for fidelities, the
prior ``u*`` for the entropy penalty).  All maps then act pointwise, and
the scalar integrand object (:class:`Integrand`) carries the math.  The
power-norm fidelity is the one non-separable entry.

Methods accept node-value arrays or :class:`~klreg.grid.GridFunction`
instances and return the same kind.  Values outside the effective domain
are reported as ``+inf``, never NaN.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import wrightomega, xlogy

from .grid import Grid, GridFunction, values_of

__all__ = [
    "DomainError",
    "NonConvergenceError",
    "ConvexFunctional",
    "IntegralFunctional",
    "PowerNormFidelity",
    "Integrand",
    "IntegrandSpec",
    "KLIntegrand",
    "EntropyIntegrand",
    "BoltzmannShannonIntegrand",
    "QuadraticIntegrand",
    "NonnegIndicatorIntegrand",
    "NonnegConstrained",
    "GeneralIntegrand",
    "ItakuraSaitoIntegrand",
    "IntegrandReport",
    "kl_fidelity",
    "quadratic_fidelity",
    "power_norm_fidelity",
    "itakura_saito_fidelity",
    "general_integrand_fidelity",
    "kl_penalty",
    "quadratic_penalty",
    "nonneg_indicator",
    "boltzmann_shannon",
    "make_fidelity",
    "make_penalty",
    "kl_integrand_spec",
    "quadratic_integrand_spec",
    "itakura_saito_spec",
    "check_integrand_conditions",
    "duality_mapping",
    "FIDELITY_IDS",
    "PENALTY_IDS",
]

TINY = 1e-300
EXP_OVERFLOW = 700.0


class DomainError(ValueError):
    """Argument outside the domain where a map is single-valued or finite."""


class NonConvergenceError(RuntimeError):
    """Scalar root finding failed (non-convex or mis-specified integrand)."""


def _monotone_root(g, dg, lo, hi, x0, tol=1e-12, maxiter=100):
    """Vectorized root of an increasing function on ``[lo, hi]``.

    Guarded Newton: the iterate stays inside a bracket that shrinks with
    every evaluation, and steps leaving it are replaced by bisection.  If
    ``g`` has no sign change the nearer endpoint is returned.  Infinite
    endpoints are handled by expanding the bracket geometrically; a root
    that cannot be bracketed is reported as ``+-inf``.
    """
    x0 = np.asarray(x0, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), x0.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), x0.shape).copy()
    out = np.full(x0.shape, np.nan)
    active = np.ones(x0.shape, dtype=bool)
    with np.errstate(all="ignore"):
        for end, sign in ((lo, -1.0), (hi, 1.0)):
            fin = np.isfinite(end)
            if np.any(fin):
                ge = np.where(fin, g(np.where(fin, end, x0)), np.nan)
                hit = fin & (sign * ge <= 0)
                out[hit] = end[hit]
                active &= ~hit
        # expand unbounded ends until a sign change is found
        for end, sign in ((lo, -1.0), (hi, 1.0)):
            todo = active & ~np.isfinite(end)
            if not np.any(todo):
                continue
            step = np.maximum(np.abs(x0), 1.0)
            probe = x0 + sign * step
            for _ in range(2100):
                gp = g(probe)
                done = todo & (sign * gp > 0)
                end[done] = probe[done]
                todo &= ~done
                if not np.any(todo):
                    break
                step = step * 2.0
                probe = np.where(todo, x0 + sign * step, probe)
                if np.all(~np.isfinite(probe[todo])):
                    break
            out[todo] = sign * np.inf
            active &= ~todo
        a, b = lo, hi
        x = np.clip(x0, a, b)
        bad = active & ~((x > a) & (x < b))
        x[bad] = 0.5 * (a[bad] + b[bad])
        done = ~active
        for _ in range(maxiter):
            gx = g(x)
            neg = gx < 0
            a = np.where(active & neg, x, a)
            b = np.where(active & ~neg, x, b)
            xn = x - gx / dg(x)
            # converged Newton steps may land on the bracket edge; accept them
            conv = active & (((np.abs(xn - x) <= tol * (1.0 + np.abs(x))) & np.isfinite(xn))
                             | (gx == 0))
            out[conv] = np.where(gx == 0, x, np.clip(xn, a, b))[conv]
            outside = ~((xn > a) & (xn < b)) | ~np.isfinite(xn)
            xn = np.where(outside, 0.5 * (a + b), xn)
            active &= ~conv
            done |= conv
            x = np.where(active, xn, x)
            if not np.any(active):
                return out
        # bisection fallback for what Newton did not settle
        for _ in range(4000):
            mid = 0.5 * (a + b)
            gm = g(mid)
            if np.any(active & np.isnan(gm)):
                raise NonConvergenceError("integrand derivative is NaN inside its domain")
            a = np.where(active & (gm < 0), mid, a)
            b = np.where(active & (gm >= 0), mid, b)
            conv = active & (np.abs(b - a) <= tol * (1.0 + np.abs(mid)))
            out[conv] = 0.5 * (a + b)[conv]
            active &= ~conv
            if not np.any(active):
                return out
    raise NonConvergenceError("bisection did not converge")


# --------------------------------------------------------------------------
# scalar integrands
# --------------------------------------------------------------------------


class Integrand:
    """Pointwise convex integrand ``phi(x, c)`` and its companion maps.

    All methods are vectorized over ``x`` and the parameter ``c``.
    Subclasses provide at least :meth:`phi`, :meth:`d1`, :meth:`d2`,
    :meth:`domain`, and override whatever has a closed form.
    """

    name = "integrand"
    closed_form_conj = True

    def __init__(self):
        self.counter: Counter = Counter()

    def domain(self, c):
        """Lower and upper bound of the effective domain (closed if finite)."""
        return -np.inf, np.inf

    def feasible(self, x, c):
        lo, hi = self.domain(c)
        return (x >= lo) & (x <= hi)

    def phi(self, x, c):
        raise NotImplementedError

    def d1(self, x, c):
        raise NotImplementedError

    def d2(self, x, c):
        raise NotImplementedError

    def d3(self, x, c):
        raise NotImplementedError

    def prox(self, z, step, c):
        """``argmin_x 1/2 (x - z)^2 + step * phi(x, c)``."""
        z = np.asarray(z, dtype=float)
        lo, hi = self.domain(c)
        return _monotone_root(
            lambda x: x - z + step * self.d1(x, c),
            lambda x: 1.0 + step * self.d2(x, c),
            lo, hi, z, tol=1e-15)

    def conj(self, s, c):
        """``sup_x s x - phi(x, c)``, via the maximizer :meth:`conj_d1`."""
        s = np.asarray(s, dtype=float)
        x = self.conj_d1(s, c)
        with np.errstate(invalid="ignore", over="ignore"):
            val = np.where(np.isfinite(x), s * x - self.phi(np.where(np.isfinite(x), x, 1.0), c),
                           np.inf)
        return val

    def conj_d1(self, s, c):
        """Maximizer of ``s x - phi(x, c)``, i.e. the conjugate's gradient."""
        s = np.asarray(s, dtype=float)
        lo, hi = self.domain(c)
        x0 = np.broadcast_to(np.asarray(self._conj_start(c), dtype=float), s.shape)
        return _monotone_root(
            lambda x: self.d1(x, c) - s,
            lambda x: self.d2(x, c),
            lo, hi, x0)

    def _conj_start(self, c):
        lo, hi = self.domain(c)
        return np.clip(c, lo, hi) if np.all(np.isfinite(c)) else 1.0

    def conj_prox(self, y, step, c):
        """Prox of ``step * phi^*`` by the Moreau decomposition."""
        y = np.asarray(y, dtype=float)
        return y - step * self.prox(y / step, 1.0 / step, c)


def _log_guard(x, counter: Counter):
    """Natural log with arguments floored at 1e-300 (floor hits counted)."""
    small = x < TINY
    if np.any(small):
        counter["floor_hits"] += int(np.count_nonzero(small))
    return np.log(np.maximum(x, TINY))


class KLIntegrand(Integrand):
    """``phi(x) = c ln(c / x) - c + x`` for ``x > 0`` (data ``c > 0``)."""

    name = "kl"

    def domain(self, c):
        return 0.0, np.inf

    def feasible(self, x, c):
        return x > 0

    def phi(self, x, c):
        x = np.asarray(x, dtype=float)
        ok = x > 0
        with np.errstate(all="ignore"):
            val = c * (_log_guard(c, self.counter) - _log_guard(np.where(ok, x, 1.0), self.counter)) - c + x
        return np.where(ok, val, np.inf)

    def d1(self, x, c):
        return 1.0 - c / x

    def d2(self, x, c):
        return c / x ** 2

    def d3(self, x, c):
        return -2.0 * c / x ** 3

    def prox(self, z, step, c):
        z = np.asarray(z, dtype=float)
        zt = z - step
        return 0.5 * (zt + np.sqrt(zt * zt + 4.0 * step * c))

    def conj(self, s, c):
        s = np.asarray(s, dtype=float)
        ok = s < 1
        with np.errstate(all="ignore"):
            val = -c * _log_guard(np.where(ok, 1.0 - s, 1.0), self.counter)
        return np.where(ok, val, np.inf)

    def conj_d1(self, s, c):
        s = np.asarray(s, dtype=float)
        if np.any(s >= 1):
            raise DomainError("KL conjugate subgradient needs s < 1 everywhere")
        return c / (1.0 - s)

    def conj_prox(self, y, step, c):
        y = np.asarray(y, dtype=float)
        return 0.5 * (1.0 + y - np.sqrt((y - 1.0) ** 2 + 4.0 * step * c))


class EntropyIntegrand(Integrand):
    """``phi(x) = x ln(x / c) - x + c`` for ``x >= 0``, the integrand of KL(u, u*)."""

    name = "kl_penalty"

    def domain(self, c):
        return 0.0, np.inf

    def phi(self, x, c):
        x = np.asarray(x, dtype=float)
        ok = x >= 0
        xs = np.where(ok, x, 0.0)
        with np.errstate(all="ignore"):
            val = xlogy(xs, xs) - xs * _log_guard(c, self.counter) - xs + c
        return np.where(ok, val, np.inf)

    def d1(self, x, c):
        with np.errstate(divide="ignore"):
            return np.log(x / c)

    def d2(self, x, c):
        return 1.0 / x

    def d3(self, x, c):
        return -1.0 / x ** 2

    def prox(self, z, step, c):
        z = np.asarray(z, dtype=float)
        return step * np.real(wrightomega(z / step - np.log(step / c)))

    def conj(self, s, c):
        s = np.asarray(s, dtype=float)
        ok = s <= EXP_OVERFLOW
        return np.where(ok, c * np.expm1(np.minimum(s, EXP_OVERFLOW)), np.inf)

    def conj_d1(self, s, c):
        s = np.asarray(s, dtype=float)
        if np.any(s > EXP_OVERFLOW):
            raise DomainError("exponent overflow in the entropy conjugate")
        return c * np.exp(s)


class BoltzmannShannonIntegrand(Integrand):
    """``phi(x) = x ln x`` for ``x >= 0``; ``c`` is ignored."""

    name = "boltzmann_shannon"

    def domain(self, c):
        return 0.0, np.inf

    def phi(self, x, c=None):
        x = np.asarray(x, dtype=float)
        ok = x >= 0
        xs = np.where(ok, x, 0.0)
        return np.where(ok, xlogy(xs, xs), np.inf)

    def d1(self, x, c=None):
        with np.errstate(divide="ignore"):
            return np.log(x) + 1.0

    def d2(self, x, c=None):
        return 1.0 / x

    def d3(self, x, c=None):
        return -1.0 / x ** 2

    def prox(self, z, step, c=None):
        z = np.asarray(z, dtype=float)
        return step * np.real(wrightomega(z / step - 1.0 - np.log(step)))

    def conj(self, s, c=None):
        s = np.asarray(s, dtype=float)
        ok = s - 1.0 <= EXP_OVERFLOW
        return np.where(ok, np.exp(np.minimum(s - 1.0, EXP_OVERFLOW)), np.inf)

    def conj_d1(self, s, c=None):
        return np.exp(np.asarray(s, dtype=float) - 1.0)


class QuadraticIntegrand(Integrand):
    """``phi(x) = (x - c)^2 / 2``."""

    name = "quadratic"

    def phi(self, x, c):
        return 0.5 * (np.asarray(x, dtype=float) - c) ** 2

    def d1(self, x, c):
        return np.asarray(x, dtype=float) - c

    def d2(self, x, c):
        return np.ones_like(np.asarray(x, dtype=float) + c)

    def d3(self, x, c):
        return np.zeros_like(np.asarray(x, dtype=float) + c)

    def prox(self, z, step, c):
        return (np.asarray(z, dtype=float) + step * c) / (1.0 + step)

    def conj(self, s, c):
        s = np.asarray(s, dtype=float)
        return 0.5 * s * s + s * c

    def conj_d1(self, s, c):
        return np.asarray(s, dtype=float) + c

    def conj_prox(self, y, step, c):
        return (np.asarray(y, dtype=float) - step * c) / (1.0 + step)


class NonnegIndicatorIntegrand(Integrand):
    """Indicator of ``[0, inf)``."""

    name = "nonneg"

    def domain(self, c):
        return 0.0, np.inf

    def phi(self, x, c=None):
        return np.where(np.asarray(x, dtype=float) >= 0, 0.0, np.inf)

    def d1(self, x, c=None):
        # selection: 0 is a subgradient at every feasible point
        return np.zeros_like(np.asarray(x, dtype=float))

    def prox(self, z, step, c=None):
        return np.maximum(np.asarray(z, dtype=float), 0.0)

    def conj(self, s, c=None):
        return np.where(np.asarray(s, dtype=float) <= 0, 0.0, np.inf)

    def conj_d1(self, s, c=None):
        s = np.asarray(s, dtype=float)
        if np.any(s > 0):
            raise DomainError("indicator conjugate is infinite for s > 0")
        return np.zeros_like(s)

    def conj_prox(self, y, step, c=None):
        return np.minimum(np.asarray(y, dtype=float), 0.0)


class NonnegConstrained(Integrand):
    """``phi + indicator(x >= 0)`` for a one-dimensional convex ``phi``.

    In one dimension the prox of the restricted integrand is the
    projection of the unrestricted prox, and the conjugate maximizer is the
    unrestricted one clipped at zero.
    """

    def __init__(self, inner: Integrand):
        super().__init__()
        self.counter = inner.counter
        self.inner = inner
        self.name = "nonneg+" + inner.name

    def domain(self, c):
        lo, hi = self.inner.domain(c)
        return np.maximum(lo, 0.0), hi

    def phi(self, x, c):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.inner.phi(np.maximum(x, 0.0), c), np.inf)

    def d1(self, x, c):
        return self.inner.d1(x, c)

    def d2(self, x, c):
        return self.inner.d2(x, c)

    def d3(self, x, c):
        return self.inner.d3(x, c)

    def prox(self, z, step, c):
        return np.maximum(self.inner.prox(z, step, c), 0.0)

    def conj_d1(self, s, c):
        return np.maximum(self.inner.conj_d1(s, c), 0.0)

    def conj(self, s, c):
        s = np.asarray(s, dtype=float)
        x = self.inner.conj_d1(s, c)
        at_zero = -self.inner.phi(np.zeros_like(s), c)
        return np.where(x >= 0, self.inner.conj(s, c), at_zero)


@dataclass(frozen=True)
class IntegrandSpec:
    """User-supplied scalar integrand ``phi(tau, c)`` for a general fidelity.

    The dependence on the position ``t`` enters through the per-node
    parameter ``c`` (the data value ``f(t)``).  Derivatives that are not
    supplied are replaced by central differences.

    Attributes
    ----------
    phi : callable
        ``phi(tau, c)``, vectorized, convex in ``tau`` on the domain.
    phi_d1, phi_d2, phi_d3 : callable or None
        Derivatives in ``tau``.
    domain_lo, domain_hi : float or callable
        Domain bounds; callables receive ``c``.
    name : str
    """

    phi: Callable
    phi_d1: Optional[Callable] = None
    phi_d2: Optional[Callable] = None
    phi_d3: Optional[Callable] = None
    domain_lo: float | Callable = -np.inf
    domain_hi: float | Callable = np.inf
    name: str = "general"


class GeneralIntegrand(Integrand):
    """Integrand built from an :class:`IntegrandSpec`.

    Prox and conjugate have no closed form; both are computed per node by
    guarded Newton iteration with a bisection fallback.
    """

    closed_form_conj = False

    def __init__(self, spec: IntegrandSpec):
        super().__init__()
        self.spec = spec
        self.name = spec.name

    def domain(self, c):
        lo, hi = self.spec.domain_lo, self.spec.domain_hi
        lo = lo(c) if callable(lo) else lo
        hi = hi(c) if callable(hi) else hi
        return lo, hi

    def phi(self, x, c):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain(c)
        ok = (x >= lo) & (x <= hi)
        with np.errstate(all="ignore"):
            val = self.spec.phi(np.where(ok, x, np.clip(np.nan_to_num(x), lo, hi)), c)
        val = np.where(ok, val, np.inf)
        return np.where(np.isnan(val), np.inf, val)

    def _fd(self, order, x, c):
        h = 1e-5 * (1.0 + np.abs(x))
        f = lambda y: self.spec.phi(y, c)
        if order == 1:
            return (f(x + h) - f(x - h)) / (2 * h)
        if order == 2:
            return (f(x + h) - 2 * f(x) + f(x - h)) / h ** 2
        h = 1e-3 * (1.0 + np.abs(x))
        return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h ** 3)

    def d1(self, x, c):
        return self.spec.phi_d1(x, c) if self.spec.phi_d1 else self._fd(1, x, c)

    def d2(self, x, c):
        return self.spec.phi_d2(x, c) if self.spec.phi_d2 else self._fd(2, x, c)

    def d3(self, x, c):
        return self.spec.phi_d3(x, c) if self.spec.phi_d3 else self._fd(3, x, c)


def itakura_saito_spec(upper: float, lower: float = 1e-12) -> IntegrandSpec:
    """``phi(tau, c) = ln(tau / c) + c / tau - 1`` restricted to ``[lower, upper]``.

    The integrand is convex only for ``tau < 2 c``, which is why the upper
    bound is passed in (``2 min f`` minus a margin for a fidelity).
    """
    return IntegrandSpec(
        phi=lambda x, c: np.log(x / c) + c / x - 1.0,
        phi_d1=lambda x, c: (x - c) / x ** 2,
        phi_d2=lambda x, c: (2.0 * c - x) / x ** 3,
        phi_d3=lambda x, c: 2.0 * (x - 3.0 * c) / x ** 4,
        domain_lo=lower,
        domain_hi=upper,
        name="itakura_saito",
    )


def kl_integrand_spec() -> IntegrandSpec:
    """Kullback-Leibler integrand as an :class:`IntegrandSpec`."""
    return IntegrandSpec(
        phi=lambda x, c: c * np.log(c / x) - c + x,
        phi_d1=lambda x, c: 1.0 - c / x,
        phi_d2=lambda x, c: c / x ** 2,
        phi_d3=lambda x, c: -2.0 * c / x ** 3,
        domain_lo=0.0,
        name="kl",
    )


def quadratic_integrand_spec() -> IntegrandSpec:
    return IntegrandSpec(
        phi=lambda x, c: 0.5 * (x - c) ** 2,
        phi_d1=lambda x, c: x - c,
        phi_d2=lambda x, c: np.ones_like(x - c),
        phi_d3=lambda x, c: np.zeros_like(x - c),
        name="quadratic",
    )


class ItakuraSaitoIntegrand(GeneralIntegrand):
    """Itakura-Saito integrand with its closed-form conjugate.

    For ``s`` below ``phi'(upper)`` the conjugate maximizer is the smaller
    root of ``s tau^2 - tau + c = 0``; beyond it the supremum sits at the
    clipped domain edge.  The prox is the root of a cubic and goes through
    the guarded Newton solver.
    """

    closed_form_conj = True

    def __init__(self, upper: float, lower: float = 1e-12):
        super().__init__(itakura_saito_spec(upper, lower))
        self.lower, self.upper = float(lower), float(upper)

    def conj_d1(self, s, c):
        s = np.asarray(s, dtype=float)
        c = np.broadcast_to(c, s.shape)
        with np.errstate(all="ignore"):
            disc = np.sqrt(np.maximum(1.0 - 4.0 * s * c, 0.0))
            small = np.abs(s * c) < 1e-8
            # 2c / (1 + sqrt(1 - 4 s c)) avoids cancellation near s = 0
            x = np.where(small, c * (1.0 + s * c), 2.0 * c / (1.0 + disc))
        top = s >= self.d1(self.upper, c)
        bottom = s <= self.d1(self.lower, c)
        return np.where(top, self.upper, np.where(bottom, self.lower, x))

    def prox(self, z, step, c):
        # start from the prox of the quadratic model with curvature 1 / c^2
        z = np.asarray(z, dtype=float)
        c = np.broadcast_to(np.asarray(c, dtype=float), z.shape)
        k = step / (c * c)
        x0 = np.clip((z + k * c) / (1.0 + k), self.lower, self.upper)
        return _monotone_root(
            lambda x: x - z + step * self.d1(x, c),
            lambda x: 1.0 + step * self.d2(x, c),
            self.lower, self.upper, x0, tol=1e-15)


# --------------------------------------------------------------------------
# functionals
# --------------------------------------------------------------------------


def _like(template, values):
    if isinstance(template, GridFunction):
        return GridFunction(template.grid, values)
    return values


class ConvexFunctional:
    """Proper convex lower semicontinuous functional on a grid.

    Subclasses implement the array-level maps; this base class provides the
    Moreau-based conjugate prox and the accessors named after the contract
    (``eval``, ``conj_eval``).

    Attributes
    ----------
    grid : Grid
    id : str
        Catalog id, as used in configuration files.
    diagnostics : collections.Counter
        Counts of guarded evaluations (``floor_hits``).
    """

    id = "functional"
    domain_description = "all real functions"

    def __init__(self, grid: Grid):
        self.grid = grid
        self.diagnostics: Counter = Counter()

    def _v(self, z):
        return values_of(z, self.grid)

    def __call__(self, z) -> float:
        return self.eval(z)

    def eval(self, z) -> float:
        raise NotImplementedError

    def conj_eval(self, zs) -> float:
        raise NotImplementedError

    def conj(self, zs) -> float:
        return self.conj_eval(zs)

    def subgrad(self, z):
        raise NotImplementedError

    def conj_subgrad(self, zs):
        raise NotImplementedError

    def prox(self, z, step: float):
        raise NotImplementedError

    def conj_prox(self, z, step: float):
        """Prox of ``step * F^*``, from the Moreau decomposition."""
        if step <= 0:
            raise ValueError("step must be positive")
        zv = self._v(z)
        out = zv - step * np.asarray(self.prox(zv / step, 1.0 / step))
        return _like(z, out)

    def in_domain(self, z) -> bool:
        return bool(np.isfinite(self.eval(z)))

    def __repr__(self):
        return f"{type(self).__name__}(id={self.id!r}, n={self.grid.size})"


class IntegralFunctional(ConvexFunctional):
    """``z -> sum_i w_i phi(z_i, c_i)`` for an :class:`Integrand`."""

    def __init__(self, integrand: Integrand, grid: Grid, param=None, id: str | None = None):
        super().__init__(grid)
        self.integrand = integrand
        self.diagnostics = integrand.counter
        if param is None:
            param = np.zeros(grid.size)
        self.param = np.array(values_of(param, grid), dtype=float)
        self.param.setflags(write=False)
        self.id = id or integrand.name
        lo, hi = integrand.domain(self.param)
        self.domain_description = f"{lo} <= z <= {hi} at every node"

    def pointwise(self, z) -> np.ndarray:
        return self.integrand.phi(self._v(z), self.param)

    def eval(self, z) -> float:
        vals = self.pointwise(z)
        if not np.all(np.isfinite(vals)):
            return np.inf
        return float(np.dot(self.grid.weights, vals))

    def conj_eval(self, zs) -> float:
        vals = self.integrand.conj(self._v(zs), self.param)
        if not np.all(np.isfinite(vals)):
            return np.inf
        return float(np.dot(self.grid.weights, vals))

    def subgrad(self, z):
        zv = self._v(z)
        if not np.all(self.integrand.feasible(zv, self.param)):
            raise DomainError(f"{self.id}: argument outside the domain")
        with np.errstate(divide="ignore", invalid="ignore"):
            g = self.integrand.d1(zv, self.param)
        if not np.all(np.isfinite(g)):
            raise DomainError(f"{self.id}: subgradient is not finite (boundary point)")
        return _like(z, np.broadcast_to(g, zv.shape).astype(float))

    def conj_subgrad(self, zs):
        zv = self._v(zs)
        g = self.integrand.conj_d1(zv, self.param)
        if not np.all(np.isfinite(g)):
            raise DomainError(f"{self.id}: conjugate subgradient is empty")
        return _like(zs, np.broadcast_to(g, zv.shape).astype(float))

    def prox(self, z, step: float):
        if step <= 0:
            raise ValueError("step must be positive")
        return _like(z, np.broadcast_to(self.integrand.prox(self._v(z), step, self.param),
                                        (self.grid.size,)).astype(float))

    def conj_prox(self, z, step: float):
        if step <= 0:
            raise ValueError("step must be positive")
        return _like(z, np.broadcast_to(self.integrand.conj_prox(self._v(z), step, self.param),
                                        (self.grid.size,)).astype(float))

    def in_domain(self, z) -> bool:
        return bool(np.all(self.integrand.feasible(self._v(z), self.param)))


class PowerNormFidelity(ConvexFunctional):
    """``(1/q) ||z - f||_2^q`` with the weighted L^2 norm, ``q > 1``."""

    domain_description = "all real functions"

    def __init__(self, f, q: float = 2.0, grid: Grid | None = None):
        if isinstance(f, GridFunction):
            grid = f.grid
        if grid is None:
            raise ValueError("a grid is required")
        super().__init__(grid)
        if not q > 1:
            raise ValueError("need q > 1")
        self.q = float(q)
        self.qs = self.q / (self.q - 1.0)
        self.f = np.array(values_of(f, grid), dtype=float)
        self.id = f"power_norm:q={q:g}"

    def _norm(self, x):
        return float(np.sqrt(np.dot(self.grid.weights, x * x)))

    def eval(self, z) -> float:
        return self._norm(self._v(z) - self.f) ** self.q / self.q

    def conj_eval(self, zs) -> float:
        s = self._v(zs)
        return self._norm(s) ** self.qs / self.qs + float(np.dot(self.grid.weights, s * self.f))

    def subgrad(self, z):
        return _like(z, duality_mapping(self._v(z) - self.f, self.q, self.grid.weights))

    def conj_subgrad(self, zs):
        s = self._v(zs)
        return _like(zs, self.f + duality_mapping(s, self.qs, self.grid.weights))

    def prox(self, z, step: float):
        if step <= 0:
            raise ValueError("step must be positive")
        w = self._v(z) - self.f
        r = self._norm(w)
        if r == 0.0:
            return _like(z, self.f.copy())
        if self.q == 2.0:
            lam = 1.0 / (1.0 + step)
        else:
            # x = f + lam w with lam + step lam^(q-1) r^(q-2) = 1
            k = step * r ** (self.q - 2.0)
            lam = brentq(lambda l: l + k * l ** (self.q - 1.0) - 1.0, 0.0, 1.0,
                         xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return _like(z, self.f + lam * w)


def duality_mapping(z, q: float, weights=None) -> np.ndarray:
    """Duality mapping ``J_q(z) = ||z||^(q-2) z`` (gradient of ``||z||^q / q``).

    ``J_q`` is homogeneous of degree ``q - 1``:
    ``J_q(lam z) = sign(lam) |lam|^(q-1) J_q(z)``.
    """
    z = np.asarray(z, dtype=float)
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=float)
    r = np.sqrt(np.dot(w, z * z))
    if r == 0.0:
        return np.zeros_like(z)
    return r ** (q - 2.0) * z


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def _data(f, grid=None):
    if isinstance(f, GridFunction):
        return f.grid, f.values
    if grid is None:
        raise ValueError("pass a GridFunction or a grid")
    return grid, values_of(f, grid)


def kl_fidelity(f, grid: Grid | None = None) -> IntegralFunctional:
    """``H_f(z) = int f ln(f / z) - f + z`` on ``z > 0``.

    Raises
    ------
    ValueError
        If ``f`` has a non-positive entry.
    """
    grid, fv = _data(f, grid)
    if np.any(fv <= 0):
        raise ValueError("KL data must be strictly positive")
    F = IntegralFunctional(KLIntegrand(), grid, fv, "kl")
    F.domain_description = "z > 0 at every node"
    return F


def quadratic_fidelity(f, grid: Grid | None = None) -> IntegralFunctional:
    """``(1/2) ||z - f||_2^2``."""
    grid, fv = _data(f, grid)
    return IntegralFunctional(QuadraticIntegrand(), grid, fv, "quadratic")


def power_norm_fidelity(f, q: float = 2.0, grid: Grid | None = None) -> PowerNormFidelity:
    return PowerNormFidelity(f, q, grid)


def itakura_saito_fidelity(f, grid: Grid | None = None, margin: float = 1e-12) -> IntegralFunctional:
    """Itakura-Saito divergence ``int ln(z / f) + f / z - 1``.

    The domain is clipped to ``[1e-12, 2 min f - 1e-12]`` where the
    integrand is convex in ``z`` at every node.
    """
    grid, fv = _data(f, grid)
    if np.any(fv <= 0):
        raise ValueError("Itakura-Saito data must be strictly positive")
    F = IntegralFunctional(ItakuraSaitoIntegrand(2.0 * fv.min() - margin, margin), grid, fv,
                           "itakura_saito")
    F.domain_description = f"{margin} <= z <= 2 min f - {margin}"
    return F


def general_integrand_fidelity(spec: IntegrandSpec, f, grid: Grid | None = None) -> IntegralFunctional:
    """Fidelity ``int phi(z(t), f(t)) dt`` for a user integrand."""
    grid, fv = _data(f, grid)
    return IntegralFunctional(GeneralIntegrand(spec), grid, fv, spec.name)


def kl_penalty(ustar, grid: Grid | None = None) -> IntegralFunctional:
    """``R(u) = KL(u, u*) = int u ln(u / u*) - u + u*`` on ``u >= 0``."""
    grid, us = _data(ustar, grid)
    if np.any(us <= 0):
        raise ValueError("prior u* must be strictly positive")
    F = IntegralFunctional(EntropyIntegrand(), grid, us, "kl_penalty")
    F.domain_description = "u >= 0 at every node"
    return F


def quadratic_penalty(grid: Grid) -> IntegralFunctional:
    """``R(u) = (1/2) ||u||_2^2``."""
    return IntegralFunctional(QuadraticIntegrand(), grid, np.zeros(grid.size), "quadratic_penalty")


def nonneg_indicator(grid: Grid) -> IntegralFunctional:
    F = IntegralFunctional(NonnegIndicatorIntegrand(), grid, np.zeros(grid.size), "nonneg")
    F.domain_description = "u >= 0 at every node"
    return F


def boltzmann_shannon(grid: Grid) -> IntegralFunctional:
    """Negative entropy ``int u ln u``; its Bregman distance is KL."""
    return IntegralFunctional(BoltzmannShannonIntegrand(), grid, np.zeros(grid.size),
                              "boltzmann_shannon")


FIDELITY_IDS = ("kl", "quadratic", "power_norm:q=2", "itakura_saito")
PENALTY_IDS = ("kl_penalty", "quadratic_penalty", "nonneg+kl_penalty",
               "nonneg+quadratic_penalty", "nonneg")


def make_fidelity(fid: str, f) -> ConvexFunctional:
    """Fidelity from its catalog id (``"kl"``, ``"power_norm:q=2"``, ...)."""
    if fid == "kl":
        return kl_fidelity(f)
    if fid == "quadratic":
        return quadratic_fidelity(f)
    if fid == "itakura_saito":
        return itakura_saito_fidelity(f)
    if fid.startswith("power_norm"):
        _, _, rest = fid.partition(":")
        q = 2.0
        if rest:
            key, _, val = rest.partition("=")
            if key.strip() != "q":
                raise ValueError(f"bad fidelity id {fid!r}")
            q = float(val)
        return power_norm_fidelity(f, q)
    raise ValueError(f"unknown fidelity id {fid!r}")


def make_penalty(pid: str, grid: Grid, ustar=None) -> IntegralFunctional:
    """Penalty from its catalog id; ``ustar`` is the KL prior where needed."""
    if pid == "quadratic_penalty":
        return quadratic_penalty(grid)
    if pid == "nonneg":
        return nonneg_indicator(grid)
    if pid in ("kl_penalty", "nonneg+kl_penalty"):
        if ustar is None:
            raise ValueError("kl_penalty needs the prior u*")
        F = kl_penalty(ustar, grid)
        if pid == "nonneg+kl_penalty":
            # the entropy already forces u >= 0; the sum is the same functional
            F = IntegralFunctional(NonnegConstrained(EntropyIntegrand()), grid, F.param, pid)
        return F
    if pid == "nonneg+quadratic_penalty":
        return IntegralFunctional(NonnegConstrained(QuadraticIntegrand()), grid,
                                  np.zeros(grid.size), pid)
    raise ValueError(f"unknown penalty id {pid!r}")


# --------------------------------------------------------------------------
# conditions on general integrands
# --------------------------------------------------------------------------


@dataclass
class IntegrandReport:
    """Per-node check of the smoothness conditions at the exact data.

    Attributes
    ----------
    d1_at_f, d2_at_f : ndarray
        ``phi'(f)`` and ``phi''(f)`` per node.
    ctilde : ndarray
        ``sup |phi''' / (phi'')^3|`` over a +-10% neighborhood of ``f``.
    c1, c2, c3 : bool
        Three-times differentiability near ``f`` (finite derivatives),
        ``phi'(f) = 0`` with ``phi''(f) > 0``, and a finite ``ctilde``.
    """

    d1_at_f: np.ndarray
    d2_at_f: np.ndarray
    ctilde: np.ndarray
    c1: bool
    c2: bool
    c3: bool

    @property
    def passed(self) -> bool:
        return self.c1 and self.c2 and self.c3

    @property
    def ctilde_max(self) -> float:
        return float(np.max(self.ctilde))


def check_integrand_conditions(spec, f, rel: float = 0.1, samples: int = 41) -> IntegrandReport:
    """Check the smoothness and non-degeneracy conditions at ``f``.

    Parameters
    ----------
    spec : IntegrandSpec or Integrand
    f : GridFunction or array_like
        Exact data.
    rel : float
        Half-width of the neighborhood, relative to ``f``.
    """
    integrand = GeneralIntegrand(spec) if isinstance(spec, IntegrandSpec) else spec
    fv = np.asarray(values_of(f), dtype=float)
    lo, hi = integrand.domain(fv)
    lo = np.broadcast_to(lo, fv.shape)
    hi = np.broadcast_to(hi, fv.shape)
    if np.any(fv <= lo) or np.any(fv >= hi):
        raise DomainError("data values lie outside the integrand domain")
    with np.errstate(all="ignore"):
        d1 = np.broadcast_to(integrand.d1(fv, fv), fv.shape).astype(float)
        d2 = np.broadcast_to(integrand.d2(fv, fv), fv.shape).astype(float)
        frac = np.linspace(-rel, rel, samples)
        tau = fv[:, None] * (1.0 + frac[None, :])
        tau = np.clip(tau, lo[:, None], hi[:, None])
        c = fv[:, None]
        n2 = np.broadcast_to(integrand.d2(tau, c), tau.shape)
        n3 = np.broadcast_to(integrand.d3(tau, c), tau.shape)
        ratio = np.abs(n3 / n2 ** 3)
    c1 = bool(np.all(np.isfinite(n2)) and np.all(np.isfinite(n3)))
    c2 = bool(np.all(np.abs(d1) <= 1e-8) and np.all(d2 >= 1e-8))
    ctilde = ratio.max(axis=1)
    c3 = bool(np.all(np.isfinite(ctilde)) and np.all(n2 > 0))
    return IntegrandReport(d1, d2, ctilde, c1, c2, c3)
