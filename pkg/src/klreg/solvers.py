r"""Primal and dual solutions of the regularized problem.

The primal problem is

.. math::

    \min_u \frac{1}{\alpha} H_f(Au) + R(u),

and its Fenchel dual is :math:`\min_p \frac{1}{\alpha} H_f^*(-\alpha p) +
R^*(A^* p)`.  The iterations work on the equivalent problem
:math:`\min_u H_f(Au) + \alpha R(u)`; the internal dual iterate ``y``
relates to the dual variable by ``p = -y / alpha`` (see
:func:`dual_from_iterate`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import wrightomega

from .grid import GridFunction, values_of
from .functionals import DomainError, IntegralFunctional, kl_fidelity, kl_penalty
from .operators import DiscreteOperator

__all__ = [
    "SolveOptions",
    "SolveResult",
    "SolverError",
    "SolverDivergenceError",
    "InfeasibleStartError",
    "solve_primal_dual",
    "solve_em_kl",
    "extract_dual_kl",
    "check_optimality",
    "duality_gap",
    "primal_value",
    "dual_value",
    "dual_from_iterate",
    "iterate_from_dual",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SolverDivergenceError(SolverError):
    """Primal value grew far above its initial value."""


class InfeasibleStartError(SolverError):
    """Initial iterate has an infinite primal value."""


@dataclass(frozen=True)
class SolveOptions:
    """Stopping and step-size controls.

    Attributes
    ----------
    max_iters : int
    gap_tol : float
        Relative duality-gap tolerance, ``gap <= gap_tol * (1 + |P|)``.
    oc_tol : float
        Tolerance on both optimality-condition residuals (see
        :func:`check_optimality`).  A small gap alone does not pin down
        the iterate: the gap is quadratic in the distance to the solution.
    step_ratio : float
        Primal step over dual step; their product stays at
        ``0.99**2 / ||A||^2``.
    check_every : int
        Iterations between certificate evaluations.
    stall_iters : int
        Iterations without progress of the certificate before the steps are
        halved (once) and, on a second stall, the run is stopped.
    trace_gap : bool
        Record ``(iteration, gap)`` at every check.
    adaptive : bool
        Rebalance the primal and dual steps at every check so that the two
        residuals stay within a factor 2 of each other (product of the
        steps unchanged, adaptation strength decaying geometrically).
    """

    max_iters: int = 200_000
    gap_tol: float = 1e-10
    oc_tol: float = 1e-11
    step_ratio: float = 1.0
    check_every: int = 10
    stall_iters: int = 5000
    trace_gap: bool = False
    adaptive: bool = True

    def __post_init__(self):
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if not self.oc_tol > 0:
            raise ValueError("oc_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.step_ratio > 0:
            raise ValueError("step_ratio must be positive")


@dataclass
class SolveResult:
    """Outcome of a solve, in the sign convention of the dual problem."""

    u_alpha: GridFunction
    p_alpha: GridFunction
    primal_value: float
    dual_value: float
    gap: float
    iters: int
    oc1_residual: float
    oc2_residual: float
    converged: bool
    method: str = ""
    trace: list = field(default_factory=list, repr=False)

    @property
    def relative_gap(self) -> float:
        return self.gap / (1.0 + abs(self.primal_value))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_alpha"] = self.u_alpha.values.tolist()
        d["p_alpha"] = self.p_alpha.values.tolist()
        d.pop("trace")
        return d


def dual_from_iterate(y, alpha: float):
    """Dual variable ``p = -y / alpha`` from the internal dual iterate."""
    return -np.asarray(y) / alpha


def iterate_from_dual(p, alpha: float):
    """Inverse of :func:`dual_from_iterate`."""
    return -alpha * np.asarray(p)


def _wnorm(weights, x):
    return float(np.sqrt(np.dot(weights, x * x)))


def primal_value(A: DiscreteOperator, Hf, R, alpha: float, u) -> float:
    """``(1/alpha) H_f(Au) + R(u)``."""
    u = values_of(u, A.domain_grid)
    h = Hf(A.matvec(u))
    if not np.isfinite(h):
        return np.inf
    r = R(u)
    return h / alpha + r


def dual_value(A: DiscreteOperator, Hf, R, alpha: float, p) -> float:
    """``-[(1/alpha) H_f^*(-alpha p) + R^*(A^* p)]``; ``-inf`` off the domain."""
    p = values_of(p, A.codomain_grid)
    hs = Hf.conj_eval(-alpha * p)
    if not np.isfinite(hs):
        return -np.inf
    rs = R.conj_eval(A.rmatvec(p))
    if not np.isfinite(rs):
        return -np.inf
    return -(hs / alpha + rs)


def duality_gap(A: DiscreteOperator, Hf, R, alpha: float, u, p) -> float:
    """Primal value minus dual value; nonnegative up to roundoff.

    Domain violations give ``+inf`` rather than an exception.
    """
    return primal_value(A, Hf, R, alpha, u) - dual_value(A, Hf, R, alpha, p)


def check_optimality(A: DiscreteOperator, Hf, R, alpha: float, u, p):
    """Residuals of the two optimality conditions.

    ``oc1`` measures ``A*p in dR(u)`` through the prox fixed point
    ``u = prox_R(u + A*p)``; ``oc2`` measures ``Au in dH_f^*(-alpha p)``.
    Both are relative; an empty conjugate subdifferential gives ``inf``.

    Returns
    -------
    (float, float)
    """
    u = values_of(u, A.domain_grid)
    p = values_of(p, A.codomain_grid)
    wd, wc = A.domain_grid.weights, A.codomain_grid.weights
    try:
        fixed = np.asarray(R.prox(u + A.rmatvec(p), 1.0))
        oc1 = _wnorm(wd, u - fixed) / (1.0 + _wnorm(wd, u))
    except DomainError:
        oc1 = np.inf
    Au = A.matvec(u)
    try:
        zeta = np.asarray(Hf.conj_subgrad(-alpha * p))
        oc2 = _wnorm(wc, Au - zeta) / (1.0 + _wnorm(wc, Au))
    except DomainError:
        oc2 = np.inf
    if not np.isfinite(oc1):
        oc1 = np.inf
    if not np.isfinite(oc2):
        oc2 = np.inf
    return float(oc1), float(oc2)


def extract_dual_kl(A: DiscreteOperator, f, u_alpha, alpha: float) -> GridFunction:
    """Dual solution from a KL primal solution, ``p = (f / Au - 1) / alpha``.

    Raises
    ------
    DomainError
        If ``Au`` has a non-positive entry.
    """
    Au = A.matvec(values_of(u_alpha, A.domain_grid))
    if np.any(Au <= 0):
        raise DomainError("A u_alpha must be strictly positive")
    fv = values_of(f, A.codomain_grid)
    return GridFunction(A.codomain_grid, (fv / Au - 1.0) / alpha)


def default_start(A: DiscreteOperator, Hf) -> np.ndarray:
    """Positive constant start whose image has the mean level of the data."""
    ones = np.ones(A.domain_grid.size)
    data = getattr(Hf, "param", None)
    if data is None:
        data = getattr(Hf, "f", None)
    if data is not None:
        a1 = A.matvec(ones)
        level = float(np.mean(data)) / float(np.mean(a1)) if np.mean(a1) > 0 else 0.0
        if level > 0 and np.isfinite(level):
            return level * ones
    return ones


def solve_primal_dual(A: DiscreteOperator, Hf, R, alpha: float,
                      opts: SolveOptions | None = None, u0=None, p0=None) -> SolveResult:
    """First-order primal-dual (Chambolle-Pock) iteration.

    Parameters
    ----------
    A : DiscreteOperator
    Hf : ConvexFunctional
        Fidelity; needs ``conj_prox`` and ``conj_eval``.
    R : ConvexFunctional
        Penalty; needs ``prox`` and ``conj_eval``.
    alpha : float
        Regularization parameter.
    opts : SolveOptions, optional
    u0 : array_like, optional
        Start with finite primal value; defaults to :func:`default_start`.
    p0 : array_like, optional
        Start for the dual variable (zero by default).

    Returns
    -------
    SolveResult
        ``converged`` is set when the relative gap and both optimality
        residuals are below tolerance.  Otherwise the iterate with the best
        certificate is returned.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    opts = opts or SolveOptions()
    wd, wc = A.domain_grid.weights, A.codomain_grid.weights
    u = np.array(default_start(A, Hf) if u0 is None else values_of(u0, A.domain_grid), dtype=float)
    y = np.zeros(A.codomain_grid.size) if p0 is None else iterate_from_dual(
        values_of(p0, A.codomain_grid), alpha).astype(float)
    P0 = primal_value(A, Hf, R, alpha, u)
    if not np.isfinite(P0):
        raise InfeasibleStartError("initial iterate has infinite primal value")
    L = A.norm
    if L == 0:
        raise SolverError("operator is zero")
    tau = 0.99 * opts.step_ratio / L
    sigma = 0.99 / (opts.step_ratio * L)

    def certificate(u, y):
        p = dual_from_iterate(y, alpha)
        P = primal_value(A, Hf, R, alpha, u)
        D = dual_value(A, Hf, R, alpha, p)
        gap = P - D
        oc1, oc2 = check_optimality(A, Hf, R, alpha, u, p)
        return P, D, gap, oc1, oc2

    def merit(P, gap, oc1, oc2):
        if not np.isfinite(P):
            return np.inf
        return max(abs(gap) / (opts.gap_tol * (1.0 + abs(P))), oc1 / opts.oc_tol, oc2 / opts.oc_tol)

    best = None
    best_merit = np.inf
    last_progress = 0
    reductions = 0
    trace = []
    ub = u.copy()
    k = 0
    converged = False
    adapt = 0.5
    while k < opts.max_iters:
        k += 1
        check = not (k % opts.check_every and k != opts.max_iters)
        yo, uo = y, u
        y = np.asarray(Hf.conj_prox(y + sigma * A.matvec(ub), sigma))
        un = np.asarray(R.prox(u - tau * A.rmatvec(y), tau * alpha))
        ub = 2.0 * un - u
        u = un
        if not check:
            continue
        if opts.adaptive:
            # primal and dual residuals of the last step
            rp = _wnorm(wd, (uo - u) / tau - A.rmatvec(yo - y))
            rd = _wnorm(wc, (yo - y) / sigma - A.matvec(uo - u))
            if rp > 2.0 * rd or rd > 2.0 * rp:
                scale = 1.0 / (1.0 - adapt) if rp > rd else 1.0 - adapt
                tau, sigma = tau * scale, sigma / scale
                adapt *= 0.95
                ub = u.copy()
        P, D, gap, oc1, oc2 = certificate(u, y)
        if opts.trace_gap:
            trace.append((k, gap))
        if np.isfinite(P) and P - P0 > 10.0 * max(abs(P0), 1.0):
            raise SolverDivergenceError(
                f"primal value {P:.3e} exceeds 10x the initial value {P0:.3e} at iteration {k}")
        m = merit(P, gap, oc1, oc2)
        if m < 0.99 * best_merit:
            last_progress = k
        if m < best_merit:
            best_merit = m
            best = (u.copy(), y.copy(), k, P, D, gap, oc1, oc2)
        if m <= 1.0:
            converged = True
            break
        if k - last_progress >= opts.stall_iters:
            if reductions == 0:
                reductions = 1
                tau *= 0.5
                sigma *= 0.5
                last_progress = k
                log.info("certificate stalled at iteration %d; halving steps", k)
            else:
                log.info("certificate stalled again at iteration %d; stopping", k)
                break
    u, y, kb, P, D, gap, oc1, oc2 = best
    if converged:
        kb = k
    return SolveResult(
        GridFunction(A.domain_grid, u), GridFunction(A.codomain_grid, dual_from_iterate(y, alpha)),
        P, D, gap, kb, oc1, oc2, converged, "primal_dual", trace)


def solve_em_kl(A: DiscreteOperator, f, ustar, alpha: float,
                opts: SolveOptions | None = None, u0=None) -> SolveResult:
    """Multiplicative majorize-minimize iteration for KL data and KL penalty.

    Minimizes ``KL(f, Au) + alpha KL(u, u*)``.  Each step minimizes the
    usual expectation-maximization surrogate of the data term plus the
    exact penalty; the per-node stationarity equation
    ``C - B/u + alpha ln(u/u*) = 0`` with ``C = A*1`` and
    ``B = u_k A*(f / A u_k)`` is solved with the Wright omega function.
    The dual variable is recovered with :func:`extract_dual_kl`.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    opts = opts or SolveOptions()
    fv = np.asarray(values_of(f, A.codomain_grid), dtype=float)
    us = np.asarray(values_of(ustar, A.domain_grid), dtype=float)
    if np.any(fv <= 0) or np.any(us <= 0):
        raise ValueError("f and u* must be strictly positive")
    if np.any(A.matrix < 0):
        raise ValueError("the multiplicative scheme needs a nonnegative kernel")
    Hf = kl_fidelity(GridFunction(A.codomain_grid, fv))
    R = kl_penalty(GridFunction(A.domain_grid, us))
    u = np.array(us if u0 is None else values_of(u0, A.domain_grid), dtype=float)
    if np.any(u <= 0):
        raise InfeasibleStartError("start must be strictly positive")
    C = A.rmatvec(np.ones(A.codomain_grid.size))
    P_prev = primal_value(A, Hf, R, alpha, u)
    trace = []
    best = None
    best_merit = np.inf
    converged = False
    k = 0
    while k < opts.max_iters:
        k += 1
        B = u * A.rmatvec(fv / A.matvec(u))
        u = B / (alpha * np.real(wrightomega((C + alpha * np.log(B / (alpha * us))) / alpha)))
        if not np.all(u > 0) or not np.all(np.isfinite(u)):
            raise SolverError("multiplicative iterate left the positive orthant")
        if k % 100 == 0:
            P = primal_value(A, Hf, R, alpha, u)
            if P > P_prev + 1e-12 * (1.0 + abs(P_prev)):
                raise SolverError(f"primal value increased at iteration {k}")
            P_prev = P
        if k % opts.check_every and k != opts.max_iters:
            continue
        p = extract_dual_kl(A, fv, u, alpha).values
        P = primal_value(A, Hf, R, alpha, u)
        D = dual_value(A, Hf, R, alpha, p)
        gap = P - D
        oc1, oc2 = check_optimality(A, Hf, R, alpha, u, p)
        if opts.trace_gap:
            trace.append((k, gap))
        m = max(abs(gap) / (opts.gap_tol * (1.0 + abs(P))), oc1 / opts.oc_tol, oc2 / opts.oc_tol)
        if m < best_merit:
            best_merit = m
            best = (u.copy(), p, k, P, D, gap, oc1, oc2)
        if m <= 1.0:
            converged = True
            break
    u, p, kb, P, D, gap, oc1, oc2 = best
    return SolveResult(
        GridFunction(A.domain_grid, u), GridFunction(A.codomain_grid, p),
        P, D, gap, kb, oc1, oc2, converged, "em_kl", trace)
