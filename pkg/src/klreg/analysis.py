"""Error measurement, parameter sweeps and direct checks of the error theory.

The central quantity is the Bregman error

    d_r = D_R(u_alpha, u_dagger)   with subgradient  xi_dagger = A* p_dagger,

compared with the reference term ``D_R(u_dagger - alpha v_dagger, u_dagger)``.
Sweeps over ``alpha`` (exact data) or ``delta`` (noisy data with
``alpha = c delta^(2/3)``) produce :class:`RateReport` objects whose
log-log slopes are the observed convergence rates.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .bregman import bregman, symmetric_bregman
from .grid import GridFunction
from .scenarios import AdmissibilityError, Scenario, generate_noisy_data
from .solvers import SolveOptions, SolveResult, extract_dual_kl, solve_primal_dual

__all__ = [
    "ErrorRecord",
    "RateReport",
    "InsufficientDataError",
    "measure_error",
    "sweep_alpha",
    "sweep_delta",
    "verify_identity",
    "verify_strong_convexity_bound",
    "verify_noisy_bound",
    "noisy_bound_terms",
    "explicit_cubic_constant",
    "calibrate_cubic_constant",
    "trace_to_csv",
    "vsc_singular_profile",
    "check_cubic_bound",
    "vsc_probe",
    "fit_loglog_slope",
    "geometric",
    "records_to_csv",
    "report_to_json",
    "config_hash",
    "CSV_FIELDS",
]

CSV_FIELDS = ("scenario_id", "alpha", "delta", "seed", "d_r", "d_r_ref", "gap",
              "m_measured", "identity_residual", "bound_slack", "iters", "converged")


class InsufficientDataError(ValueError):
    """Fewer than five usable points for a slope fit."""


@dataclass
class ErrorRecord:
    """One solve and the quantities measured on it.

    ``bound_rhs`` is the right side of the noisy-data estimate (only the
    exact-data terms when ``delta == 0``); ``nan`` for fidelities where
    the KL-specific checks do not apply.
    """

    alpha: float
    delta: float
    d_r: float
    d_r_ref: float
    gap: float
    m_measured: float
    identity_residual: float
    bound_rhs: float
    seed: int = 0
    iters: int = 0
    converged: bool = True
    bound_slack: float = math.nan
    sc_margin: float = math.nan
    scenario_id: str = ""
    trace: list = field(default_factory=list, repr=False, compare=False)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class RateReport:
    """Records of a sweep and the fitted log-log slope.

    ``slope`` is ``nan`` when fewer than five records are usable; the
    reason is in ``extras["fit_error"]``.
    """

    records: list
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    scenario_ref: str
    kind: str = "alpha"
    excluded: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        for r in d["records"]:
            r.pop("trace")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RateReport:
        d = dict(d)
        d["records"] = [ErrorRecord(**{k: v for k, v in r.items() if k != "trace"})
                        for r in d["records"]]
        d["window"] = tuple(d["window"])
        return cls(**d)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def geometric(lo: float, hi: float, num: int) -> list:
    """``num`` geometrically spaced values from ``lo`` to ``hi`` inclusive."""
    return [float(x) for x in np.geomspace(lo, hi, int(num))]


def fit_loglog_slope(points, window=None, min_points: int = 5):
    """Least-squares line through ``(ln x, ln y)``.

    Parameters
    ----------
    points : sequence of (x, y)
    window : (lo, hi), optional
        Inclusive bounds on ``x``.
    min_points : int

    Returns
    -------
    slope, intercept, r_squared : float
    excluded : int
        Points inside the window dropped for a non-positive or non-finite ``y``.

    Raises
    ------
    InsufficientDataError
    """
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if window is not None:
        lo, hi = window
        inside = (x >= lo * (1 - 1e-12)) & (x <= hi * (1 + 1e-12))
        x, y = x[inside], y[inside]
    good = np.isfinite(y) & (y > 0) & np.isfinite(x) & (x > 0)
    excluded = int((~good).sum())
    x, y = x[good], y[good]
    if x.size < min_points:
        raise InsufficientDataError(f"{x.size} usable points, need {min_points}")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), r2, excluded


# --------------------------------------------------------------------------
# single records
# --------------------------------------------------------------------------


def _cw(scn):
    return scn.A.codomain_grid.weights


def _dot(w, a, b):
    return float(np.dot(w, a * b))


def _is_kl(scn):
    return scn.fidelity == "kl"


def _solve(scn: Scenario, alpha, data, opts):
    H = scn.fidelity_functional(data)
    R = scn.penalty_functional()
    return solve_primal_dual(scn.A, H, R, alpha, opts, u0=scn.start(data))


def _dual(scn, data, res: SolveResult, alpha):
    if _is_kl(scn):
        return extract_dual_kl(scn.A, data, res.u_alpha, alpha).values
    return res.p_alpha.values


def _measured_m(scn, Au, data):
    return float(min(np.min(Au), np.min(data), scn.f.min()))


def _conj_sym_bregman(H, a, b, w):
    """Symmetric Bregman distance of ``H*`` between ``a`` and ``b`` (sum form)."""
    ha, hb = H.conj(a), H.conj(b)
    ga, gb = np.asarray(H.conj_subgrad(a)), np.asarray(H.conj_subgrad(b))
    return (ha - hb - _dot(w, gb, a - b)) + (hb - ha - _dot(w, ga, b - a))


def _admissible_alpha(p, lo=0.0):
    """Largest alpha keeping ``1 + alpha p > lo`` pointwise."""
    neg = p < 0
    if not np.any(neg):
        return math.inf
    return float((1.0 - lo) / np.max(-p[neg]))


def _identity(scn, alpha, data, u, p):
    A = scn.A
    w = _cw(scn)
    pd = scn.p_dagger.values
    one = 1.0 + alpha * pd
    if np.any(one <= 0):
        raise AdmissibilityError(
            f"1 + alpha p_dagger not positive; need alpha < {_admissible_alpha(pd):.6g}")
    R = scn.penalty_functional()
    H = scn.fidelity_functional(data)
    xi_a = np.asarray(R.subgrad(u))
    xi_d = A.rmatvec(pd)
    lhs = symmetric_bregman(R, u, scn.u_dagger.values, xi_a, xi_d, check=False)
    lhs += _conj_sym_bregman(H, -alpha * p, -alpha * pd, w) / alpha
    zeta = data / one
    # A u_dagger = f is the exact data even when the solve used f_delta
    rhs = _dot(w, scn.f.values, pd - p) + _dot(w, zeta, p - pd)
    return abs(lhs - rhs) / (1.0 + abs(lhs) + abs(rhs))


def verify_identity(scn: Scenario, alpha: float, delta: float = 0.0, seed: int = 0,
                    opts: SolveOptions | None = None, u=None) -> float:
    """Relative residual of the symmetric Bregman identity at a KL solution.

    The left side is the symmetric Bregman distance of ``R`` between
    ``u_alpha`` and ``u_dagger`` (with the subgradient of ``R`` evaluated
    at ``u_alpha``) plus ``1/alpha`` times that of the fidelity conjugate
    between ``-alpha p_alpha`` and ``-alpha p_dagger``.  The right side is
    ``<f, p_dagger - p_alpha> + <zeta, p_alpha - p_dagger>`` with
    ``zeta = f / (1 + alpha p_dagger)``.  With noisy data ``f_delta``
    enters the fidelity conjugate, ``p_alpha`` and ``zeta``; the first
    pairing keeps the exact ``f = A u_dagger``.

    Parameters
    ----------
    u : array_like, optional
        Use this iterate instead of solving (sensitivity probes).

    Raises
    ------
    AdmissibilityError
        If ``1 + alpha p_dagger`` is not positive.
    """
    if not _is_kl(scn):
        raise ValueError("the identity is stated for the KL fidelity")
    data = _data(scn, delta, seed)
    if u is None:
        u = _solve(scn, alpha, data, opts).u_alpha.values
    u = np.asarray(getattr(u, "values", u), dtype=float)
    p = extract_dual_kl(scn.A, data, u, alpha).values
    return _identity(scn, alpha, data, u, p)


def _sc_margin(scn, alpha, data, u, p, m):
    pd = scn.p_dagger.values
    for name, q in (("p_dagger", pd), ("p_alpha", p)):
        s = alpha * q
        if np.any(s <= -0.5) or np.any(s >= 0.5):
            bound = 0.5 / max(np.max(np.abs(q)), 1e-300)
            raise AdmissibilityError(
                f"1 + alpha {name} leaves (1/2, 3/2); need alpha < {bound:.6g}")
    w = _cw(scn)
    H = scn.fidelity_functional(data)
    lhs = _conj_sym_bregman(H, -alpha * p, -alpha * pd, w)
    gamma = 2.0 * m / 3.0
    diff = alpha * (p - pd)
    return lhs - gamma * _dot(w, diff, diff), lhs


def verify_strong_convexity_bound(scn: Scenario, alpha: float, u, data=None,
                                  m: float | None = None) -> float:
    """Margin of ``D^s_{H*}(-alpha p_alpha, -alpha p_dagger) >= gamma ||alpha(p_alpha - p_dagger)||^2``.

    ``gamma = 2 m / 3`` with ``m = min(min A u_alpha, min data, min f)``
    unless given.  Returns the margin (left minus right side).

    Raises
    ------
    AdmissibilityError
        ``1 + alpha p`` outside ``(1/2, 3/2)`` for ``p_dagger`` or
        ``p_alpha``; the message gives the threshold on ``alpha``.
    """
    data = scn.f.values if data is None else np.asarray(getattr(data, "values", data))
    u = np.asarray(getattr(u, "values", u), dtype=float)
    Au = scn.A.matvec(u)
    p = extract_dual_kl(scn.A, data, u, alpha).values
    m = _measured_m(scn, Au, data) if m is None else m
    return _sc_margin(scn, alpha, data, u, p, m)[0]


def noisy_bound_terms(scn: Scenario, alpha: float, delta: float, m: float) -> dict:
    """The four constant terms of the noisy-data estimate, with ``gamma = 2 m / 3``."""
    w = _cw(scn)
    pd = scn.p_dagger.values
    f = scn.f.values
    gamma = 2.0 * m / 3.0
    mu = scn.A.codomain_grid.measure
    return {
        "noise": delta ** 2 / alpha * mu / gamma,
        "noise_dual": alpha * delta ** 2 * _dot(w, pd, pd) / gamma,
        "cubic": alpha ** 3 * _dot(w, f * pd ** 2, f * pd ** 2) / gamma,
        "cubic_noise": alpha ** 3 * delta ** 2 * _dot(w, pd ** 2, pd ** 2) / gamma,
    }


def verify_noisy_bound(scn: Scenario, record: ErrorRecord) -> float:
    """Slack ``RHS - d_r`` of the noisy-data estimate for a record."""
    terms = noisy_bound_terms(scn, record.alpha, record.delta, record.m_measured)
    return record.d_r_ref + sum(terms.values()) - record.d_r


def explicit_cubic_constant(scn: Scenario, m: float | None = None) -> float:
    """``||f p_dagger^2||^2 / (4 gamma)``, the cubic constant from the proof."""
    w = _cw(scn)
    m = scn.f.min() if m is None else m
    g = scn.f.values * scn.p_dagger.values ** 2
    return _dot(w, g, g) / (4.0 * 2.0 * m / 3.0)


def _data(scn, delta, seed):
    if delta > 0:
        return generate_noisy_data(scn.f, delta, seed).values
    return scn.f.values


def measure_error(scn: Scenario, alpha: float, delta: float = 0.0, seed: int = 0,
                  opts: SolveOptions | None = None) -> ErrorRecord:
    """Solve at ``(alpha, delta, seed)`` and measure errors and checks.

    ``d_r_ref`` is ``+inf`` when ``u_dagger - alpha v_dagger`` leaves the
    domain of the penalty and ``nan`` without a source element.  For the
    KL fidelity the identity residual, strong-convexity margin and
    noisy-bound slack are filled in when ``1 + alpha p_dagger`` stays in
    ``(1/2, 3/2)``; otherwise they are ``nan``.
    """
    data = _data(scn, delta, seed)
    res = _solve(scn, alpha, data, opts)
    R = scn.penalty_functional()
    u = res.u_alpha.values
    ud = scn.u_dagger.values
    xi_d = scn.A.rmatvec(scn.p_dagger.values)
    d_r = bregman(R, u, ud, xi_d)
    if scn.v_dagger is not None:
        d_r_ref = bregman(R, ud - alpha * scn.v_dagger.values, ud, xi_d)
    else:
        d_r_ref = math.nan
    Au = scn.A.matvec(u)
    m = _measured_m(scn, Au, data)
    rec = ErrorRecord(alpha=float(alpha), delta=float(delta), d_r=float(d_r),
                      d_r_ref=float(d_r_ref), gap=float(res.gap), m_measured=m,
                      identity_residual=math.nan, bound_rhs=math.nan, seed=int(seed),
                      iters=int(res.iters), converged=bool(res.converged),
                      scenario_id=scn.scenario_id, trace=list(res.trace))
    if _is_kl(scn) and np.all(Au > 0):
        p = _dual(scn, data, res, alpha)
        try:
            rec.identity_residual = _identity(scn, alpha, data, u, p)
            rec.sc_margin = float(_sc_margin(scn, alpha, data, u, p, m)[0])
        except AdmissibilityError:
            pass
        if np.isfinite(d_r_ref):
            terms = noisy_bound_terms(scn, alpha, delta, m)
            rec.bound_rhs = float(d_r_ref + sum(terms.values()))
            rec.bound_slack = float(rec.bound_rhs - d_r)
    return rec


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


def _measure_job(args):
    scn, alpha, delta, seed, opts = args
    return measure_error(scn, alpha, delta, seed, opts)


def _run_jobs(scn, jobs, opts, workers):
    args = [(scn, a, d, s, opts) for (a, d, s) in jobs]
    if workers and workers > 1 and scn.fidelity != "general":
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_measure_job, args))
    else:
        out = [_measure_job(a) for a in args]
    return sorted(out, key=lambda r: (r.delta, r.alpha, r.seed))


def calibrate_cubic_constant(records) -> float:
    """``K`` from the two smallest ``alpha``: ``max(0, (d_r - d_r_ref) / alpha^3)``."""
    usable = sorted((r for r in records if r.converged and np.isfinite(r.d_r_ref)),
                    key=lambda r: r.alpha)[:2]
    if len(usable) < 2:
        return math.nan
    return max(0.0, max((r.d_r - r.d_r_ref) / r.alpha ** 3 for r in usable))


def check_cubic_bound(records, K: float, slack: float = 0.05) -> list:
    """Records violating ``d_r <= (1 + slack) (d_r_ref + K alpha^3)``."""
    bad = []
    for r in records:
        if not (r.converged and np.isfinite(r.d_r_ref)):
            continue
        if r.d_r > (1.0 + slack) * (r.d_r_ref + K * r.alpha ** 3) + 1e-300:
            bad.append(r)
    return bad


def sweep_alpha(scn: Scenario, alphas: Sequence[float], opts: SolveOptions | None = None,
                window=(1e-3, 3e-2), workers: int | None = None) -> RateReport:
    """Exact-data sweep over ``alphas`` with a slope fit inside ``window``.

    ``extras`` holds the fit of the ``d_r_ref`` column, the calibrated
    cubic constant ``K`` with any violations, and the explicit constant
    from the proof with the minimal slack it leaves.
    """
    recs = _run_jobs(scn, [(float(a), 0.0, 0) for a in alphas], opts, workers)
    good = [r for r in recs if r.converged]
    extras = {"nonconverged": len(recs) - len(good)}
    try:
        slope, icpt, r2, exc = fit_loglog_slope([(r.alpha, r.d_r) for r in good], window)
    except InsufficientDataError as e:
        slope = icpt = r2 = math.nan
        exc = 0
        extras["fit_error"] = str(e)
    try:
        extras["slope_ref"] = fit_loglog_slope(
            [(r.alpha, r.d_r_ref) for r in good], window)[0]
    except InsufficientDataError:
        extras["slope_ref"] = math.nan
    if scn.v_dagger is not None:
        K = calibrate_cubic_constant(good)
        extras["K"] = K
        extras["K_violations"] = [r.alpha for r in check_cubic_bound(good, K)]
        if _is_kl(scn):
            Ke = explicit_cubic_constant(scn, min(r.m_measured for r in good) if good else None)
            extras["K_explicit"] = Ke
            extras["explicit_min_slack"] = min(
                (r.d_r_ref + Ke * r.alpha ** 3 - r.d_r for r in good
                 if np.isfinite(r.d_r_ref)), default=math.nan)
        extras["infinite_ref"] = sum(1 for r in good if r.d_r_ref == math.inf)
    return RateReport(recs, slope, icpt, r2, tuple(window), scn.scenario_id, "alpha",
                      exc + extras["nonconverged"], extras)


def sweep_delta(scn: Scenario, deltas: Sequence[float], c: float, seeds: Sequence[int],
                opts: SolveOptions | None = None, window=None,
                workers: int | None = None) -> RateReport:
    """Noisy sweep with ``alpha = c delta^(2/3)``; slope of the seed-mean ``d_r``.

    Raises
    ------
    AdmissibilityError
        If any ``delta >= f_lower / 2``.
    """
    flo = scn.f.min()
    for d in deltas:
        if d >= flo / 2:
            raise AdmissibilityError(f"delta={d:g} >= f_lower/2={flo / 2:g}")
    jobs = [(c * float(d) ** (2.0 / 3.0), float(d), int(s)) for d in deltas for s in seeds]
    recs = _run_jobs(scn, jobs, opts, workers)
    good = [r for r in recs if r.converged]
    means = []
    for d in sorted(set(float(x) for x in deltas)):
        vals = [r.d_r for r in good if r.delta == d]
        if vals:
            means.append((d, float(np.mean(vals))))
    window = (min(deltas), max(deltas)) if window is None else tuple(window)
    extras = {"nonconverged": len(recs) - len(good), "c": c,
              "mean_d_r": [[d, v] for d, v in means]}
    try:
        slope, icpt, r2, exc = fit_loglog_slope(means, window)
    except InsufficientDataError as e:
        slope = icpt = r2 = math.nan
        exc = 0
        extras["fit_error"] = str(e)
    if len(means) >= 2:
        extras["spearman"] = float(spearmanr([d for d, _ in means], [v for _, v in means])[0])
    slacks = [r.bound_slack for r in good if np.isfinite(r.bound_slack)]
    extras["min_bound_slack"] = min(slacks) if slacks else math.nan
    extras["bound_violations"] = sum(1 for s in slacks if s < 0)
    return RateReport(recs, slope, icpt, r2, window, scn.scenario_id, "delta",
                      exc + extras["nonconverged"], extras)


# --------------------------------------------------------------------------
# variational source condition probe
# --------------------------------------------------------------------------


def vsc_probe(scn: Scenario, num_probes: int = 20, seed: int = 0,
              eps=(1e-3, 1e-2, 1e-1)) -> dict:
    """Smallest ``c`` with ``int f p_dagger (p_dagger - p) <= c sqrt(D_{R*}(A*p, A*p_dagger))``.

    Probes ``p = p_dagger + eps d`` for ``num_probes`` random directions
    ``d`` (unit weighted L2 norm, the same directions at every ``eps``)
    plus the direction of ``-f p_dagger``.  The Bregman distance of the
    penalty conjugate uses the subgradient ``u_dagger``.

    Returns
    -------
    dict
        ``min_c`` per ``eps``, the ratio ``max/min`` across scales and the
        number of skipped probes (infinite conjugate values).
    """
    A = scn.A
    w = _cw(scn)
    R = scn.penalty_functional()
    pd = scn.p_dagger.values
    f = scn.f.values
    xi_d = A.rmatvec(pd)
    ud = scn.u_dagger.values
    Rs0 = R.conj(xi_d)
    wd = A.domain_grid.weights
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(pd.size) for _ in range(num_probes)]
    fp = f * pd
    if np.any(fp != 0):
        dirs.append(-fp)
    dirs = [d / math.sqrt(_dot(w, d, d)) for d in dirs]
    out, skipped = {}, 0
    for e in eps:
        worst = 0.0
        for d in dirs:
            p = pd + e * d
            xi = A.rmatvec(p)
            Rs = R.conj(xi)
            if not np.isfinite(Rs):
                skipped += 1
                continue
            t = Rs - Rs0 - float(np.dot(wd, ud * (xi - xi_d)))
            lhs = _dot(w, fp, pd - p)
            if lhs <= 0:
                continue
            worst = max(worst, lhs / math.sqrt(max(t, 1e-300)))
        out[float(e)] = worst
    vals = [v for v in out.values() if v > 0]
    spread = max(vals) / min(vals) if vals else 1.0
    return {"min_c": out, "spread": spread, "skipped": skipped,
            "probes": len(dirs), "bounded": spread <= 2.0}


def vsc_singular_profile(scn: Scenario, num: int = 32, eps: float = 1e-2,
                         rcond: float = 1e-10) -> np.ndarray:
    """Ratio of the variational inequality along the left singular vectors of ``A``.

    For each singular pair ``(sigma_k, d_k)`` of ``A`` with
    ``sigma_k >= rcond * sigma_0`` (at most ``num`` of them; ``d_k``
    orthonormal in the weighted data space and signed so that the left
    side is nonnegative) the probe is ``p = p_dagger - (eps / sigma_k) d_k``,
    which moves ``A* p`` by ``eps`` in norm, and the returned value is
    ``int f p_dagger (p_dagger - p) / sqrt(D_{R*}(A*p, A*p_dagger))``.

    Random directions cannot separate the conditions when ``R*`` is
    quadratic, because the ratio is then independent of the probe scale.
    Along singular directions it stays bounded under the range condition
    and grows like ``1 / sigma_k`` without it.
    """
    A = scn.A
    w = _cw(scn)
    wd = A.domain_grid.weights
    U, sv, _ = np.linalg.svd(A.scaled_matrix, full_matrices=False)
    keep = min(num, int(np.sum(sv >= rcond * sv[0])))
    R = scn.penalty_functional()
    pd = scn.p_dagger.values
    fp = scn.f.values * pd
    xi_d = A.rmatvec(pd)
    ud = scn.u_dagger.values
    Rs0 = R.conj(xi_d)
    out = []
    for k in range(keep):
        d = U[:, k] / np.sqrt(w)
        if _dot(w, fp, d) < 0:
            d = -d
        p = pd - (eps / sv[k]) * d
        xi = A.rmatvec(p)
        t = R.conj(xi) - Rs0 - float(np.dot(wd, ud * (xi - xi_d)))
        out.append(_dot(w, fp, pd - p) / math.sqrt(max(t, 1e-300)))
    return np.array(out)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def trace_to_csv(records) -> str:
    """Per-check duality gaps of every record (empty unless traced)."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("alpha", "delta", "seed", "iteration", "gap"))
    for r in records:
        for k, gap in r.trace:
            wr.writerow([_fmt(r.alpha), _fmt(r.delta), _fmt(r.seed), _fmt(int(k)), _fmt(gap)])
    return buf.getvalue()


def records_to_csv(records) -> str:
    """CSV text with the columns of :data:`CSV_FIELDS` (floats in ``repr`` form)."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_FIELDS)
    for r in records:
        row = r.row()
        wr.writerow([_fmt(row[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    text = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def report_to_json(report: RateReport, config: dict | None = None) -> str:
    """JSON text embedding the report, the configuration and its hash.

    Non-finite floats are written as the strings ``"nan"``, ``"inf"``.
    """
    doc = {"report": _clean(report.to_dict())}
    if config is not None:
        doc["config"] = _clean(config)
        doc["config_hash"] = config_hash(config)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _unclean(x):
    if isinstance(x, dict):
        return {k: _unclean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_unclean(v) for v in x]
    if x in ("nan", "inf", "-inf"):
        return float(x)
    return x


def report_from_json(text: str) -> tuple:
    """Inverse of :func:`report_to_json`; returns ``(report, config)``."""
    doc = _unclean(json.loads(text))
    return RateReport.from_dict(doc["report"]), doc.get("config")


__all__.append("report_from_json")
