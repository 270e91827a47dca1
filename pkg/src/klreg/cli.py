"""Command line entry point ``klreg``.

Commands
--------
scenario  build and certify a scenario from a configuration file
sweep     run an alpha or delta sweep on a saved scenario
verify    evaluate expectations against sweep reports
plot      log-log SVG of a sweep report
check     run the conjugate/prox oracle suite

Exit codes: 0 success, 1 an expectation failed, 2 usage or configuration
error, 3 runtime degradation (more than half of the solves did not
converge).

Configuration files are JSON with the sections ``scenario``, ``noise``,
``solver``, ``sweep`` and ``expectations``; see the README for the schema.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (InsufficientDataError, RateReport, fit_loglog_slope, geometric,
                       records_to_csv, report_from_json, report_to_json, sweep_alpha,
                       sweep_delta, trace_to_csv)
from .operators import KERNELS
from .scenarios import (PRESETS, AdmissibilityError, ScenarioConstructionError,
                        build_scenario, load_scenario, save_scenario)
from .solvers import SolveOptions

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    """Configuration does not match the schema."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def scenario_block(cfg: dict) -> dict:
    """Resolved builder arguments of the ``scenario`` section."""
    block = cfg.get("scenario")
    if not isinstance(block, dict):
        raise ConfigError("missing 'scenario' section")
    block = dict(block)
    if "preset" in block:
        name = block.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        base = json.loads(json.dumps(PRESETS[name]))
        base.update(block)
        block = base
    if "builder" not in block:
        raise ConfigError("scenario section needs 'builder' or 'preset'")
    if "kernel" not in block:
        raise ConfigError("scenario section needs a 'kernel' id")
    if block["kernel"] not in KERNELS:
        raise ConfigError(f"unknown kernel id {block['kernel']!r}; known: {sorted(KERNELS)}")
    return block


def solver_options(cfg: dict, trace_gap: bool = False) -> SolveOptions:
    block = dict(cfg.get("solver", {}))
    known = {f.name for f in fields(SolveOptions)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"unknown solver keys {sorted(unknown)}")
    if trace_gap:
        block["trace_gap"] = True
    try:
        return SolveOptions(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver section: {exc}") from None


def _grid(spec, name):
    if isinstance(spec, dict) and "geometric" in spec:
        lo, hi, num = spec["geometric"]
        return geometric(lo, hi, num)
    if isinstance(spec, list) and spec and all(isinstance(x, (int, float)) for x in spec):
        return [float(x) for x in spec]
    raise ConfigError(f"sweep '{name}' must be a list or {{'geometric': [lo, hi, num]}}")


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _err(msg):
    print(f"klreg: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_scenario(args) -> int:
    cfg = load_config(args.config)
    block = scenario_block(cfg)
    noise = cfg.get("noise")
    try:
        scn = build_scenario(block)
    except ScenarioConstructionError as exc:
        _err(f"scenario construction failed: {exc}")
        return EXIT_FAIL
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario section: {exc}") from None
    if noise:
        deltas = _grid(noise["deltas"], "deltas") if "deltas" in noise \
            else [float(noise.get("delta", 0.0))]
        flo = scn.f.min()
        for d in deltas:
            if d >= flo / 2:
                _err(f"noise level delta={d:g} violates the positivity assumption on noisy "
                     f"data: need delta < f_lower/2 = {flo / 2:g}")
                return EXIT_USAGE
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = save_scenario(scn, out / f"{scn.scenario_id}.json")
    print(scn.summary())
    print(f"wrote {path}")
    return EXIT_OK


def _resolved_config(cfg, scn_path, opts, sweep, seed):
    return {"scenario_file": Path(scn_path).name, "solver": asdict(opts), "sweep": sweep,
            "seed": seed, "version": __version__}


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    try:
        scn = load_scenario(args.scenario)
    except (OSError, ValueError, KeyError) as exc:
        _err(f"cannot read scenario {args.scenario}: {exc}")
        return EXIT_USAGE
    opts = solver_options(cfg, args.trace_gap)
    sweep = dict(cfg.get("sweep", {}))
    kind = sweep.get("kind", "alpha")
    workers = args.threads
    seed = args.seed if args.seed is not None else int(sweep.get("seed", 0))
    if kind == "alpha":
        alphas = _grid(sweep.get("alphas", {"geometric": [1e-3, 3e-2, 12]}), "alphas")
        window = tuple(sweep.get("window", (1e-3, 3e-2)))
        resolved = {"kind": kind, "alphas": alphas, "window": list(window)}
        report = sweep_alpha(scn, alphas, opts, window, workers)
    elif kind == "delta":
        deltas = _grid(sweep.get("deltas", {"geometric": [1e-4, 1e-2, 8]}), "deltas")
        c = float(sweep.get("c", 0.5))
        nseeds = int(sweep.get("num_seeds", 8))
        seeds = [seed + k for k in range(nseeds)]
        window = sweep.get("window")
        resolved = {"kind": kind, "deltas": deltas, "c": c, "seeds": seeds, "window": window}
        try:
            report = sweep_delta(scn, deltas, c, seeds, opts, window, workers)
        except AdmissibilityError as exc:
            _err(str(exc))
            return EXIT_USAGE
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    config = _resolved_config(cfg, args.scenario, opts, resolved, seed)
    out = Path(args.out_dir)
    stem = f"{scn.scenario_id}_{kind}"
    _atomic_write(out / f"{stem}.csv", records_to_csv(report.records))
    _atomic_write(out / f"{stem}.json", report_to_json(report, config))
    if opts.trace_gap:
        _atomic_write(out / f"{stem}_trace.csv", trace_to_csv(report.records))
    bad = sum(1 for r in report.records if not r.converged)
    print(f"{stem}: {len(report.records)} records, slope {report.slope:.4f} "
          f"(r^2 {report.r_squared:.5f}), {bad} not converged")
    if bad > 0.5 * len(report.records):
        _err(f"{bad} of {len(report.records)} solves did not converge")
        return EXIT_RUNTIME
    return EXIT_OK


def _read_report(path) -> RateReport:
    try:
        return report_from_json(Path(path).read_text())[0]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed report {path}: {exc}") from None


def _evaluate(crit: dict, reports: dict):
    """``(passed, measured)`` for one expectation."""
    check = crit.get("check")
    try:
        rep = reports[crit["report"]]
    except KeyError:
        raise ConfigError(f"criterion {crit.get('name')!r}: report "
                          f"{crit.get('report')!r} not given") from None
    x = rep.extras
    if check == "slope_min":
        return rep.slope >= crit["value"], rep.slope
    if check == "slope_max":
        return rep.slope <= crit["value"], rep.slope
    if check == "slope_range":
        lo, hi = crit["value"]
        return lo <= rep.slope <= hi, rep.slope
    if check == "separation":
        other = reports.get(crit.get("other"))
        if other is None:
            raise ConfigError(f"criterion {crit.get('name')!r}: missing 'other' report")
        diff = other.slope - rep.slope
        return diff >= crit["value"], diff
    if check == "cubic_bound":
        v = x.get("K_violations")
        if v is None:
            raise ConfigError(f"criterion {crit.get('name')!r}: report has no cubic check")
        return len(v) == 0, len(v)
    if check == "noisy_bound":
        return x.get("bound_violations", 1) == 0 and x.get("min_bound_slack", -1) >= 0, \
            x.get("min_bound_slack")
    if check == "spearman_min":
        return x.get("spearman", -1) >= crit["value"], x.get("spearman")
    if check == "identity_max":
        vals = [r.identity_residual for r in rep.records if r.converged]
        worst = max(vals) if vals else math.inf
        return worst <= crit["value"], worst
    if check == "sc_margin_min":
        vals = [r.sc_margin for r in rep.records if r.converged and np.isfinite(r.sc_margin)]
        worst = min(vals) if vals else -math.inf
        return worst >= crit.get("value", 0.0), worst
    if check == "ref_bound":
        tol = crit.get("value", 1e-8)
        worst = max((r.d_r - r.d_r_ref) / (1.0 + abs(r.d_r_ref)) for r in rep.records
                    if r.converged)
        return worst <= tol, worst
    raise ConfigError(f"unknown check {check!r}")


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    exp = cfg.get("expectations")
    if not isinstance(exp, list) or not exp:
        raise ConfigError("config needs a non-empty 'expectations' list")
    reports = {}
    for path in args.reports:
        reports[Path(path).name] = _read_report(path)
    ok = True
    print(f"{'criterion':<28s} {'check':<14s} {'measured':>14s}  result")
    for crit in exp:
        passed, measured = _evaluate(crit, reports)
        ok &= bool(passed)
        m = f"{measured:.6g}" if isinstance(measured, (int, float)) else str(measured)
        print(f"{crit.get('name', '?'):<28s} {crit['check']:<14s} {m:>14s}  "
              f"{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# plotting
# --------------------------------------------------------------------------


def render_svg(report: RateReport, width: int = 480, height: int = 360) -> str:
    """Pure-text SVG log-log plot of a sweep report.

    Markers for the data (seed means for delta sweeps), the fitted line,
    and reference slopes 1, 4/3 and 2 through the first point.
    """
    if report.kind == "delta":
        pts = [(d, v) for d, v in report.extras.get("mean_d_r", [])]
    else:
        pts = [(r.alpha, r.d_r) for r in report.records]
    pts = [(x, y) for x, y in pts if x > 0 and y > 0 and np.isfinite(y)]
    if len(pts) < 2:
        raise ValueError("report needs at least two positive records to plot")
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    x0, x1 = math.floor(lx.min() * 2) / 2, math.ceil(lx.max() * 2) / 2
    y0, y1 = math.floor(ly.min() - 0.5), math.ceil(ly.max() + 0.5)
    ml, mr, mt, mb = 60, 20, 20, 45
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath>']
    for t in np.arange(math.ceil(x0), math.floor(x1) + 1):
        out.append(f'<line x1="{X(t):.2f}" y1="{mt + ph}" x2="{X(t):.2f}" y2="{mt + ph + 4}" '
                   f'stroke="black"/><text x="{X(t):.2f}" y="{mt + ph + 16}" '
                   f'text-anchor="middle">{int(t)}</text>')
    for t in range(int(y0), int(y1) + 1):
        out.append(f'<line x1="{ml - 4}" y1="{Y(t):.2f}" x2="{ml}" y2="{Y(t):.2f}" '
                   f'stroke="black"/><text x="{ml - 7}" y="{Y(t) + 4:.2f}" '
                   f'text-anchor="end">{t}</text>')
    label = "log10 delta" if report.kind == "delta" else "log10 alpha"
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{label}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2:.1f})">log10 D_R</text>')

    def seg(slope, icpt, color, dash, name):
        ya, yb = slope * x0 + icpt, slope * x1 + icpt
        d = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<line class="{name}" x1="{X(x0):.2f}" y1="{Y(ya):.2f}" x2="{X(x1):.2f}" '
                f'y2="{Y(yb):.2f}" stroke="{color}"{d} clip-path="url(#plot)"/>')

    try:
        s, c, _, _ = fit_loglog_slope(pts, None, min_points=2)
        fit = (s, c / math.log(10))
    except InsufficientDataError:
        fit = (float("nan"), 0.0)
    out.append(seg(fit[0], fit[1], "black", "", "fit"))
    for slope, color in ((1.0, "#1f77b4"), (4.0 / 3.0, "#2ca02c"), (2.0, "#d62728")):
        out.append(seg(slope, ly[0] - slope * lx[0], color, "4 3", "reference"))
    for a, b in zip(lx, ly):
        out.append(f'<circle class="marker" cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3" fill="black"/>')
    out.append(f'<text x="{ml + 6}" y="{mt + 14}">slope {fit[0]:.3f}; reference 1, 4/3, 2</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    report = _read_report(args.report)
    try:
        svg = render_svg(report)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = Path(args.out_dir) / (Path(args.report).stem + ".svg")
    _atomic_write(out, svg)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .oracle import run_catalog_oracles
    results = run_catalog_oracles(cases=args.cases, seed=args.seed or 0)
    print(f"{'entry':<26s} {'conj err':>10s} {'prox err':>10s}  result")
    for r in results:
        print(f"{r.entry:<26s} {r.conj_error:10.2e} {r.prox_error:10.2e}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="base noise seed")
    common.add_argument("--threads", type=int, default=None, help="worker processes")
    common.add_argument("--trace-gap", action="store_true", help="record duality gaps")

    p = argparse.ArgumentParser(prog="klreg", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"klreg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("scenario", parents=[common], help="build and certify a scenario")
    s = sub.add_parser("sweep", parents=[common], help="run a sweep on a scenario file")
    s.add_argument("scenario", help="scenario JSON written by 'klreg scenario'")
    v = sub.add_parser("verify", parents=[common], help="check expectations on reports")
    v.add_argument("reports", nargs="+")
    pl = sub.add_parser("plot", parents=[common], help="SVG of a sweep report")
    pl.add_argument("report")
    c = sub.add_parser("check", parents=[common], help="run the oracle suite")
    c.add_argument("--cases", type=int, default=100)
    return p


_COMMANDS = {"scenario": cmd_scenario, "sweep": cmd_sweep, "verify": cmd_verify,
             "plot": cmd_plot, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command in ("scenario", "sweep", "verify") and not args.config:
        _err(f"'{args.command}' needs --config")
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
