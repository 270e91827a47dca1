import json
import re

import pytest

from klreg.cli import EXIT_FAIL, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

SOLVER = {"gap_tol": 1e-10, "oc_tol": 1e-11}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _scenario(tmp_path, block, noise=None, name="cfg.json"):
    cfg = {"scenario": block, "solver": SOLVER}
    if noise is not None:
        cfg["noise"] = noise
    return _write(tmp_path / name, cfg)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    """Scenario file of the SC3 preset at n = 32 and an alpha-sweep config."""
    d = tmp_path_factory.mktemp("cli")
    cfg = _write(d / "scn.json", {"scenario": {"preset": "sc3_kl", "n": 32}})
    assert main(["scenario", "--config", cfg, "--out-dir", str(d)]) == EXIT_OK
    sweep = _write(d / "sweep.json", {
        "solver": SOLVER,
        "sweep": {"kind": "alpha", "alphas": {"geometric": [1e-3, 3e-2, 12]},
                  "window": [1e-3, 3e-2]}})
    return d, d / "sc3_kl.json", sweep


def test_scenario_command(built, capsys):
    d, scn, _ = built
    assert scn.exists() and scn.with_suffix(".bin").exists()


def test_scenario_prints_certificates(tmp_path, capsys):
    cfg = _scenario(tmp_path, {"preset": "sc3_kl", "n": 16})
    assert main(["scenario", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "range_residual" in out and "sc_subgrad_residual" in out


def test_scenario_noise_too_large(tmp_path, capsys):
    cfg = _scenario(tmp_path, {"preset": "sc3_kl", "n": 16}, noise={"delta": 10.0})
    assert main(["scenario", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert "positivity" in capsys.readouterr().err


def test_scenario_missing_kernel(tmp_path, capsys):
    cfg = _scenario(tmp_path, {"builder": "sc3", "v_dagger": 1.0, "n": 16})
    assert main(["scenario", "--config", cfg]) == EXIT_USAGE
    assert "kernel" in capsys.readouterr().err


def test_scenario_construction_failure(tmp_path, capsys):
    cfg = _scenario(tmp_path, {"builder": "sc3", "kernel": "gaussian", "n": 64,
                               "kernel_params": {"amp": 1.0, "width": 0.02, "floor": 0.1},
                               "p_dagger": {"name": "sine", "amp": 0.3, "freq": 1.0}})
    assert main(["scenario", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_FAIL
    assert "construction failed" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["scenario"]) == EXIT_USAGE
    assert main(["scenario", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["scenario", "--config", str(tmp_path / "bad.json")]) == EXIT_USAGE
    cfg = _write(tmp_path / "s.json", {"solver": {"bogus": 1}})
    assert main(["sweep", "--config", cfg, str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_sweep_rows_and_determinism(built, tmp_path):
    d, scn, sweep = built
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", sweep, "--out-dir", str(out1), str(scn)]) == EXIT_OK
    assert main(["sweep", "--config", sweep, "--out-dir", str(out2), "--threads", "2",
                 str(scn)]) == EXIT_OK
    csv1 = (out1 / "sc3_kl_alpha.csv").read_bytes()
    assert len(csv1.decode().splitlines()) == 13
    assert csv1 == (out2 / "sc3_kl_alpha.csv").read_bytes()
    j1 = (out1 / "sc3_kl_alpha.json").read_bytes()
    assert j1 == (out2 / "sc3_kl_alpha.json").read_bytes()
    doc = json.loads(j1)
    assert len(doc["config_hash"]) == 64
    assert doc["config"]["solver"]["max_iters"] == 200000


def test_trace_gap_flag(built, tmp_path):
    _, scn, _ = built
    sweep = _write(tmp_path / "sw.json", {"solver": SOLVER,
                                          "sweep": {"kind": "alpha", "alphas": [1e-2, 2e-2]}})
    assert main(["sweep", "--config", sweep, "--out-dir", str(tmp_path), "--trace-gap",
                 str(scn)]) == EXIT_OK
    lines = (tmp_path / "sc3_kl_alpha_trace.csv").read_text().splitlines()
    assert lines[0] == "alpha,delta,seed,iteration,gap" and len(lines) > 3


def test_noisy_sweep_rows(built, tmp_path):
    _, scn, _ = built
    sweep = _write(tmp_path / "noisy.json", {
        "solver": SOLVER,
        "sweep": {"kind": "delta", "deltas": {"geometric": [1e-4, 1e-2, 8]}, "c": 0.5,
                  "num_seeds": 8, "seed": 0}})
    assert main(["sweep", "--config", sweep, "--out-dir", str(tmp_path), "--threads", "4",
                 str(scn)]) == EXIT_OK
    assert len((tmp_path / "sc3_kl_delta.csv").read_text().splitlines()) == 65
    extras = json.loads((tmp_path / "sc3_kl_delta.json").read_text())["report"]["extras"]
    assert len(extras["mean_d_r"]) == 8 and "spearman" in extras


def test_sweep_runtime_degradation(built, tmp_path, capsys):
    _, scn, _ = built
    sweep = _write(tmp_path / "short.json", {
        "solver": {"max_iters": 5}, "sweep": {"kind": "alpha", "alphas": [1e-3, 1e-2]}})
    assert main(["sweep", "--config", sweep, "--out-dir", str(tmp_path), str(scn)]) \
        == EXIT_RUNTIME


@pytest.fixture(scope="module")
def alpha_report(built):
    d, scn, sweep = built
    assert main(["sweep", "--config", sweep, "--out-dir", str(d), str(scn)]) == EXIT_OK
    return d / "sc3_kl_alpha.json"


def test_verify_pass_and_fail(alpha_report, tmp_path, capsys):
    good = _write(tmp_path / "e1.json", {"expectations": [
        {"name": "exact_rate", "report": "sc3_kl_alpha.json", "check": "slope_min",
         "value": 1.85},
        {"name": "cubic", "report": "sc3_kl_alpha.json", "check": "cubic_bound"}]})
    assert main(["verify", "--config", good, str(alpha_report)]) == EXIT_OK
    bad = _write(tmp_path / "e2.json", {"expectations": [
        {"name": "too_fast", "report": "sc3_kl_alpha.json", "check": "slope_min",
         "value": 2.5}]})
    capsys.readouterr()
    assert main(["verify", "--config", bad, str(alpha_report)]) == EXIT_FAIL
    assert re.search(r"too_fast .* FAIL", capsys.readouterr().out)


def test_verify_missing_input(alpha_report, tmp_path):
    cfg = _write(tmp_path / "e.json", {"expectations": [
        {"name": "x", "report": "other_alpha.json", "check": "slope_min", "value": 1.0}]})
    assert main(["verify", "--config", cfg, str(alpha_report)]) == EXIT_USAGE
    (tmp_path / "junk.json").write_text("[]")
    cfg = _write(tmp_path / "e3.json", {"expectations": [
        {"name": "x", "report": "junk.json", "check": "slope_min", "value": 1.0}]})
    assert main(["verify", "--config", cfg, str(tmp_path / "junk.json")]) == EXIT_USAGE


def test_plot(alpha_report, tmp_path):
    assert main(["plot", "--out-dir", str(tmp_path), str(alpha_report)]) == EXIT_OK
    svg = (tmp_path / "sc3_kl_alpha.svg").read_text()
    assert svg.count('class="marker"') == 12
    assert svg.count('class="fit"') + svg.count('class="reference"') == 4
    assert "log10 alpha" in svg
    out2 = tmp_path / "again"
    assert main(["plot", "--out-dir", str(out2), str(alpha_report)]) == EXIT_OK
    assert (out2 / "sc3_kl_alpha.svg").read_bytes() == svg.encode()


def test_check_command(capsys):
    assert main(["check", "--cases", "5"]) == EXIT_OK
    assert "kl_penalty" in capsys.readouterr().out
