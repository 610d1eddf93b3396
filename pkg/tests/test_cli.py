import csv
import json
import math

import pytest

from liyau_lab.cli import (
    CHECKS,
    STEADY_SEEDS,
    CheckResult,
    ConfigError,
    RunReport,
    bundled_config,
    config_from_dict,
    dump_config,
    load_config,
    main,
    parse_config,
    report_render,
    run,
)
from liyau_lab.exponents import star_exponent

SMALL_FLOW = {
    "manifold": {"kind": "flat_torus", "dimension": 1, "n": 64},
    "initial": "1 + 0.3*sin(x)",
    "flow": {"reaction": "power_positive", "p": 2, "dt": 1e-3, "t_end": 0.05},
    "checks": ["feasibility", "scaling_symmetry", "inequality_3_11", "identity_3_2"],
    "random_seed": 3,
}


def write_cfg(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def test_config_round_trip():
    for name in ("torus_blowup", "harnack_1d", "linear_trend_2d", "steady_circle"):
        cfg = load_config(bundled_config(name))
        again = parse_config(dump_config(cfg))
        assert again == cfg
        assert parse_config(dump_config(again)) == cfg


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError):
        config_from_dict({"manifold": {"kind": "klein_bottle"}})
    with pytest.raises(ConfigError):
        config_from_dict({**SMALL_FLOW, "checks": ["no_such_check"]})
    with pytest.raises(ConfigError):
        config_from_dict({**SMALL_FLOW, "unexpected": 1})
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_every_check_is_registered():
    cfg = config_from_dict({**SMALL_FLOW, "checks": sorted(CHECKS)})
    assert set(cfg.checks) == set(CHECKS)


def test_run_is_deterministic(tmp_path):
    cfg = config_from_dict(SMALL_FLOW)
    a, b = tmp_path / "a", tmp_path / "b"
    ra, rb = run(cfg, a), run(cfg, b)
    assert ra.files == rb.files
    for name in ra.files:
        if name.endswith(".csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "report.md").read_bytes() == (b / "report.md").read_bytes()
    assert report_render(ra) == report_render(rb)


def test_run_writes_artefacts(tmp_path):
    rep = run(config_from_dict(SMALL_FLOW), tmp_path)
    assert rep.exit_code == 0
    for name in ("series.csv", "snapshots.csv", "blowup.json", "monitor.csv"):
        assert name in rep.files
    with (tmp_path / "monitor.csv").open() as fh:
        header = next(csv.reader(fh))
    assert "min_slack_3_11" in header and "residual_3_2" in header
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["exit_code"] == 0
    assert [c["name"] for c in saved["checks"]] == list(SMALL_FLOW["checks"])


def test_report_render_statuses():
    checks = [CheckResult("a", "PASS", "q", 1.0, 0.5, 0.5),
              CheckResult("b", "FAIL", "q", 0.0, 0.25, -0.25),
              CheckResult("c", "VACUOUS", "q", 0.0, math.nan, math.nan)]
    rep = RunReport(checks, {}, [], {})
    text = report_render(rep)
    assert rep.exit_code == 1
    assert "FAIL" in text and "VACUOUS" in text and "-0.25" in text
    assert text == report_render(rep)
    assert RunReport(checks[::2], {}, [], {}).exit_code == 0


def test_infeasible_config_exits_2(tmp_path, capsys):
    raw = {"manifold": {"kind": "flat_torus", "dimension": 3, "n": 8},
           "flow": {"reaction": "power_positive", "p": 5, "t_end": 0.01},
           "checks": ["feasibility"]}
    code = main(["run", "--config", str(write_cfg(tmp_path, raw)), "--out", str(tmp_path / "o"),
                 "--quiet"])
    assert code == 2
    err = capsys.readouterr().err
    assert f"{star_exponent(3):.5f}" == "2.68614"
    assert "2.68614" in err


def test_unknown_check_exits_2(tmp_path):
    path = write_cfg(tmp_path, {**SMALL_FLOW, "checks": ["bogus"]})
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_empty_checks_exit_0(tmp_path):
    path = write_cfg(tmp_path, {**SMALL_FLOW, "checks": []})
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 0


def test_failing_check_exits_1(tmp_path):
    # the blow-up check fails when the flow stops long before blow-up
    raw = {**SMALL_FLOW, "initial": "1", "checks": ["blowup"]}
    path = write_cfg(tmp_path, raw)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 1


@pytest.mark.slow
def test_bundled_blowup_config(tmp_path, capsys):
    code = main(["run", "--config", str(bundled_config("torus_blowup")), "--out", str(tmp_path)])
    assert code == 0
    saved = json.loads((tmp_path / "report.json").read_text())
    by_name = {c["name"]: c for c in saved["checks"]}
    assert by_name["blowup"]["status"] == "PASS"
    assert abs(by_name["blowup"]["measured"] - 1.0) <= 0.02
    assert "blowup" in capsys.readouterr().out


def test_exponents_subcommand(capsys):
    assert main(["exponents", "--dim", "2"]) == 0
    out = capsys.readouterr().out
    data = json.loads(out[out.index("{"):])
    assert data["p_star"] == pytest.approx(2 + math.sqrt(5), abs=1e-12)


def test_feasible_subcommand(capsys):
    assert main(["feasible", "--dim", "1", "--p", "2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["report"]["feasible"]
    assert data["report"]["s1"] > 0 and data["report"]["s2"] > 0
    assert main(["feasible", "--dim", "3", "--p", "5", "--quiet"]) == 2


def test_threshold_subcommand(tmp_path):
    assert main(["threshold", "--dim", "3", "--tol", "0.05", "--out", str(tmp_path),
                 "--quiet"]) == 0
    with (tmp_path / "threshold.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0].keys() == {"iteration", "lo", "hi", "p", "feasible"}
    assert rows[-1]["feasible"] == ""
    assert abs(float(rows[-1]["p"]) - star_exponent(3)) <= 0.05


def test_steady_subcommand(tmp_path, capsys):
    assert main(["steady", "--n", "128", "--out", str(tmp_path)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["converged"]
    assert data["oracle"]["l2_distance"] <= 1e-2
    assert (tmp_path / "steady_profile.csv").exists()
    assert (tmp_path / "oracle.json").exists()


def test_steady_seed_names_and_integers(tmp_path):
    assert "sine" in STEADY_SEEDS
    assert main(["steady", "--n", "64", "--seed", "sine", "--out", str(tmp_path / "a"),
                 "--quiet"]) == 0
    assert main(["steady", "--n", "64", "--seed", "7", "--out", str(tmp_path / "b"),
                 "--quiet"]) == 0
    assert main(["steady", "--n", "64", "--seed", "nonsense", "--out", str(tmp_path / "c"),
                 "--quiet"]) == 2
