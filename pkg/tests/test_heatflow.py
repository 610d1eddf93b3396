import json
import math

import numpy as np
import pytest

from liyau_lab.geometry import build_manifold, flat_torus, icosphere, mean
from liyau_lab.heatflow import (
    BlowupEstimateError,
    FlowConfig,
    ReactionTerm,
    StepFailure,
    auto_dt,
    blowup_report_json,
    blowup_time_bound,
    detect_blowup,
    evolve,
    export_series_csv,
    export_snapshots_csv,
    jensen_check,
    min_tracker_check,
    scaling_symmetry_check,
    step,
)


@pytest.fixture(scope="module")
def blowup_p2(circle128):
    return evolve(np.ones(circle128.node_count), circle128,
                  FlowConfig(ReactionTerm("power_positive", 2.0), t_end=2.0, snapshot_stride=100))


@pytest.fixture(scope="module")
def blowup_sine(circle128):
    x = circle128.coords[:, 0]
    return evolve(1 + 0.5 * np.sin(x), circle128,
                  FlowConfig(ReactionTerm("power_positive", 2.0), t_end=2.0, snapshot_stride=100))


def test_reaction_terms():
    f = ReactionTerm("power_odd", 3.0)
    assert np.allclose(f(np.array([-2.0, 2.0])), [-8.0, 8.0])
    assert np.allclose(f.derivative(np.array([-2.0])), [12.0])
    g = ReactionTerm("power_positive", 2.0)
    assert np.allclose(g.primitive(np.array([3.0])), [9.0])
    assert np.all(ReactionTerm()(np.ones(3)) == 0)
    with pytest.raises(ValueError):
        ReactionTerm("power_positive", 1.0)
    with pytest.raises(ValueError):
        ReactionTerm("exp")


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(scheme="crank_nicolson")
    with pytest.raises(ValueError):
        FlowConfig(dt=0.0)
    with pytest.raises(ValueError):
        FlowConfig(snapshot_stride=0)


def test_auto_dt_policy(circle128):
    u = 2.0 * np.ones(circle128.node_count)
    assert auto_dt(circle128, u, "imex_euler", ReactionTerm()) == 1e-3
    assert auto_dt(circle128, u, "imex_euler", ReactionTerm("power_positive", 3.0)) == 1e-3
    assert auto_dt(circle128, 1000 * u, "imex_euler", ReactionTerm("power_positive", 2.0)) == 0.5 / 4000
    h = circle128.mesh_size
    assert auto_dt(circle128, u, "explicit_rk4", ReactionTerm()) <= 0.2 * h * h


def test_linear_flow_separable_solution(circle128):
    x = circle128.coords[:, 0]
    traj = evolve(2 + np.sin(x), circle128, FlowConfig(dt=1e-3, t_end=1.0))
    assert traj.status == "completed"
    assert abs(traj.times[-1] - 1.0) < 1e-12
    assert np.max(np.abs(traj.final - (2 + math.exp(-1) * np.sin(x)))) <= 1e-3


@pytest.mark.parametrize("scheme", ["imex_euler", "explicit_rk4"])
def test_constant_is_equilibrium(circle128, scheme):
    traj = evolve(np.full(circle128.node_count, 1.7), circle128,
                  FlowConfig(scheme=scheme, t_end=0.05))
    assert np.max(np.abs(traj.snapshots - 1.7)) <= 1e-12


def test_constant_ode_quadratic(circle128):
    traj = evolve(np.ones(circle128.node_count), circle128,
                  FlowConfig(ReactionTerm("power_positive", 2.0), dt=1e-4, t_end=0.5))
    assert abs(traj.final.mean() - 2.0) <= 1e-2


def test_zero_data_odd_reaction(circle128):
    traj = evolve(np.zeros(circle128.node_count), circle128,
                  FlowConfig(ReactionTerm("power_odd", 3.0), t_end=0.1))
    assert np.all(traj.snapshots == 0.0)


def test_early_termination_on_blowup(blowup_p2):
    assert blowup_p2.status == "blowup"
    assert blowup_p2.blowup.detected
    assert blowup_p2.times[-1] < 2.0


def test_blowup_time_constant_data(blowup_p2):
    assert 0.98 <= blowup_p2.blowup.T_star_estimate <= 1.02
    assert detect_blowup(blowup_p2, 2.0) == blowup_p2.blowup.T_star_estimate


@pytest.mark.parametrize("c,p,T", [(1.0, 3.0, 0.5), (2.0, 2.0, 0.5)])
def test_blowup_time_other_oracles(circle128, c, p, T):
    traj = evolve(np.full(circle128.node_count, c), circle128,
                  FlowConfig(ReactionTerm("power_positive", p), t_end=2.0, snapshot_stride=1000))
    assert abs(traj.blowup.T_star_estimate - T) <= 0.02


def test_blowup_estimate_needs_growth_data(circle128):
    traj = evolve(np.ones(circle128.node_count), circle128,
                  FlowConfig(ReactionTerm("power_positive", 2.0), dt=1e-2, t_end=0.02))
    with pytest.raises(BlowupEstimateError):
        detect_blowup(traj, 2.0)


def test_blowup_time_bound_quadrature():
    f = ReactionTerm("power_positive", 2.0)
    assert abs(blowup_time_bound(f, 1.0) - 1.0) < 1e-10
    assert abs(blowup_time_bound(f, 2.0) - 0.5) < 1e-10
    assert abs(blowup_time_bound(ReactionTerm("power_positive", 3.0), 1.0, 0.25) - 0.75) < 1e-10
    assert blowup_time_bound(ReactionTerm(), 1.0) == math.inf


def test_jensen_sine_data(blowup_sine, circle128):
    rep = jensen_check(blowup_sine, circle128, ReactionTerm("power_positive", 2.0))
    assert rep.passed
    assert rep.details["T_bound"] == pytest.approx(1.0, abs=1e-10)
    assert rep.details["T_star"] <= 1.02


def test_jensen_equality_for_constant_data(blowup_p2, circle128):
    rep = jensen_check(blowup_p2, circle128, ReactionTerm("power_positive", 2.0))
    # D is exactly zero in the continuum; only time discretisation remains
    assert abs(rep.measured) <= 0.02


def test_jensen_bound_mean_two():
    assert blowup_time_bound(ReactionTerm("power_positive", 2.0), 2.0) == pytest.approx(0.5)


def test_jensen_rejects_odd_reaction(blowup_p2, circle128):
    with pytest.raises(ValueError):
        jensen_check(blowup_p2, circle128, ReactionTerm("power_odd", 3.0))


def test_min_tracker(blowup_sine, blowup_p2, circle128):
    f = ReactionTerm("power_positive", 2.0)
    assert min_tracker_check(blowup_sine, f).passed
    assert abs(min_tracker_check(blowup_p2, f).measured) <= 0.02
    x = circle128.coords[:, 0]
    lin = evolve(2 + np.sin(x), circle128, FlowConfig(dt=1e-3, t_end=0.5))
    rep = min_tracker_check(lin, ReactionTerm())
    assert rep.passed and rep.measured >= -rep.details["tol"]


def test_scaling_symmetry():
    assert scaling_symmetry_check(2.0, 2.0) <= 1e-12
    assert scaling_symmetry_check(2.0, 1.0) <= 1e-12
    assert scaling_symmetry_check(3.0, 0.5) <= 1e-12
    # u_k = 4/(1-4t) for p = 2, T = 1, k = 2
    t = 0.1
    uk = 2 ** 2 * (1.0 * (1 - 4 * t)) ** -1
    assert uk == pytest.approx(4 / (1 - 4 * t))
    with pytest.raises(ValueError):
        scaling_symmetry_check(2.0, 0.0)


def test_mass_conservation_and_maximum_principle():
    rng = np.random.default_rng(1)
    for spec in (flat_torus(1, 64), flat_torus(2, 32), icosphere(3)):
        M = build_manifold(spec)
        u0 = 2 + rng.standard_normal(M.node_count) * 0.3
        traj = evolve(u0, M, FlowConfig(dt=1e-2, t_end=0.3))
        m = traj.series["mean"]
        assert np.max(np.abs(m - m[0])) <= 1e-8 * abs(m[0])
        assert np.all(np.diff(traj.series["min"]) >= -1e-8 * np.diff(traj.times))
        assert np.all(np.diff(traj.series["max"]) <= 1e-8 * np.diff(traj.times))


def test_positivity_preserved(blowup_sine):
    assert np.all(blowup_sine.series["min"] > 0)


def test_imex_first_order_in_dt(circle128):
    x = circle128.coords[:, 0]
    errs = []
    for dt in (4e-3, 2e-3):
        traj = evolve(2 + np.sin(x), circle128, FlowConfig(dt=dt, t_end=0.5))
        # compare with the semi-discrete solution to isolate the time error
        lam = float(-(circle128.laplacian @ np.sin(x))[32] / np.sin(x)[32])
        errs.append(np.max(np.abs(traj.final - (2 + math.exp(-lam * 0.5) * np.sin(x)))))
    assert 1.8 <= errs[0] / errs[1] <= 2.2


def test_rk4_reaches_spatial_plateau():
    M = build_manifold(flat_torus(1, 32))
    x = M.coords[:, 0]
    traj = evolve(2 + np.sin(x), M, FlowConfig(scheme="explicit_rk4", t_end=0.5))
    lam = float(-(M.laplacian @ np.sin(x))[8] / np.sin(x)[8])
    semi = 2 + math.exp(-lam * 0.5) * np.sin(x)
    assert np.max(np.abs(traj.final - semi)) <= 1e-10
    exact = 2 + math.exp(-0.5) * np.sin(x)
    assert np.max(np.abs(traj.final - exact)) <= 1e-2


def test_step_failure_reports(circle128):
    cfg = FlowConfig(solver_maxiter=1)
    x = circle128.coords[:, 0]
    with pytest.raises(StepFailure):
        step(2 + np.sin(5 * x), 0.0, circle128, cfg, 1.0)


def test_evolve_preconditions(circle128):
    f = FlowConfig(ReactionTerm("power_positive", 2.0))
    with pytest.raises(ValueError):
        evolve(np.zeros(circle128.node_count), circle128, f)
    with pytest.raises(ValueError):
        evolve(np.full(circle128.node_count, 1e7), circle128, FlowConfig())


def test_uniform_snapshot_runs(blowup_p2):
    runs = blowup_p2.uniform_snapshot_runs()
    assert runs[0][0] == 0
    for i0, i1, dt in runs:
        gaps = np.diff(blowup_p2.snapshot_times[i0:i1])
        assert np.allclose(gaps, dt, rtol=1e-9)


def test_exports(tmp_path, blowup_p2):
    s = export_series_csv(blowup_p2, tmp_path / "s.csv").read_text().splitlines()
    assert s[0] == "t,max,min,mean,energy"
    assert len(s) == len(blowup_p2.times) + 1
    snap = export_snapshots_csv(blowup_p2, tmp_path / "n.csv").read_text().splitlines()
    assert snap[0] == "t,node,value"
    info = json.loads(blowup_report_json(blowup_p2, tmp_path / "b.json").read_text())
    assert info["detected"] and info["status"] == "blowup"
