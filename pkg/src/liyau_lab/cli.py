"""Command line front end: experiment configs, check registry, reports.

Exit codes: 0 when every requested check passes (or is vacuous), 1 when a
check fails, 2 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import exponents, feasibility, geometry, harnack, heatflow, steady

logger = logging.getLogger("liyau_lab")

PASS, FAIL, VACUOUS = "PASS", "FAIL", "VACUOUS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

_NUMBER_OR_NULL = {"type": ["number", "null"]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["manifold"],
    "properties": {
        "manifold": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["flat_torus", "conformal_torus", "icosphere"]},
                "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
                "n": {"type": "integer", "minimum": 8},
                "length": {"type": "number", "exclusiveMinimum": 0},
                "phi": {"type": "string"},
                "subdivision": {"type": "integer", "minimum": 2, "maximum": 7},
            },
        },
        "initial": {"type": "string"},
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reaction": {"enum": list(heatflow.REACTIONS)},
                "p": _NUMBER_OR_NULL,
                "dt": _NUMBER_OR_NULL,
                "scheme": {"enum": list(heatflow.SCHEMES)},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "blowup_threshold": {"type": "number", "exclusiveMinimum": 0},
                "snapshot_stride": {"type": "integer", "minimum": 1},
            },
        },
        "harnack": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _NUMBER_OR_NULL,
                "beta": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "C0": {"type": "number", "minimum": 0},
                "C_lin": {"type": "number", "minimum": 0},
            },
        },
        "steady": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "exclusiveMinimum": 1},
                "seed": {"type": "string"},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "checks": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "output_dir": {"type": "string"},
        "random_seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass(frozen=True)
class ManifoldSettings:
    kind: str
    dimension: int = 1
    n: int | None = None
    length: float = 2 * math.pi
    phi: str | None = None
    subdivision: int = geometry.DEFAULT_SUBDIVISION

    def spec(self) -> geometry.ManifoldSpec:
        if self.kind == "flat_torus":
            return geometry.flat_torus(self.dimension, self.n, self.length)
        if self.kind == "conformal_torus":
            n = self.n or geometry.DEFAULT_NODES[2]
            return geometry.conformal_torus(self.phi or "0*x", n, self.length)
        return geometry.icosphere(self.subdivision)


@dataclass(frozen=True)
class FlowSettings:
    reaction: str = "none"
    p: float | None = None
    dt: float | None = None
    scheme: str = "imex_euler"
    t_end: float = 1.0
    blowup_threshold: float = 1e6
    snapshot_stride: int = 1

    def config(self) -> heatflow.FlowConfig:
        return heatflow.FlowConfig(
            reaction=heatflow.ReactionTerm(self.reaction, self.p), dt=self.dt,
            scheme=self.scheme, t_end=self.t_end, blowup_threshold=self.blowup_threshold,
            snapshot_stride=self.snapshot_stride)


@dataclass(frozen=True)
class HarnackSettings:
    gamma: float | None = None
    beta: float | str = "auto"
    C0: float = 1.0
    C_lin: float = 1.0


@dataclass(frozen=True)
class SteadySettings:
    p: float = 3.0
    seed: str = "sine_cos2"
    max_iter: int = 50_000


@dataclass(frozen=True)
class ExperimentConfig:
    manifold: ManifoldSettings
    initial: str = "1"
    flow: FlowSettings | None = None
    harnack: HarnackSettings = field(default_factory=HarnackSettings)
    steady: SteadySettings | None = None
    checks: tuple[str, ...] = ()
    output_dir: str = "out"
    random_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = list(self.checks)
        return _drop_none(d)


def _drop_none(d: dict) -> dict:
    return {k: _drop_none(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    unknown = [c for c in raw.get("checks", []) if c not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown check name(s): {', '.join(unknown)}; "
                          f"available: {', '.join(sorted(CHECKS))}")
    flow = FlowSettings(**raw["flow"]) if "flow" in raw else None
    if flow and flow.reaction != "none" and flow.p is None:
        raise ConfigError("flow.p is required for power reactions")
    return ExperimentConfig(
        manifold=ManifoldSettings(**raw["manifold"]),
        initial=raw.get("initial", "1"),
        flow=flow,
        harnack=HarnackSettings(**raw.get("harnack", {})),
        steady=SteadySettings(**raw["steady"]) if "steady" in raw else None,
        checks=tuple(raw.get("checks", ())),
        output_dir=raw.get("output_dir", "out"),
        random_seed=raw.get("random_seed", 0),
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def bundled_config(name: str) -> Path:
    """Path of a shipped config; the ``.cfg`` suffix may be omitted."""
    path = Path(__file__).parent / "configs" / name
    return path if path.suffix else path.with_suffix(".cfg")


def evaluate_field(expr: str, M: geometry.DiscreteManifold) -> np.ndarray:
    """Evaluate a numpy expression in x, y, z at the manifold nodes."""
    c = M.coords
    names = {k: getattr(np, k) for k in ("sin", "cos", "exp", "tanh", "cosh", "sinh", "pi", "abs")}
    coords = {a: (c[:, i] if i < c.shape[1] else np.zeros(len(c))) for i, a in enumerate("xyz")}
    try:
        out = eval(expr, {"__builtins__": {}}, {**names, **coords})  # noqa: S307
    except Exception as exc:
        raise ConfigError(f"cannot evaluate field expression {expr!r}: {exc}") from None
    return np.broadcast_to(np.asarray(out, dtype=float), (M.node_count,)).copy()


STEADY_SEEDS = ("sine", "sine_cos2", "random_odd")


def steady_seed(name: str, M: geometry.DiscreteManifold, rng: np.random.Generator) -> np.ndarray:
    x = M.coords[:, 0]
    if name == "sine":
        return np.sin(x)
    if name == "sine_cos2":
        return np.sin(x) + 0.1 * np.cos(2 * x)
    if name == "random_odd":
        a = rng.uniform(0.5, 1.0, 3) * np.array([1.0, 0.3, 0.1])
        u = sum(a[k] * np.sin((k + 1) * x) for k in range(3))
        if M.coords.shape[1] > 1:
            u = u * (1.0 + 0.05 * np.cos(M.coords[:, 1]))
        return u
    raise ConfigError(f"unknown steady seed {name!r}; choose from {', '.join(STEADY_SEEDS)}")


# ---------------------------------------------------------------------------
# run context and check registry


@dataclass
class CheckResult:
    name: str
    status: str
    quantity: str
    bound: float
    measured: float
    slack: float
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    checks: list[CheckResult]
    summaries: dict
    files: list[str]
    config: dict

    @property
    def exit_code(self) -> int:
        return 1 if any(c.status == FAIL for c in self.checks) else 0

    def as_dict(self) -> dict:
        return {"checks": [c.as_dict() for c in self.checks], "summaries": self.summaries,
                "files": self.files, "config": self.config, "exit_code": self.exit_code}


class RunContext:
    """Lazily computed artefacts shared by the checks of one run."""

    def __init__(self, cfg: ExperimentConfig, out: Path | None):
        self.cfg = cfg
        self.out = out
        self.rng = np.random.default_rng(cfg.random_seed)
        self.M = geometry.build_manifold(cfg.manifold.spec())
        self.files: list[str] = []
        self.summaries: dict = {"manifold": {"kind": self.M.kind, "nodes": self.M.node_count,
                                             "total_volume": self.M.total_volume,
                                             "ricci_lower": self.M.ricci_lower, "K": self.M.K}}
        self._cache: dict = {}
        self.params = self._resolve_params()

    # artefacts

    def _resolve_params(self):
        flow, hs = self.cfg.flow, self.cfg.harnack
        N = self.M.dimension
        if flow is None or flow.reaction == "none":
            return feasibility.LinearHarnackParams(N, hs.gamma or 2.0, hs.C_lin)
        p = flow.p
        if hs.beta == "auto":
            params = feasibility.find_params(N, p, c0=hs.C0)
        else:
            if hs.gamma is None:
                raise ConfigError("harnack.gamma is required when beta is given")
            rep = feasibility.check_constraints(N, p, hs.beta, hs.gamma)
            if not rep.feasible:
                raise feasibility.InfeasibleError(
                    N, p, exponents.star_exponent(N),
                    f"given (beta, gamma) has slacks s1={rep.s1:.6g}, s2={rep.s2:.6g}")
            params = feasibility.HarnackParams(
                N=N, p=p, beta=hs.beta, gamma=hs.gamma, c0=hs.C0, source="config",
                **feasibility.coefficients(N, p, hs.beta, hs.gamma))
        self.summaries["harnack_params"] = params.as_dict()
        return params

    def _write(self, name: str) -> Path | None:
        if self.out is None:
            return None
        self.files.append(name)
        return self.out / name

    @property
    def trajectory(self) -> heatflow.Trajectory:
        if "traj" not in self._cache:
            if self.cfg.flow is None:
                raise ConfigError("this check needs a flow section in the config")
            fc = self.cfg.flow.config()
            u0 = evaluate_field(self.cfg.initial, self.M)
            traj = heatflow.evolve(u0, self.M, fc)
            self._cache["traj"] = traj
            self.summaries["flow"] = {
                "status": traj.status, "steps": int(len(traj.dts)),
                "t_final": float(traj.times[-1]), "max_final": float(traj.series["max"][-1]),
                "blowup": traj.blowup.as_dict() if traj.blowup else None}
            if (p := self._write("series.csv")) is not None:
                heatflow.export_series_csv(traj, p)
                heatflow.export_snapshots_csv(traj, self._write("snapshots.csv"))
                heatflow.blowup_report_json(traj, self._write("blowup.json"))
        return self._cache["traj"]

    @property
    def monitor(self) -> harnack.MonitorSeries:
        if "monitor" not in self._cache:
            ser = harnack.monitor_trajectory(self.trajectory, self.params)
            self._cache["monitor"] = ser
            if (p := self._write("monitor.csv")) is not None:
                harnack.export_monitor_csv(ser, p)
        return self._cache["monitor"]

    @property
    def linear_tol(self) -> float:
        if "tol" not in self._cache:
            traj = self.trajectory
            dt = float(np.median(traj.dts)) if len(traj.dts) else 1e-3
            res = harnack.linear_flow_residual(self.M, dt)
            self._cache["tol"] = 10.0 * res
            self.summaries["linear_flow_residual"] = {"dt": dt, "residual": res,
                                                      "tol": 10.0 * res}
        return self._cache["tol"]

    @property
    def steady(self) -> steady.SteadyResult:
        if "steady" not in self._cache:
            ss = self.cfg.steady or SteadySettings()
            seed = steady_seed(ss.seed, self.M, self.rng)
            res = steady.minimize_energy(self.M, ss.p, seed,
                                         steady.MinimizeOptions(max_iter=ss.max_iter))
            self._cache["steady"] = res
            self.summaries["steady"] = res.summary()
            if (p := self._write("steady_profile.csv")) is not None:
                write_profile_csv(self.M, res, p)
                self._write("steady.json").write_text(
                    json.dumps(res.summary(), indent=2, sort_keys=True), encoding="utf-8")
        return self._cache["steady"]


def write_profile_csv(M: geometry.DiscreteManifold, res: steady.SteadyResult, path: Path) -> Path:
    axes = ["x", "y", "z"][: M.coords.shape[1]]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", *axes, "u_min", "U"])
        for i in range(M.node_count):
            w.writerow([i, *(repr(float(c)) for c in M.coords[i]),
                        repr(float(res.u[i])), repr(float(res.U[i]))])
    return path


def _result(name, quantity, measured, bound, sense, details=None, vacuous=False) -> CheckResult:
    measured, bound = float(measured), float(bound)
    slack = measured - bound if sense == "ge" else bound - measured
    if vacuous:
        status = VACUOUS
    else:
        status = PASS if slack >= 0 else FAIL
    return CheckResult(name, status, quantity, bound, measured, slack, details or {})


def _from_report(rep: heatflow.CheckReport, quantity: str, sense: str) -> CheckResult:
    details = {k: v for k, v in rep.as_dict().items()
               if k not in ("name", "passed", "measured", "bound")}
    res = _result(rep.name, quantity, rep.measured, rep.bound, sense, details)
    if not rep.passed and res.status == PASS:
        # the underlying report failed on a secondary criterion
        res.status = FAIL
    return res


def check_operator_contracts(ctx: RunContext) -> CheckResult:
    out = geometry.operator_contracts(ctx.M, seed=ctx.cfg.random_seed)
    worst = max(out["self_adjoint"], out["green"], max(out["negative_semidefinite"], 0.0),
                out["constant_kernel"])
    res = _result("operator_contracts", "max normalised contract defect", worst, 1e-10, "le", out)
    if not out["passed"]:
        res.status = FAIL
    return res


def check_bochner(ctx: RunContext) -> CheckResult:
    r = geometry.bochner_residual(ctx.M, np.sin(ctx.M.coords[:, 0]))
    return _result("bochner", "max |Bochner residual| for U = sin x", r, 0.01, "le")


def check_laplace_comparison(ctx: RunContext) -> CheckResult:
    sub = ctx.cfg.manifold.subdivision
    v = geometry.laplace_comparison_check(sub, 0.0)
    return _result("laplace_comparison", "max r cot r - 1 over sphere vertices", v, 0.0, "le",
                   {"subdivision": sub})


def check_feasibility(ctx: RunContext) -> CheckResult:
    P = ctx.params
    if isinstance(P, feasibility.LinearHarnackParams):
        return _result("feasibility", "linear flow: gamma - 1", P.gamma - 1.0, 0.0, "ge")
    rep = feasibility.check_constraints(P.N, P.p, P.beta, P.gamma)
    return _result("feasibility", "min(s1, s2)", min(rep.s1, rep.s2), 0.0, "ge",
                   {"s1": rep.s1, "s2": rep.s2, "alpha_max": P.alpha_max})


def check_blowup(ctx: RunContext) -> CheckResult:
    traj = ctx.trajectory
    rx = ctx.cfg.flow.config().reaction
    t_bound = heatflow.blowup_time_bound(rx, geometry.mean(ctx.M, traj.snapshots[0]))
    detected = bool(traj.blowup and traj.blowup.detected)
    T = traj.blowup.T_star_estimate if detected else math.inf
    res = _result("blowup", "estimated T*", T, t_bound + 0.02, "le",
                  {"detected": detected, "T_bound": t_bound})
    if not detected:
        res.status = FAIL
    return res


def check_jensen(ctx: RunContext) -> CheckResult:
    rep = heatflow.jensen_check(ctx.trajectory, ctx.M, ctx.cfg.flow.config().reaction)
    return _from_report(rep, "min relative D(t)", "ge")


def check_min_tracker(ctx: RunContext) -> CheckResult:
    rep = heatflow.min_tracker_check(ctx.trajectory, ctx.cfg.flow.config().reaction)
    return _from_report(rep, "min relative dphi/dt - f(phi)", "ge")


def check_scaling_symmetry(ctx: RunContext) -> CheckResult:
    flow = ctx.cfg.flow
    p = flow.p if flow and flow.p else 2.0
    r = max(heatflow.scaling_symmetry_check(p, k) for k in (0.5, 1.0, 2.0))
    return _result("scaling_symmetry", "max relative ODE residual over k", r, 1e-12, "le",
                   {"p": p})


def check_inequality_3_11(ctx: RunContext) -> CheckResult:
    ser = ctx.monitor
    vals = ser.min_slack_3_11[np.isfinite(ser.min_slack_3_11)]
    tol = ctx.linear_tol
    if vals.size == 0:
        return _result("inequality_3_11", "min slack", math.nan, -tol, "ge", vacuous=True,
                       details={"reason": "no monitored frame with a nonlinear reaction"})
    return _result("inequality_3_11", "min slack", vals.min(), -tol, "ge",
                   {"frames": int(vals.size)})


def _identity_check(kind: str, column: str) -> Callable[[RunContext], CheckResult]:
    def run(ctx: RunContext) -> CheckResult:
        vals = getattr(ctx.monitor, column)
        vals = vals[np.isfinite(vals)]
        tol = ctx.linear_tol
        if vals.size == 0:
            return _result(f"identity_{kind}", "max residual", math.nan, tol, "le", vacuous=True)
        return _result(f"identity_{kind}", "max residual", vals.max(), tol, "le",
                       {"frames": int(vals.size)})
    return run


def check_lemma_4_1(ctx: RunContext) -> CheckResult:
    traj = ctx.trajectory
    tol = ctx.linear_tol
    worst = None
    for i0, i1, dt in traj.uniform_snapshot_runs():
        for i in range(i0 + 1, i1 - 1):
            v = harnack.lemma_4_1_check(traj.snapshots[i - 1:i + 2], dt, ctx.M, ctx.params)
            if v is not None:
                worst = v if worst is None else min(worst, v)
    if worst is None:
        return _result("lemma_4_1", "min slack where rho > 0", math.nan, -tol, "ge",
                       {"reason": "rho <= 0 at every monitored node"}, vacuous=True)
    return _result("lemma_4_1", "min slack where rho > 0", worst, -tol, "ge")


def check_ode_comparison(ctx: RunContext) -> CheckResult:
    rep = harnack.ode_comparison_check(ctx.trajectory, ctx.params)
    return _from_report(rep, "max violation of u_t lower bound", "le")


def check_blowup_lower_bound(ctx: RunContext) -> CheckResult:
    rep = harnack.blowup_lower_bound_check(ctx.trajectory, ctx.params)
    if rep.details.get("vacuous"):
        return _result(rep.name, "min max u / ODE lower bound", math.nan, rep.bound, "ge",
                       {"reason": "rho > 0 at every monitored node"}, vacuous=True)
    return _from_report(rep, "min max u / ODE lower bound", "ge")


def check_harnack_trend(ctx: RunContext) -> CheckResult:
    P = ctx.params
    C = P.c_lin if isinstance(P, feasibility.LinearHarnackParams) else P.c0
    rep = harnack.harnack_trend_check(ctx.monitor, C, ctx.M.K)
    if math.isnan(rep.measured):
        return _result(rep.name, "fitted sup rho asymptote", math.nan, rep.bound, "le",
                       {"status": rep.details.get("status", "")}, vacuous=True)
    details = {k: v for k, v in rep.details.items() if k != "sup_rho_trace"}
    return _result(rep.name, "fitted sup rho asymptote", rep.measured, rep.bound, "le", details)


def check_steady_state(ctx: RunContext) -> CheckResult:
    res = ctx.steady
    ss = ctx.cfg.steady or SteadySettings()
    c1, c2 = steady.constraint_values(ctx.M, res.u, ss.p)
    scale = geometry.integrate(ctx.M, np.abs(res.u) ** ss.p)
    details = {
        "converged": res.converged, "iterations": res.iterations,
        "constraint_c1_error": abs(c1 - 1.0), "constraint_c2_relative": abs(c2) / scale,
        "lambda_minus_2E_relative": abs(res.lam - 2 * res.energy) / abs(res.lam),
        "mu_over_lambda": abs(res.mu) / res.lam if res.lam > 0 else math.inf,
        "sign_change": bool(res.u.min() < 0 < res.u.max()),
        "energy": res.energy, "lambda": res.lam}
    out = _result("steady_state", "PDE residual", res.pde_residual, 5e-3, "le", details)
    ok = (res.converged and res.lam > 0 and details["constraint_c1_error"] <= 1e-10
          and details["constraint_c2_relative"] <= 1e-10
          and details["lambda_minus_2E_relative"] <= 1e-8
          and details["mu_over_lambda"] <= 1e-6 and details["sign_change"])
    if not ok:
        out.status = FAIL
    return out


def check_steady_oracle(ctx: RunContext) -> CheckResult:
    if ctx.M.dimension != 1 or ctx.M.kind != "flat_torus":
        return _result("steady_oracle", "L2 distance to oracle", math.nan, 1e-2, "le",
                       {"reason": "oracle exists on the circle only"}, vacuous=True)
    res = ctx.steady
    ss = ctx.cfg.steady or SteadySettings()
    L = ctx.cfg.manifold.length
    orc = steady.oracle_1d(ss.p, L, ctx.M.node_count)
    d, shift, sign = steady.aligned_l2_distance(res.U, orc.U, L)
    return _result("steady_oracle", "L2 distance to oracle", d, 1e-2, "le",
                   {"oracle_amplitude": orc.amplitude, "oracle_energy": orc.energy,
                    "energy_difference": res.energy - orc.energy, "shift": shift, "sign": sign})


CHECKS: dict[str, Callable[[RunContext], CheckResult]] = {
    "operator_contracts": check_operator_contracts,
    "bochner": check_bochner,
    "laplace_comparison": check_laplace_comparison,
    "feasibility": check_feasibility,
    "blowup": check_blowup,
    "jensen": check_jensen,
    "min_tracker": check_min_tracker,
    "scaling_symmetry": check_scaling_symmetry,
    "inequality_3_11": check_inequality_3_11,
    "identity_3_2": _identity_check("3_2", "residual_3_2"),
    "identity_3_7": _identity_check("3_7", "residual_3_7"),
    "lemma_4_1": check_lemma_4_1,
    "ode_comparison": check_ode_comparison,
    "blowup_lower_bound": check_blowup_lower_bound,
    "harnack_trend": check_harnack_trend,
    "steady_state": check_steady_state,
    "steady_oracle": check_steady_oracle,
}


def run(cfg: ExperimentConfig, out: Path | None = None) -> RunReport:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out)
    results = []
    for name in cfg.checks:
        logger.info("check %s", name)
        results.append(CHECKS[name](ctx))
    report = RunReport(results, ctx.summaries, sorted(ctx.files), cfg.to_dict())
    if out is not None:
        report.files = sorted(set(report.files) | {"report.json", "report.md", "config.json"})
        (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
        (out / "report.json").write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True, default=_json_default),
            encoding="utf-8")
        (out / "report.md").write_text(report_render(report), encoding="utf-8")
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "n/a"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    if v is None:
        return "n/a"
    return str(v)


def report_render(report: RunReport) -> str:
    """Deterministic markdown: a status overview, one table per check,
    scalar summaries and the file manifest."""
    lines = ["# Run report", ""]
    counts = {s: sum(c.status == s for c in report.checks) for s in (PASS, FAIL, VACUOUS)}
    lines.append(f"{len(report.checks)} checks: {counts[PASS]} PASS, {counts[FAIL]} FAIL, "
                 f"{counts[VACUOUS]} VACUOUS")
    lines.append("")
    if report.checks:
        lines += ["| check | status |", "|---|---|"]
        lines += [f"| {c.name} | {c.status} |" for c in report.checks]
        lines.append("")
    for c in report.checks:
        lines += [f"## {c.name}: {c.status}", "",
                  "| quantity | bound | measured | slack |", "|---|---|---|---|",
                  f"| {c.quantity} | {_fmt(c.bound)} | {_fmt(c.measured)} | {_fmt(c.slack)} |", ""]
        scalars = {k: v for k, v in sorted(c.details.items()) if not isinstance(v, (list, dict))}
        if scalars:
            lines += ["| detail | value |", "|---|---|"]
            lines += [f"| {k} | {_fmt(v)} |" for k, v in scalars.items()]
            lines.append("")
    if report.summaries:
        lines += ["## Summaries", ""]
        for section in sorted(report.summaries):
            val = report.summaries[section]
            if isinstance(val, dict):
                lines.append(f"### {section}")
                lines.append("")
                lines += ["| key | value |", "|---|---|"]
                for k in sorted(val):
                    v = val[k]
                    lines.append(f"| {k} | {_fmt(v) if not isinstance(v, dict) else json.dumps(v, sort_keys=True, default=_json_default)} |")
                lines.append("")
            else:
                lines += [f"- {section}: {_fmt(val)}", ""]
    if report.files:
        lines += ["## Files", ""]
        lines += [f"- {f}" for f in sorted(report.files)]
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def _emit(obj, quiet: bool = False):
    if not quiet:
        print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def cmd_exponents(args) -> int:
    t = exponents.exponent_table(args.dim)
    if not args.quiet:
        print(exponents.format_table(t))
        print(json.dumps(t.as_dict(), indent=2))
    return 0


def cmd_feasible(args) -> int:
    if args.scan:
        rep = feasibility.feasible_scan(args.dim, args.p)
        _emit(rep.as_dict(), args.quiet)
        return 0
    params = feasibility.find_params(args.dim, args.p)
    rep = feasibility.check_constraints(args.dim, args.p, params.beta, params.gamma)
    _emit({"params": params.as_dict(), "report": rep.as_dict()}, args.quiet)
    return 0


def cmd_threshold(args) -> int:
    rows = feasibility.threshold_trace(args.dim, args.tol)
    fh = open(args.out / "threshold.csv", "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["iteration", "lo", "hi", "p", "feasible"])
        for r in rows:
            feas = "" if r["feasible"] is None else str(r["feasible"]).lower()
            w.writerow([r["iteration"], repr(r["lo"]), repr(r["hi"]), repr(r["p"]), feas])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.out and not args.quiet:
        print(f"estimate {rows[-1]['p']:.6g}")
    return 0


def _config_from_args(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, random_seed=args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_evolve(args) -> int:
    cfg = _config_from_args(args)
    ctx = RunContext(cfg, _out_dir(args, cfg))
    ctx.trajectory
    _emit({"flow": ctx.summaries["flow"], "files": sorted(ctx.files)}, args.quiet)
    return 0


def cmd_harnack(args) -> int:
    cfg = _config_from_args(args)
    ctx = RunContext(cfg, _out_dir(args, cfg))
    ser = ctx.monitor
    summary = {"frames": int(len(ser.t)), "files": sorted(ctx.files)}
    if len(ser.t):
        summary.update(sup_rho_max=float(np.max(ser.sup_rho)),
                       sup_rho_last=float(ser.sup_rho[-1]))
        slack = ser.min_slack_3_11[np.isfinite(ser.min_slack_3_11)]
        if slack.size:
            summary["min_slack_3_11"] = float(slack.min())
    _emit(summary, args.quiet)
    return 0


def cmd_steady(args) -> int:
    seed_name, rng_seed = None, None
    if args.seed is not None:
        if args.seed.isdigit():
            rng_seed, seed_name = int(args.seed), "random_odd"
        else:
            seed_name = args.seed
    if args.config:
        cfg = load_config(args.config)
        ss = cfg.steady or SteadySettings()
        cfg = replace(cfg, steady=replace(ss, seed=seed_name or ss.seed),
                      random_seed=cfg.random_seed if rng_seed is None else rng_seed)
        out = _out_dir(args, cfg)
    else:
        seed_name = seed_name or "sine_cos2"
        rng_seed = rng_seed or 0
        manifold = {"kind": args.manifold, "dimension": args.dim}
        if args.n:
            manifold["n"] = args.n
        if args.manifold == "icosphere":
            manifold = {"kind": "icosphere", "subdivision": args.subdivision}
        raw = {"manifold": manifold, "steady": {"p": args.p, "seed": seed_name},
               "checks": ["steady_state", "steady_oracle"], "random_seed": rng_seed}
        cfg = config_from_dict(raw)
        out = Path(args.out) if args.out else Path("out")
        out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out)
    res = ctx.steady
    summary = dict(res.summary())
    if ctx.M.kind == "flat_torus" and ctx.M.dimension == 1:
        chk = check_steady_oracle(ctx)
        summary["oracle"] = {"l2_distance": chk.measured, **chk.details}
        ctx._write("oracle.json").write_text(
            json.dumps(summary["oracle"], indent=2, sort_keys=True), encoding="utf-8")
    _emit(summary, args.quiet)
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    report = run(cfg, out)
    if not args.quiet:
        print(report_render(report))
    return report.exit_code


def cmd_calibrate(args) -> int:
    phis = args.phi or ["0.1*sin(x)", "0.2*sin(x)*cos(y)"]
    Ms = [geometry.build_manifold(geometry.conformal_torus(ph, args.n)) for ph in phis]
    res = harnack.calibrate_linear_constant(Ms, gamma=args.gamma, t_end=args.t_end)
    res["phi"] = phis
    res["K"] = [M.K for M in Ms]
    _emit(res, args.quiet)
    return 0


def _add_common(p: argparse.ArgumentParser, seed_help: str = "random seed override",
                seed_type=int) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=seed_type, help=seed_help)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liyau-lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exponents", help="critical exponent table")
    _add_common(p)
    p.add_argument("--dim", type=int, required=True)
    p.set_defaults(func=cmd_exponents)

    p = sub.add_parser("feasible", help="admissible (beta, gamma) for N, p")
    _add_common(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--scan", action="store_true", help="brute-force grid scan instead of the recipe")
    p.set_defaults(func=cmd_feasible)

    p = sub.add_parser("threshold", help="bisection trace for the threshold")
    _add_common(p)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_threshold)

    for name, fn, hlp in (("evolve", cmd_evolve, "time-integrate a configured flow"),
                          ("harnack", cmd_harnack, "monitor rho along a configured flow"),
                          ("run", cmd_run, "run every configured check")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("steady", help="sign-changing steady state")
    _add_common(p, seed_type=str,
                seed_help=f"seed profile ({', '.join(STEADY_SEEDS)}) or an integer random "
                          "seed (selects random_odd)")
    p.add_argument("--manifold", default="flat_torus",
                   choices=["flat_torus", "conformal_torus", "icosphere"])
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=int)
    p.add_argument("--subdivision", type=int, default=geometry.DEFAULT_SUBDIVISION)
    p.add_argument("--p", type=float, default=3.0)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("calibrate", help="calibrate the linear Harnack constant")
    _add_common(p)
    p.add_argument("--phi", action="append", help="conformal factor expression (repeatable)")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--t-end", type=float, default=2.0)
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, feasibility.InfeasibleError, geometry.GeometryError,
            heatflow.StepFailure, steady.ProjectionError, steady.OracleError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
