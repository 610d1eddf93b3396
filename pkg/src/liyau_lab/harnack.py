"""Li-Yau quantity monitors along simulated flows and closed-form solutions.

For a positive solution u with v = log u and w = |grad v|^2 the monitored
quantity is

    rho = w - gamma v_t + beta u^(p-1)        (semilinear flow)
    rho = w - gamma v_t                       (linear heat flow, beta = 0)

All time derivatives are centered differences over snapshots with uniform
spacing.  Nodes where a snapshot drops below the positivity floor are
clamped: flagged and excluded from every reduction.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .feasibility import HarnackParams, LinearHarnackParams
from .geometry import (
    DiscreteManifold,
    _values,
    gradient_dot,
    gradient_sq,
    hessian_sq,
    laplacian_apply,
    ricci_quadratic,
)
from .heatflow import CheckReport, FlowConfig, ReactionTerm, Trajectory, evolve

logger = logging.getLogger(__name__)

EPS = 1e-12
IDENTITIES = ("eq_3_2", "eq_3_7", "eq_6_2")


class FrameInvalid(ValueError):
    """Every node of a frame was clamped."""


@dataclass
class MonitorFrame:
    t: float
    rho: np.ndarray
    w: np.ndarray
    vt: np.ndarray
    lap_log_u: np.ndarray
    clamped: np.ndarray  # boolean mask
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    @property
    def active(self) -> np.ndarray:
        return ~self.clamped

    @property
    def sup_rho(self) -> float:
        return float(self.rho[self.active].max())

    @property
    def inf_rho(self) -> float:
        return float(self.rho[self.active].min())


def _is_linear(params, linear: bool | None) -> bool:
    if linear is not None:
        return linear
    return params is None or isinstance(params, LinearHarnackParams)


def rho_field(u_prev, u, u_next, dt: float, M: DiscreteManifold, params,
              linear: bool | None = None, t: float = 0.0, eps: float = EPS) -> MonitorFrame:
    linear = _is_linear(params, linear)
    a, b, c = (_values(M, x) for x in (u_prev, u, u_next))
    clamped = (a <= eps) | (b <= eps) | (c <= eps)
    if clamped.all():
        raise FrameInvalid(f"all nodes clamped at t={t:g}")
    la, lb, lc = (np.log(np.maximum(x, eps)) for x in (a, b, c))
    w = gradient_sq(M, lb)
    vt = (lc - la) / (2.0 * dt)
    rho = w - params.gamma * vt
    if not linear:
        rho = rho + params.beta * np.maximum(b, eps) ** (params.p - 1)
    return MonitorFrame(t, rho, w, vt, laplacian_apply(M, lb), clamped, u=b, v=lb)


def gaussian_kernel_frames(N: int, gamma: float, times: Sequence[float],
                           radii: Sequence[float]) -> list[MonitorFrame]:
    """Analytic frames of the Euclidean heat kernel (4 pi t)^(-N/2) exp(-r^2/4t)."""
    r = np.asarray(radii, dtype=float)
    frames = []
    for t in times:
        if not t > 0:
            raise ValueError("times must be positive")
        w = r * r / (4.0 * t * t)
        vt = -N / (2.0 * t) + r * r / (4.0 * t * t)
        rho = (1.0 - gamma) * r * r / (4.0 * t * t) + gamma * N / (2.0 * t)
        frames.append(MonitorFrame(float(t), rho, w, vt, np.full_like(r, -N / (2.0 * t)),
                                   np.zeros(r.shape, dtype=bool)))
    return frames


# ---------------------------------------------------------------------------
# identities


def _window(snapshots, size: int) -> list[np.ndarray]:
    snaps = [np.asarray(s, dtype=float) for s in snapshots]
    if len(snaps) != size:
        raise ValueError(f"expected {size} consecutive snapshots, got {len(snaps)}")
    return snaps


def identity_residual(kind: str, snapshots, dt: float, M: DiscreteManifold, params=None,
                      ut=None, linear: bool | None = None, eps: float = EPS) -> float:
    """Max |residual| of a pointwise identity at the central snapshot.

    eq_3_2: v_t - lap v - |grad v|^2 - u^(p-1)  (last term absent for linear flow)
    eq_3_7: (d_t - lap) u^(p-1) - (p-1) u^(2p-2) + (p-1)(p-2) u^(p-1) w
    eq_6_2: rho_t - lap rho + 2|Hess v|^2 + 2 Ric(grad v, grad v) - 2 <grad v, grad rho>
            for the linear quantity rho = w - gamma v_t (five snapshots)

    ``ut`` optionally supplies the exact u_t at the central snapshot.
    """
    if kind not in IDENTITIES:
        raise ValueError(f"unknown identity {kind!r}")
    linear = _is_linear(params, linear)
    if kind == "eq_6_2":
        if not M.structured:
            raise ValueError("eq_6_2 needs the covariant Hessian (structured grids only)")
        snaps = _window(snapshots, 5)
        gamma = params.gamma
        frames = [rho_field(snaps[i - 1], snaps[i], snaps[i + 1], dt, M, params, True)
                  for i in (1, 2, 3)]
        f0 = frames[1]
        rho_t = (frames[2].rho - frames[0].rho) / (2.0 * dt)
        res = (rho_t - laplacian_apply(M, f0.rho) + 2.0 * hessian_sq(M, f0.v)
               + 2.0 * ricci_quadratic(M, f0.v) - 2.0 * gradient_dot(M, f0.v, f0.rho))
        clamped = frames[0].clamped | f0.clamped | frames[2].clamped
        return float(np.max(np.abs(res[~clamped])))
    a, b, c = _window(snapshots, 3)
    clamped = (a <= eps) | (b <= eps) | (c <= eps)
    if clamped.all():
        raise FrameInvalid("all nodes clamped")
    lb = np.log(np.maximum(b, eps))
    w = gradient_sq(M, lb)
    if kind == "eq_3_2":
        if ut is None:
            vt = (np.log(np.maximum(c, eps)) - np.log(np.maximum(a, eps))) / (2.0 * dt)
        else:
            vt = _values(M, ut) / b
        res = vt - laplacian_apply(M, lb) - w
        if not linear:
            res = res - b ** (params.p - 1)
    else:
        p = params.p
        Y = np.maximum(b, eps) ** (p - 1)
        if ut is None:
            Yt = (np.maximum(c, eps) ** (p - 1) - np.maximum(a, eps) ** (p - 1)) / (2.0 * dt)
        else:
            Yt = (p - 1) * np.maximum(b, eps) ** (p - 2) * _values(M, ut)
        res = (Yt - laplacian_apply(M, Y) - (p - 1) * b ** (2 * p - 2)
               + (p - 1) * (p - 2) * Y * w)
    return float(np.max(np.abs(res[~clamped])))


# ---------------------------------------------------------------------------
# inequalities


def inequality_3_11_slack(snapshots, dt: float, M: DiscreteManifold, params: HarnackParams,
                          K: float | None = None) -> tuple[np.ndarray, MonitorFrame]:
    """Per-node RHS - LHS of the differential inequality for rho.

    RHS = -alpha1 (lap log u)^2 + 2 <grad log u, grad rho> - alpha2 rho^2
          - alpha3 w^2 + 2 K w,   LHS = rho_t - lap rho.
    Clamped nodes carry +inf.
    """
    if not isinstance(params, HarnackParams):
        raise ValueError("the differential inequality needs semilinear HarnackParams")
    if not (params.alpha1 > 0 and params.alpha2 > 0 and params.alpha3 > 0 and params.alpha_max > 0):
        raise ValueError("infeasible parameters")
    K = M.K if K is None else K
    snaps = _window(snapshots, 5)
    frames = [rho_field(snaps[i - 1], snaps[i], snaps[i + 1], dt, M, params, False)
              for i in (1, 2, 3)]
    f0 = frames[1]
    lhs = (frames[2].rho - frames[0].rho) / (2.0 * dt) - laplacian_apply(M, f0.rho)
    rhs = (-params.alpha1 * f0.lap_log_u ** 2 + 2.0 * gradient_dot(M, f0.v, f0.rho)
           - params.alpha2 * f0.rho ** 2 - params.alpha3 * f0.w ** 2 + 2.0 * K * f0.w)
    slack = rhs - lhs
    clamped = frames[0].clamped | f0.clamped | frames[2].clamped
    slack[clamped] = np.inf
    return slack, f0


def inequality_3_11_residual(snapshots, dt: float, M: DiscreteManifold, params: HarnackParams,
                             K: float | None = None) -> float:
    slack, _ = inequality_3_11_slack(snapshots, dt, M, params, K)
    return float(slack.min())


def lemma_4_1_slack(lap_log_u, rho, y, w, params) -> np.ndarray:
    """|lap log u|^2 - [rho^2/gamma^2 + ((gamma-beta)/gamma)^2 y^2 + ((gamma-1)/gamma)^2 w^2]."""
    g, b = params.gamma, params.beta
    lap_log_u, rho, y, w = (np.asarray(x, dtype=float) for x in (lap_log_u, rho, y, w))
    return lap_log_u ** 2 - (rho ** 2 / g ** 2 + ((g - b) / g) ** 2 * y ** 2
                             + ((g - 1) / g) ** 2 * w ** 2)


def lemma_4_1_check(snapshots, dt: float, M: DiscreteManifold, params) -> float | None:
    """Minimum slack over nodes with rho > 0; ``None`` when no such node (vacuous)."""
    a, b, c = _window(snapshots, 3)
    f = rho_field(a, b, c, dt, M, params)
    sel = f.active & (f.rho > 0)
    if not sel.any():
        return None
    y = np.zeros_like(f.rho) if _is_linear(params, None) else f.u ** (params.p - 1)
    return float(lemma_4_1_slack(f.lap_log_u, f.rho, y, f.w, params)[sel].min())


def ode_comparison_check(traj: Trajectory, params: HarnackParams, C0: float | None = None,
                         K: float | None = None, tol: float = 1e-8) -> CheckReport:
    """u_t >= (beta/gamma) u^p - (C0 K/gamma) u wherever rho <= C0 K.

    u_t is taken as u * v_t with the same centered difference that enters
    rho, so the implication is checked exactly as stated.
    """
    C0 = params.c0 if C0 is None else C0
    K = traj.manifold.K if K is None else K
    bound = C0 * K
    M = traj.manifold
    worst = -math.inf
    points = 0
    clamped_viol = 0
    for i0, i1, dt in traj.uniform_snapshot_runs():
        for i in range(i0 + 1, i1 - 1):
            s = traj.snapshots
            f = rho_field(s[i - 1], s[i], s[i + 1], dt, M, params)
            sel = f.rho <= bound
            ut = f.u * f.vt
            viol = (params.beta / params.gamma) * f.u ** params.p - (bound / params.gamma) * f.u - ut
            clamped_viol += int(np.sum(sel & f.clamped & (viol > tol)))
            sel &= f.active
            if sel.any():
                points += int(sel.sum())
                worst = max(worst, float(viol[sel].max()))
    return CheckReport("ode_comparison", worst <= tol, worst, tol,
                       {"points": points, "clamped_violations": clamped_viol})


def sup_bound(params: HarnackParams, C0: float | None = None, K: float = 0.0) -> float:
    """Upper bound (2 C0 K / beta)^(1/(p-1)) for positive entire solutions when K > 0."""
    C0 = params.c0 if C0 is None else C0
    if not K > 0:
        raise ValueError("the sup bound needs K > 0")
    return (2.0 * C0 * K / params.beta) ** (1.0 / (params.p - 1))


def blowup_lower_bound_check(traj: Trajectory, params: HarnackParams,
                             rtol: float = 1e-2) -> CheckReport:
    """Growth implied by rho <= 0 through u_t >= (beta/gamma) u^p.

    Picks the first monitored time t0 and node x0 with rho <= 0 and checks
    max u(t) >= (u(x0,t0)^(1-p) - (beta/gamma)(p-1)(t-t0))^(-1/(p-1)).
    """
    M = traj.manifold
    p = params.p
    for i0, i1, dt in traj.uniform_snapshot_runs():
        for i in range(i0 + 1, i1 - 1):
            s = traj.snapshots
            f = rho_field(s[i - 1], s[i], s[i + 1], dt, M, params)
            sel = f.active & (f.rho <= 0)
            if not sel.any():
                continue
            node = int(np.flatnonzero(sel)[np.argmax(f.u[sel])])
            t0 = traj.snapshot_times[i]
            u0 = f.u[node]
            t = traj.times
            keep = t >= t0
            base = u0 ** (1 - p) - (params.beta / params.gamma) * (p - 1) * (t[keep] - t0)
            ok = base > 0
            lower = base[ok] ** (-1.0 / (p - 1))
            measured = traj.series["max"][keep][ok]
            ratio = float(np.min(measured / lower))
            return CheckReport("blowup_lower_bound", ratio >= 1 - rtol, ratio, 1 - rtol,
                               {"t0": float(t0), "node": node})
    return CheckReport("blowup_lower_bound", True, math.nan, 1 - rtol, {"vacuous": True})


# ---------------------------------------------------------------------------
# series along trajectories


@dataclass
class MonitorSeries:
    params: object
    K: float
    t: np.ndarray
    sup_rho: np.ndarray
    inf_rho: np.ndarray
    min_slack_3_11: np.ndarray
    residual_3_2: np.ndarray
    residual_3_7: np.ndarray
    clamped_count: np.ndarray
    blowup: bool = False
    extras: dict = field(default_factory=dict)

    COLUMNS = ("t", "sup_rho", "inf_rho", "min_slack_3_11", "residual_3_2",
               "residual_3_7", "clamped_count")

    def rows(self):
        for k in range(len(self.t)):
            yield tuple(getattr(self, c)[k] for c in self.COLUMNS)


def monitor_trajectory(traj: Trajectory, params, linear: bool | None = None,
                       K: float | None = None) -> MonitorSeries:
    """Evaluate rho and the identity/inequality residuals at every snapshot
    with two uniformly spaced neighbours on each side."""
    M = traj.manifold
    linear = _is_linear(params, linear)
    K = M.K if K is None else K
    cols = {c: [] for c in MonitorSeries.COLUMNS}
    s = traj.snapshots
    for i0, i1, dt in traj.uniform_snapshot_runs():
        for i in range(i0 + 2, i1 - 2):
            f = rho_field(s[i - 1], s[i], s[i + 1], dt, M, params, linear)
            cols["t"].append(traj.snapshot_times[i])
            cols["sup_rho"].append(f.sup_rho)
            cols["inf_rho"].append(f.inf_rho)
            cols["clamped_count"].append(int(f.clamped.sum()))
            cols["residual_3_2"].append(identity_residual("eq_3_2", s[i - 1:i + 2], dt, M, params,
                                                          linear=linear))
            if linear:
                cols["residual_3_7"].append(math.nan)
                cols["min_slack_3_11"].append(math.nan)
            else:
                cols["residual_3_7"].append(identity_residual("eq_3_7", s[i - 1:i + 2], dt, M,
                                                              params, linear=False))
                if M.structured:
                    cols["min_slack_3_11"].append(
                        inequality_3_11_residual(s[i - 2:i + 3], dt, M, params, K))
                else:
                    cols["min_slack_3_11"].append(math.nan)
    arrays = {k: np.array(v, dtype=float) for k, v in cols.items()}
    arrays["clamped_count"] = arrays["clamped_count"].astype(int)
    return MonitorSeries(params, K, blowup=traj.status == "blowup", **arrays)


def export_monitor_csv(series: MonitorSeries, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MonitorSeries.COLUMNS)
        for row in series.rows():
            w.writerow([repr(float(x)) if not isinstance(x, (int, np.integer)) else int(x)
                        for x in row])
    return path


def fit_asymptote(t: np.ndarray, y: np.ndarray, t0: float,
                  shifts: np.ndarray | None = None) -> tuple[float, float, float]:
    """Least-squares fit y ~ a + b / (t - t0 + s); returns (a, b, s).

    For each trial shift s the model is linear in (a, b); the shift with
    the smallest residual wins.
    """
    if shifts is None:
        shifts = np.geomspace(1e-3, 1e3, 241)
    best = None
    for s in shifts:
        A = np.stack([np.ones_like(t), 1.0 / (t - t0 + s)], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        r = float(np.sum((A @ coef - y) ** 2))
        if best is None or r < best[0]:
            best = (r, float(coef[0]), float(coef[1]), float(s))
    return best[1], best[2], best[3]


def harnack_trend_check(series: MonitorSeries, C0: float, K: float,
                        tol: float = 0.05) -> CheckReport:
    """Fitted late-time asymptote of sup rho must not exceed C0 K + tol.

    The bound is a statement about entire solutions; on a finite window
    only the asymptote of a + b/(t - t0 + s), fitted on the second half
    of the span, is compared.
    """
    if series.blowup:
        return CheckReport("harnack_trend", True, math.nan, C0 * K + tol,
                           {"status": "blow-up regime, Liouville mechanism confirmed"})
    t = np.asarray(series.t, dtype=float)
    y = np.asarray(series.sup_rho, dtype=float)
    if t.size < 4:
        raise ValueError("too few monitor frames for a trend fit")
    t0, t1 = float(t[0]), float(t[-1])
    if t1 - t0 < 1.0 - 1e-12:
        raise ValueError("the monitored span must be at least one time unit")
    sel = t >= t0 + 0.5 * (t1 - t0)
    a, b, s = fit_asymptote(t[sel], y[sel], t0)
    return CheckReport("harnack_trend", a <= C0 * K + tol, a, C0 * K + tol,
                       {"asymptote": a, "b": b, "shift": s, "sup_rho_last": float(y[-1]),
                        "sup_rho_trace": [float(v) for v in y]})


def series_from_frames(frames: Sequence[MonitorFrame], params, K: float = 0.0) -> MonitorSeries:
    t = np.array([f.t for f in frames])
    nan = np.full(t.shape, math.nan)
    return MonitorSeries(params, K, t, np.array([f.sup_rho for f in frames]),
                         np.array([f.inf_rho for f in frames]), nan, nan, nan.copy(),
                         np.array([int(f.clamped.sum()) for f in frames]))


# ---------------------------------------------------------------------------
# tolerances and calibration


def linear_flow_residual(M: DiscreteManifold, dt: float, gamma: float = 2.0,
                         t_end: float | None = None, amplitude: float = 0.3) -> float:
    """Largest eq_6_2 residual along a linear flow from 1 + amplitude*sin x.

    This measures the discretisation error of a rho-type identity at the
    given (h, dt) and sets the scale for inequality tolerances.
    """
    x = M.coords[:, 0]
    u0 = 1.0 + amplitude * np.sin(x)
    t_end = 10 * dt if t_end is None else t_end
    traj = evolve(u0, M, FlowConfig(dt=dt, t_end=t_end))
    params = LinearHarnackParams(M.dimension, gamma)
    worst = 0.0
    s = traj.snapshots
    for i0, i1, h in traj.uniform_snapshot_runs():
        for i in range(i0 + 2, i1 - 2):
            worst = max(worst, identity_residual("eq_6_2", s[i - 2:i + 3], h, M, params))
    return worst


def calibrate_linear_constant(manifolds: Sequence[DiscreteManifold], gamma: float = 2.0,
                              t_end: float = 2.0, dt: float = 1e-2,
                              skip: float = 0.5) -> dict:
    """Empirical sup rho / K over linear flows on curved manifolds.

    Returns the largest observed ratio and the calibrated constant
    (1.1 times that ratio).  Manifolds with K = 0 are skipped.
    """
    ratios = []
    for M in manifolds:
        if M.K <= 0:
            continue
        x = M.coords[:, 0]
        for u0 in (2.0 + np.sin(x), 1.5 + 0.5 * np.cos(x)):
            traj = evolve(u0, M, FlowConfig(dt=dt, t_end=t_end))
            ser = monitor_trajectory(traj, LinearHarnackParams(M.dimension, gamma))
            late = ser.t >= skip
            if late.any():
                ratios.append(float(ser.sup_rho[late].max()) / M.K)
    worst = max(ratios) if ratios else 0.0
    return {"ratios": ratios, "max_ratio": worst, "calibrated": 1.1 * worst}
