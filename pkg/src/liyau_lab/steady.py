"""Sign-changing steady states of u_t - lap u = |u|^(p-1) u on closed manifolds.

The Dirichlet energy E(u) = 1/2 int |grad u|^2 is minimised over

    A = { int |u|^(p+1) = 1,  int |u|^(p-1) u = 0 },

and the minimiser is rescaled by the Lagrange multiplier into a solution of
-lap U = |U|^(p-1) U.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import factorized
from scipy.special import ellipj, ellipk

from .exponents import sobolev_exponent
from .geometry import DiscreteManifold, _values, integrate

logger = logging.getLogger(__name__)


class ProjectionError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


def energy(M: DiscreteManifold, u) -> float:
    u = _values(M, u)
    return -0.5 * float(u @ (M.stiffness @ u))


def constraint_values(M: DiscreteManifold, u, p: float) -> tuple[float, float]:
    u = _values(M, u)
    a = np.abs(u)
    return integrate(M, a ** (p + 1)), integrate(M, a ** (p - 1) * u)


@dataclass
class ConstraintState:
    u: np.ndarray
    c1: float
    c2: float
    E: float

    @classmethod
    def of(cls, M: DiscreteManifold, u, p: float) -> "ConstraintState":
        c1, c2 = constraint_values(M, u, p)
        return cls(np.asarray(u, dtype=float), c1, c2, energy(M, u))


def project_to_A(u, M: DiscreteManifold, p: float) -> np.ndarray:
    """Shift so that int |u-c|^(p-1)(u-c) = 0, then scale to unit L^(p+1) norm.

    The shift c is found by bracketing on [min u, max u]; the map is
    strictly decreasing in c.  Scaling keeps the sign constraint by
    homogeneity.
    """
    u = np.array(_values(M, u), dtype=float)
    lo, hi = float(u.min()), float(u.max())
    if hi - lo <= 1e-14 * max(1.0, abs(hi)):
        raise ProjectionError("constant field cannot be projected onto the constraint set")
    W = M.volume_weights

    def g(c):
        v = u - c
        return float(np.dot(W, np.abs(v) ** (p - 1) * v))

    scale = float(np.dot(W, np.abs(u) ** p))
    if abs(g(0.0)) <= 1e-14 * scale:
        c = 0.0
    else:
        c = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    v = u - c
    norm = float(np.dot(W, np.abs(v) ** (p + 1)))
    if abs(norm - 1.0) <= 1e-15:
        return v
    return v * norm ** (-1.0 / (p + 1))


@dataclass
class SteadyResult:
    u: np.ndarray
    energy: float
    lam: float
    mu: float
    U: np.ndarray
    pde_residual: float
    iterations: int
    converged: bool
    energy_history: list = field(default_factory=list, repr=False)
    gradient_norm: float = math.nan

    def summary(self) -> dict:
        return {"energy": self.energy, "lambda": self.lam, "mu": self.mu,
                "pde_residual": self.pde_residual, "iterations": self.iterations,
                "converged": self.converged, "gradient_norm": self.gradient_norm}


@dataclass(frozen=True)
class MinimizeOptions:
    max_iter: int = 50_000
    energy_tol: float = 1e-12
    grad_tol: float = 1e-8
    step: float = 1.0
    max_step: float = 1e3
    min_step: float = 1e-14


class _TangentGradient:
    """(I - lap)^(-1)-preconditioned energy gradient projected onto the
    tangent space of A in the preconditioner metric."""

    def __init__(self, M: DiscreteManifold, p: float):
        self.M, self.p = M, p
        P = (sp.diags(M.volume_weights) - M.stiffness).tocsc()
        self.P = P
        self.solve = factorized(P)

    def __call__(self, u: np.ndarray) -> tuple[np.ndarray, float]:
        W = self.M.volume_weights
        p = self.p
        g = -(self.M.stiffness @ u)
        a = np.abs(u)
        normals = np.stack([(p + 1) * W * a ** (p - 1) * u, p * W * a ** (p - 1)], axis=1)
        Pg = self.solve(g)
        Pn = np.stack([self.solve(normals[:, k]) for k in range(2)], axis=1)
        G = normals.T @ Pn
        c = np.linalg.lstsq(G, normals.T @ Pg, rcond=None)[0]
        d = Pg - Pn @ c
        return d, math.sqrt(max(float(d @ (self.P @ d)), 0.0))


def minimize_energy(M: DiscreteManifold, p: float, seed, opts: MinimizeOptions | None = None,
                    ) -> SteadyResult:
    """Projected preconditioned gradient descent for E on A.

    Each iteration steps along the tangent-projected preconditioned gradient,
    retracts with ``project_to_A`` and halves the step until the energy
    decreases; accepted steps double the next trial step.
    """
    opts = opts or MinimizeOptions()
    N = M.dimension
    if not (1 < p < sobolev_exponent(N)):
        raise ValueError(f"p must lie in (1, p_S({N}))")
    u = project_to_A(seed, M, p)
    E = energy(M, u)
    S = M.stiffness
    grad = _TangentGradient(M, p)
    tau = opts.step
    history = [E]
    converged = False
    gnorm = math.nan
    dE = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        d, gnorm = grad(u)
        if gnorm <= opts.grad_tol and abs(dE) <= opts.energy_tol:
            converged = True
            break
        while True:
            trial = project_to_A(u - tau * d, M, p)
            # E(a) - E(b) = -1/2 (a - b).S(a + b), free of cancellation near the minimum
            dE = -0.5 * float((trial - u) @ (S @ (trial + u)))
            if dE <= 0:
                break
            tau *= 0.5
            if tau < opts.min_step:
                break
        if tau < opts.min_step:
            # no descent left at machine precision
            converged = gnorm <= opts.grad_tol
            break
        u, E = trial, E + dE
        history.append(E)
        tau = min(2.0 * tau, opts.max_step)
    else:
        logger.warning("energy minimisation hit the iteration cap (%d)", opts.max_iter)
    E = energy(M, u)
    lam, mu = multipliers(u, M, p, check=False)
    U, res = rescale_and_residual(u, lam, M, p) if lam > 0 else (np.zeros_like(u), math.inf)
    return SteadyResult(u, E, lam, mu, U, res, it, converged, history, gnorm)


def multipliers(u, M: DiscreteManifold, p: float, check: bool = True) -> tuple[float, float]:
    """lambda = int (-lap u) u and mu = int (-lap u) / int |u|^(p-1)."""
    u = _values(M, u)
    Su = M.stiffness @ u  # W lap u
    lam = -float(u @ Su)
    den = integrate(M, np.abs(u) ** (p - 1))
    mu = -float(Su.sum()) / den if den > 0 else math.nan
    if check:
        if not lam > 0:
            raise ValueError("lambda <= 0: minimisation failed")
        if abs(mu) > 1e-6 * lam:
            raise ValueError(f"|mu|/lambda = {abs(mu) / lam:.3e} exceeds 1e-6")
    return lam, mu


def rescale_and_residual(u, lam: float, M: DiscreteManifold, p: float) -> tuple[np.ndarray, float]:
    """U = lam^(1/(p-1)) u and ||lap U + |U|^(p-1) U||_inf / ||U||_inf^p."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    U = lam ** (1.0 / (p - 1)) * _values(M, u)
    r = M.laplacian @ U + np.abs(U) ** (p - 1) * U
    return U, float(np.max(np.abs(r)) / np.max(np.abs(U)) ** p)


# ---------------------------------------------------------------------------
# one-dimensional oracle


@dataclass
class OracleProfile:
    p: float
    L: float
    modes: int
    amplitude: float
    x: np.ndarray
    U: np.ndarray
    lam: float
    energy: float
    method: str

    def __call__(self, x):
        return self._eval(np.asarray(x, dtype=float))

    _eval: object = field(default=None, repr=False)


def _elliptic_profile(a: float):
    def U(x):
        cn = ellipj(a * x, 0.5)[1]
        return a * cn
    return U


def _quarter_period(A: float, p: float) -> float:
    def rhs(_, y):
        return [y[1], -abs(y[0]) ** (p - 1) * y[0]]

    def hit_zero(_, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1
    T_guess = 10.0 * A ** (-(p - 1) / 2) + 10.0
    sol = solve_ivp(rhs, (0.0, T_guess), [A, 0.0], events=hit_zero, rtol=1e-12, atol=1e-14)
    if not sol.t_events[0].size:
        raise OracleError(f"no zero crossing for amplitude {A}")
    return float(sol.t_events[0][0])


def _shooting_profile(p: float, period: float):
    """Amplitude by bisection on the period of the shooting orbit."""
    lo, hi = 1e-3, 1.0
    while 4 * _quarter_period(hi, p) > period:
        hi *= 2.0
        if hi > 1e8:
            raise OracleError("no periodic orbit with the requested period")
    while 4 * _quarter_period(lo, p) < period:
        lo *= 0.5
        if lo < 1e-12:
            raise OracleError("no periodic orbit with the requested period")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 4 * _quarter_period(mid, p) > period:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    A = 0.5 * (lo + hi)

    def rhs(_, y):
        return [y[1], -abs(y[0]) ** (p - 1) * y[0]]

    sol = solve_ivp(rhs, (0.0, period), [A, 0.0], dense_output=True, rtol=1e-12, atol=1e-14)

    def U(x):
        return sol.sol(np.mod(x, period))[0]
    return A, U


def oracle_1d(p: float, L: float = 2 * math.pi, n: int = 4096, modes: int = 1) -> OracleProfile:
    """Periodic solution of -U'' = |U|^(p-1) U with ``modes`` periods on a circle of length L.

    p = 3 uses U(x) = a cn(a x | m = 1/2) with a = 4 K(1/2) modes / L; other
    exponents use shooting from U(0) = A, U'(0) = 0 with bisection on A.
    The energy and multiplier refer to the normalised minimiser in A:
    lambda = (int |U|^(p+1))^((p-1)/(p+1)) and E = lambda / 2.
    """
    if modes < 1:
        raise OracleError("mode count must be >= 1")
    period = L / modes
    if p == 3:
        a = 4.0 * float(ellipk(0.5)) / period
        fn = _elliptic_profile(a)
        amp, method = a, "jacobi_cn"
    else:
        amp, fn = _shooting_profile(p, period)
        method = "shooting"
    x = np.arange(n) * (L / n)
    U = fn(x)
    integral = float(np.sum(np.abs(U) ** (p + 1)) * (L / n))
    lam = integral ** ((p - 1) / (p + 1))
    prof = OracleProfile(p, L, modes, amp, x, U, lam, 0.5 * lam, method)
    prof._eval = fn
    return prof


def fourier_shift(f: np.ndarray, shift: float, L: float) -> np.ndarray:
    """Periodic samples of x -> f(x - shift) by spectral interpolation."""
    n = f.size
    k = np.fft.fftfreq(n, d=L / n) * 2 * np.pi
    return np.real(np.fft.ifft(np.fft.fft(f) * np.exp(-1j * k * shift)))


def aligned_l2_distance(U: np.ndarray, V: np.ndarray, L: float) -> tuple[float, float, int]:
    """min over circle shifts and sign of ||U(. - s) * sign - V||_L2 on [0, L).

    Coarse shift from discrete cross-correlation, refined with spectral
    sub-grid shifts.  Returns (distance, shift, sign).
    """
    n = U.size
    h = L / n
    best = None
    for sign in (1, -1):
        A = sign * U
        corr = np.real(np.fft.ifft(np.fft.fft(V) * np.conj(np.fft.fft(A))))
        k0 = int(np.argmax(corr))

        def dist(s, A=A):
            return math.sqrt(float(np.sum((fourier_shift(A, s, L) - V) ** 2)) * h)

        res = optimize.minimize_scalar(dist, bracket=(k0 * h - h, k0 * h, k0 * h + h),
                                       tol=1e-12)
        cand = (float(res.fun), float(res.x) % L, sign)
        if best is None or cand[0] < best[0]:
            best = cand
    return best
