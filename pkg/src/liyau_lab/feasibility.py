"""Parameter feasibility for the semilinear Li-Yau quantity.

A pair (beta, gamma) is admissible for exponent p in dimension N when

    gamma > max{1, beta, 2 - beta p}   and   gamma^2 (p - 1) / (gamma - beta) < 8 / N.

The two margins are reported as slacks ``s1`` and ``s2``.  Given an
admissible pair, ``find_params`` also fixes the coefficients alpha1..alpha3
of the differential inequality satisfied by

    rho = |grad u / u|^2 - gamma (log u)_t + beta u^(p-1).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exponents import star_exponent

STRICT_MARGIN = 1e-9
DEFAULT_BOX = ((0.0, 2.0), (1.0, 20.0))
DEFAULT_STEPS = (400, 400)
# finer box for the threshold bisection: near p_star the admissible set
# shrinks to gamma -> 1+ (N <= 2) or gamma = 4/(p+1) < 2, with beta <= 1/p
THRESHOLD_BOX = ((0.0, 1.0), (1.0, 2.5))
THRESHOLD_STEPS = (2000, 3000)


class InfeasibleError(ValueError):
    def __init__(self, N: int, p: float, threshold: float, detail: str = ""):
        self.N, self.p, self.threshold = N, p, threshold
        msg = (f"no admissible (beta, gamma) for N={N}, p={p:g}: "
               f"p must lie in (1, p_star) with p_star = {threshold:.5f}")
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class FeasibilityReport:
    N: int
    p: float
    feasible: bool
    witness: tuple[float, float] | None
    s1: float | None
    s2: float | None
    search_box: tuple | None = None
    grid_steps: tuple | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HarnackParams:
    N: int
    p: float
    beta: float
    gamma: float
    alpha: float
    alpha_max: float
    alpha1: float
    alpha2: float
    alpha3: float
    c0: float = 1.0
    source: str = field(default="recipe", compare=False)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LinearHarnackParams:
    """gamma > 1 for the linear heat equation; c_lin plays the role of C_{N,gamma}."""

    N: int
    gamma: float
    c_lin: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")


def slacks(N: int, p: float, beta, gamma):
    """Vectorised (s1, s2); s2 is -inf where gamma <= beta."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    s1 = gamma - np.maximum(np.maximum(1.0, beta), 2.0 - beta * p)
    gap = gamma - beta
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(gap > 0, 8.0 / N - gamma ** 2 * (p - 1.0) / gap, -np.inf)
    return s1, s2


def check_constraints(N: int, p: float, beta: float, gamma: float) -> FeasibilityReport:
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not gamma > beta:
        raise ValueError("gamma must exceed beta (s2 undefined otherwise)")
    s1, s2 = slacks(N, p, beta, gamma)
    s1, s2 = float(s1), float(s2)
    ok = s1 > 0 and s2 > 0
    return FeasibilityReport(N, p, ok, (float(beta), float(gamma)), s1, s2)


def quadratic_form_definite(N: int, p: float, beta: float, gamma: float) -> bool:
    """Negative definiteness of -(2/N) X^2 - gamma (p-1) X Y - (gamma-beta)(p-1) Y^2."""
    off = -0.5 * gamma * (p - 1.0)
    A = np.array([[-2.0 / N, off], [off, -(gamma - beta) * (p - 1.0)]])
    return bool(np.linalg.eigvalsh(A).max() < 0)


def feasible_scan(N: int, p: float, box=DEFAULT_BOX, grid_steps=DEFAULT_STEPS,
                  chunk: int = 256) -> FeasibilityReport:
    """Brute-force search for an admissible pair on a (beta, gamma) grid.

    Grid points exclude the lower box edge and include the upper one.  The
    first admissible point in lexicographic (beta, gamma) order is returned.
    """
    (b0, b1), (g0, g1) = box
    nb, ng = grid_steps
    betas = b0 + (b1 - b0) * np.arange(1, nb + 1) / nb
    gammas = g0 + (g1 - g0) * np.arange(1, ng + 1) / ng
    for start in range(0, nb, chunk):
        b = betas[start:start + chunk, None]
        s1, s2 = slacks(N, p, b, gammas[None, :])
        ok = (s1 > STRICT_MARGIN) & (s2 > STRICT_MARGIN)
        if ok.any():
            i, j = np.argwhere(ok)[0]
            beta, gamma = float(betas[start + i]), float(gammas[j])
            return FeasibilityReport(N, p, True, (beta, gamma), float(s1[i, j]), float(s2[i, j]),
                                     box, tuple(grid_steps))
    return FeasibilityReport(N, p, False, None, None, None, box, tuple(grid_steps))


def threshold_trace(N: int, tol: float = 1e-3, lo: float = 1.0 + 1e-3, hi: float = 10.0,
                    box=THRESHOLD_BOX, grid_steps=THRESHOLD_STEPS) -> list[dict]:
    """Bisection on p with ``feasible_scan`` as predicate; one row per step."""
    if tol < 1e-3:
        raise ValueError("tol must be >= 1e-3")
    rows = []
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok = feasible_scan(N, mid, box, grid_steps).feasible
        rows.append({"iteration": it, "lo": lo, "hi": hi, "p": mid, "feasible": ok})
        if ok:
            lo = mid
        else:
            hi = mid
        it += 1
    rows.append({"iteration": it, "lo": lo, "hi": hi, "p": 0.5 * (lo + hi), "feasible": None})
    return rows


def threshold_estimate(N: int, tol: float = 1e-3, **kw) -> float:
    return threshold_trace(N, tol, **kw)[-1]["p"]


# ---------------------------------------------------------------------------
# constructive witness


def _quadratic_roots(a: float, b: float, c: float):
    disc = b * b - 4 * a * c
    if disc <= 0:
        return None
    r = math.sqrt(disc)
    return (-b - r) / (2 * a), (-b + r) / (2 * a)


def _gamma_above(beta: float, p: float):
    base = max(1.0, beta, 2.0 - beta * p)
    if 2 * beta > base:
        yield 2 * beta
    for d in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        yield base + d * base


def _recipe_candidates(N: int, p: float):
    if p < 1 + 4.0 / N:
        beta = 1e-3
        c = 8.0 / (N * (p - 1))
        roots = _quadratic_roots(1.0, -c, c * beta)  # gamma^2 - c gamma + c beta = 0
        if roots is not None:
            g_lo, g_hi = roots
            lo = max(2 - beta * p, 1 + 1e-3, g_lo, beta)
            if lo < g_hi:
                yield beta, 0.5 * (lo + g_hi)
        return
    # x = 2 - beta p must make (p-1) x^2 - 8(p+1)/(N p) x + 16/(N p) negative
    roots = _quadratic_roots(p - 1.0, -8.0 * (p + 1) / (N * p), 16.0 / (N * p))
    if roots is None:
        return
    x_lo, x_hi = roots
    bound = min(1.0 / p, 2.0 / (p + 2)) if p < 2 else 1.0 / p
    b_lo = max((2 - x_hi) / p, 0.0)
    b_hi = min((2 - x_lo) / p, bound)
    if b_lo >= b_hi:
        return
    beta = 0.5 * (b_lo + b_hi)
    for gamma in _gamma_above(beta, p):
        yield beta, gamma


def _optimum_candidates(N: int, p: float):
    # minimiser of gamma^2/(gamma - beta) along gamma = 2 - beta p, clipped to [1, 2]
    x = min(max(4.0 / (p + 1), 1.0), 2.0)
    for d in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        gamma = max(x, 1.0 + d)
        beta = max((2.0 - gamma) / p, 0.0) + d / p
        if gamma > beta:
            yield beta, gamma


def coefficients(N: int, p: float, beta: float, gamma: float) -> dict:
    """alpha and the derived alpha1..alpha3.

    alpha_max = 2/N - gamma^2 (p-1) / (4 (gamma - beta)) is what remains of the
    Cauchy bound |Hess log u|^2 >= |lap log u|^2 / N after absorbing the
    cross term gamma (p-1) u^(p-1) lap log u; half of it is spent on the rho^2
    and |grad u/u|^4 terms, the other half stays on |lap log u|^2.
    """
    alpha_max = 2.0 / N - gamma ** 2 * (p - 1) / (4.0 * (gamma - beta))
    alpha = 0.5 * alpha_max
    return {
        "alpha": alpha,
        "alpha_max": alpha_max,
        "alpha1": alpha_max - alpha,
        "alpha2": alpha / gamma ** 2,
        "alpha3": alpha * (gamma - 1) ** 2 / gamma ** 2,
    }


def find_params(N: int, p: float, c0: float = 1.0) -> HarnackParams:
    threshold = star_exponent(N)
    if not (1 < p < threshold - 1e-6):
        raise InfeasibleError(N, p, threshold)
    chosen = None
    for source, cands in (("recipe", _recipe_candidates(N, p)),
                          ("optimum", _optimum_candidates(N, p))):
        for beta, gamma in cands:
            if not (beta > 0 and gamma > beta):
                continue
            rep = check_constraints(N, p, beta, gamma)
            if rep.s1 > STRICT_MARGIN and rep.s2 > STRICT_MARGIN:
                chosen = (source, beta, gamma)
                break
        if chosen:
            break
    if chosen is None:
        rep = feasible_scan(N, p)
        if not rep.feasible:
            raise InfeasibleError(N, p, threshold, "constraint region is empty in the search box")
        chosen = ("scan", *rep.witness)
    source, beta, gamma = chosen
    return HarnackParams(N=N, p=p, beta=beta, gamma=gamma, c0=c0, source=source,
                         **coefficients(N, p, beta, gamma))
