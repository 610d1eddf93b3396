"""Critical exponents of the semilinear heat equation u_t - lap u = u^p."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

INF = math.inf

REGIMES = ("below_fujita", "fujita_to_star", "star_to_sobolev", "sobolev_and_above")


@dataclass(frozen=True)
class ExponentTable:
    N: int
    p_sobolev: float
    p_bidaut_veron: float
    p_fujita: float
    p_star: float

    def as_dict(self) -> dict:
        return {k: (None if v == INF else v) if k != "N" else v for k, v in asdict(self).items()}


def sobolev_exponent(N: int) -> float:
    return (N + 2) / (N - 2) if N >= 3 else INF


def bidaut_veron_exponent(N: int) -> float:
    return N * (N + 2) / (N - 1) ** 2 if N >= 2 else INF


def fujita_exponent(N: int) -> float:
    return 1.0 + 2.0 / N


def star_exponent(N: int) -> float:
    """Upper end of the Li-Yau subcritical range, 8 in one dimension."""
    if N == 1:
        return 8.0
    return (N + 2 + math.sqrt(N * N + 8 * N)) / (2 * (N - 1))


def exponent_table(N: int) -> ExponentTable:
    if int(N) != N or N < 1:
        raise ValueError(f"dimension must be an integer >= 1, got {N}")
    N = int(N)
    return ExponentTable(N, sobolev_exponent(N), bidaut_veron_exponent(N),
                         fujita_exponent(N), star_exponent(N))


def classify(N: int, p: float) -> str:
    """Regime of p relative to the Fujita, star and Sobolev exponents.

    Intervals are half-open [lower, upper), so a boundary value belongs to
    the regime above it.
    """
    if not p > 1:
        raise ValueError(f"exponent must exceed 1, got {p}")
    t = exponent_table(N)
    if p < t.p_fujita:
        return "below_fujita"
    if p < t.p_star:
        return "fujita_to_star"
    if p < t.p_sobolev:
        return "star_to_sobolev"
    return "sobolev_and_above"


def format_table(t: ExponentTable) -> str:
    rows = [("N", str(t.N))]
    for name in ("p_sobolev", "p_bidaut_veron", "p_fujita", "p_star"):
        v = getattr(t, name)
        rows.append((name, "inf" if v == INF else f"{v:.12g}"))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
