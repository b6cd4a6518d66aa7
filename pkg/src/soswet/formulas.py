"""Closed-form constants of the 2D SOS wetting problem and the layering function F.

All quantities are written in terms of ``J = exp(-2 beta)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class DenominatorConvention(str, enum.Enum):
    """Which denominator multiplies the pair penalty in F.

    ``AS_PRINTED`` uses ``1 - J^3`` (the displayed form of F), ``AS_DERIVED`` uses
    ``1 - J^4`` (what the two-site G computation produces).
    """

    AS_PRINTED = "printed"
    AS_DERIVED = "derived"


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not beta > 0 or not math.isfinite(beta):
        raise ValueError(f"beta must be positive and finite, got {beta}")
    return beta


def coupling(beta: float) -> float:
    return math.exp(-2.0 * _check_beta(beta))


def wetting_critical_point(beta: float) -> float:
    """h_w(beta) = -log(1 - exp(-4 beta))."""
    return -math.log1p(-math.exp(-4.0 * _check_beta(beta)))


def chalker_bounds(beta: float) -> tuple[float, float]:
    beta = _check_beta(beta)
    lower = -math.log1p(-math.exp(-4.0 * beta))
    upper = math.log(16.0) + math.log((math.exp(beta) + 1.0) / math.expm1(beta))
    return lower, upper


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature plus the pinning reward, stored both as h and as u = h - h_w."""

    beta: float
    h: float = 0.0

    def __post_init__(self):
        _check_beta(self.beta)

    @classmethod
    def from_u(cls, beta: float, u: float) -> "ModelParams":
        return cls(beta, wetting_critical_point(beta) + u)

    @classmethod
    def from_j(cls, j: float, u: float = 0.0) -> "ModelParams":
        """Toy parametrisation by J directly (0 < J < 1)."""
        if not 0.0 < j < 1.0:
            raise ValueError(f"J must lie in (0, 1), got {j}")
        beta = -0.5 * math.log(j)
        return cls(beta, wetting_critical_point(beta) + u)

    @property
    def j(self) -> float:
        return math.exp(-2.0 * self.beta)

    @property
    def h_w(self) -> float:
        return wetting_critical_point(self.beta)

    @property
    def u(self) -> float:
        return self.h - self.h_w

    def with_h(self, h: float) -> "ModelParams":
        return ModelParams(self.beta, h)


@dataclass(frozen=True)
class SmallClusterConstants:
    H1: float
    H2: float
    c1: float
    c2: float


def small_cluster_constants(beta: float) -> SmallClusterConstants:
    """log Z+ of a singleton and of an adjacent pair, and the bracketing constants c1, c2."""
    j = coupling(beta)
    h1 = wetting_critical_point(beta)
    pair_excess = math.log1p(-j ** 4) - math.log1p(-j ** 3)
    return SmallClusterConstants(
        H1=h1,
        H2=2.0 * h1 + pair_excess,
        c1=pair_excess / 6.0,
        c2=2.0 * math.log1p(j),
    )


def g1(beta: float, k: int, u: float) -> float:
    """log(1 + J^{2k} (e^u - 1)): the singleton contribution at depth k."""
    if k < 0:
        raise ValueError("k must be non-negative")
    j = coupling(beta)
    arg = j ** (2 * k) * math.expm1(u)
    if arg <= -1.0:
        raise ArithmeticError(f"log argument non-positive for beta={beta}, k={k}, u={u}")
    return math.log1p(arg)


def g2_zero(beta: float, k: int) -> float:
    """log(1 - (J^3 - J^4)/(1 - J^4) J^{3k}): the adjacent-pair contribution at u = 0."""
    if k < 0:
        raise ValueError("k must be non-negative")
    j = coupling(beta)
    return math.log1p(-(j ** 3 - j ** 4) / (1.0 - j ** 4) * j ** (3 * k))


@dataclass(frozen=True)
class LayeringCoefficients:
    alpha1: float = 1.0
    alpha2: float = 1.0
    convention: DenominatorConvention = DenominatorConvention.AS_PRINTED

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError("alpha1 and alpha2 must be positive")
        object.__setattr__(self, "convention", DenominatorConvention(self.convention))

    def pair_penalty(self, j: float) -> float:
        """b in F = max_n (alpha1 J^{2n} u - b J^{3n})."""
        den = 1.0 - j ** 3 if self.convention is DenominatorConvention.AS_PRINTED else 1.0 - j ** 4
        return 2.0 * self.alpha2 * (j ** 3 - j ** 4) / den


class CapTooSmall(RuntimeError):
    pass


def _piece(coeffs: LayeringCoefficients, j: float, u: float, n: int) -> float:
    return coeffs.alpha1 * j ** (2 * n) * u - coeffs.pair_penalty(j) * j ** (3 * n)


def _default_cap(j: float, u: float) -> int:
    return 8 + math.ceil(abs(math.log(u)) / abs(math.log(j)))


def layering_F(params: ModelParams, coeffs: LayeringCoefficients, n_cap: int | None = None,
               rel_tie: float = 1e-12) -> tuple[float, tuple[int, ...]]:
    """max over n in [0, n_cap] of the affine pieces, with every maximiser.

    Without an explicit cap the scan doubles its range until the argmax is
    interior.  An explicit cap that is attained raises :class:`CapTooSmall`.
    """
    u = params.u
    if not u > 0:
        raise ValueError(f"layering_F requires u > 0, got {u}")
    j = params.j
    explicit = n_cap is not None
    cap = int(n_cap) if explicit else _default_cap(j, u)
    while True:
        values = [_piece(coeffs, j, u, n) for n in range(cap + 1)]
        best = max(values)
        tol = rel_tie * max(abs(best), 1e-300)
        argmax = tuple(n for n, v in enumerate(values) if best - v <= tol)
        if argmax[-1] < cap:
            return best, argmax
        if explicit:
            raise CapTooSmall(f"maximiser reached n_cap={cap}; increase the cap")
        cap *= 2


def breakpoint(coeffs: LayeringCoefficients, j: float, n: int) -> float:
    """The u at which pieces n and n+1 of F are equal.

    Solves alpha1 J^{2n} u - b J^{3n} = alpha1 J^{2n+2} u - b J^{3n+3} for u.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    b = coeffs.pair_penalty(j)
    slope_gap = coeffs.alpha1 * (j ** (2 * n) - j ** (2 * n + 2))
    offset_gap = b * (j ** (3 * n) - j ** (3 * n + 3))
    return offset_gap / slope_gap


def breakpoints(coeffs: LayeringCoefficients, j: float, n_max: int) -> list[float]:
    return [breakpoint(coeffs, j, n) for n in range(n_max + 1)]


def printed_breakpoint(coeffs: LayeringCoefficients, j: float, n: int) -> float:
    """The discontinuity location in its printed closed form.

    Kept only for comparison: it does not follow from equating consecutive pieces.
    """
    return (2 * coeffs.alpha2 / coeffs.alpha1) * j ** (2 * n + 2) * (1 + j) * (1 - j ** 3) / (1 - j ** 4)


def maximizer_index(params: ModelParams, coeffs: LayeringCoefficients) -> int:
    return layering_F(params, coeffs)[1][0]


def formulas_record(beta: float) -> dict:
    lo, hi = chalker_bounds(beta)
    c = small_cluster_constants(beta)
    return {
        "beta": beta,
        "h_w": wetting_critical_point(beta),
        "chalker": [lo, hi],
        "H1": c.H1,
        "H2": c.H2,
        "c1": c.c1,
        "c2": c.c2,
    }


def layering_record(params: ModelParams, coeffs: LayeringCoefficients, n_breakpoints: int = 5) -> dict:
    value, argmax = layering_F(params, coeffs)
    return {
        "u": params.u,
        "J": params.j,
        "alpha1": coeffs.alpha1,
        "alpha2": coeffs.alpha2,
        "convention": coeffs.convention.value,
        "F": value,
        "n_star": argmax[0],
        "maximizers": list(argmax),
        "breakpoints": breakpoints(coeffs, params.j, n_breakpoints),
    }
