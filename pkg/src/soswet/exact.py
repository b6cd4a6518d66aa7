"""Exact (truncated-height) partition functions, marginals and identity checks on small regions.

Sums over height fields are evaluated by row-by-row variable elimination over
the region's bounding box, padded by one row/column of boundary sites frozen at
the boundary level.  Every nearest-neighbour factor is ``exp(-beta |a - b|)``,
so a boundary edge automatically contributes ``exp(-beta |a - n|)``.  The result
is the full sum over the truncated configuration space, not a sample of it.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from . import formulas
from .formulas import ModelParams
from .lattice import HeightField, Region, Site, canonical, connected_components, neighbors, site_key

DEFAULT_BUDGET = 1e8
MAX_H = 2 ** 20


class TooLarge(RuntimeError):
    """The requested sum exceeds the enumeration budget."""


class TruncationFailure(RuntimeError):
    """Adaptive doubling of the height cap did not converge."""


class TruncationMode(str, enum.Enum):
    FIXED = "fixed"
    ADAPTIVE_DOUBLING = "adaptive"


@dataclass(frozen=True)
class TruncationPolicy:
    h_max: int = 12
    tol: float = 1e-12
    mode: TruncationMode = TruncationMode.ADAPTIVE_DOUBLING
    budget: float = DEFAULT_BUDGET

    def __post_init__(self):
        if self.h_max < 1:
            raise ValueError("h_max must be positive")
        object.__setattr__(self, "mode", TruncationMode(self.mode))

    def fixed(self, h_max: int | None = None) -> "TruncationPolicy":
        return TruncationPolicy(h_max or self.h_max, self.tol, TruncationMode.FIXED, self.budget)


def default_truncation(beta: float, tol: float = 1e-12) -> TruncationPolicy:
    return TruncationPolicy(h_max=max(12, math.ceil(12.0 / beta)), tol=tol)


class EnsembleKind(str, enum.Enum):
    FREE = "free"
    POSITIVE = "positive"
    WETTING = "wetting"


@dataclass(frozen=True)
class EnsembleSpec:
    """FREE: heights in [n - h_max, n + h_max] with boundary level n.
    POSITIVE: heights in [0, h_max], boundary 0.  WETTING: as POSITIVE plus reward h at height 0.
    """

    kind: EnsembleKind = EnsembleKind.FREE
    h: float = 0.0
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnsembleKind(self.kind))
        if self.kind is EnsembleKind.WETTING and not math.isfinite(self.h):
            raise ValueError("WETTING needs a finite reward h")

    @property
    def level(self) -> int:
        return self.n if self.kind is EnsembleKind.FREE else 0


FREE = EnsembleSpec(EnsembleKind.FREE)
POSITIVE = EnsembleSpec(EnsembleKind.POSITIVE)


def wetting(h: float) -> EnsembleSpec:
    return EnsembleSpec(EnsembleKind.WETTING, h=h)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def hamiltonian(field: HeightField) -> int:
    """Half the sum of internal gradients plus the gradients to the boundary level."""
    region = field.region
    values = field.as_dict()
    n = field.boundary_level
    total = 0
    for s in region.sites:
        for t in neighbors(s):
            if t in values:
                if site_key(s) < site_key(t):
                    total += abs(values[s] - values[t])
            else:
                total += abs(values[s] - n)
    return total


def hamiltonian_batch(region: Region, configs: np.ndarray, level: int = 0) -> np.ndarray:
    """Hamiltonians of many configurations at once; ``configs`` has one column per region site."""
    index = {s: i for i, s in enumerate(region.sites)}
    configs = np.asarray(configs, dtype=np.int64)
    energy = np.zeros(configs.shape[0], dtype=np.int64)
    for s, i in index.items():
        for t in neighbors(s):
            j = index.get(t)
            if j is None:
                energy += np.abs(configs[:, i] - level)
            elif i < j:
                energy += np.abs(configs[:, i] - configs[:, j])
    return energy


# ---------------------------------------------------------------------------
# Elimination engine
# ---------------------------------------------------------------------------


def _pair_matrix(beta: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.exp(-beta * np.abs(a[:, None] - b[None, :]).astype(float))


def elimination_cost(region: Region, domains: dict) -> float:
    x0, y0, x1, y1 = region.bbox()
    sizes = [1] * (x1 - x0 + 3)
    cost = 0.0
    for y in range(y0 - 1, y1 + 2):
        for c, x in enumerate(range(x0 - 1, x1 + 2)):
            new = len(domains[(x, y)]) if (x, y) in region.site_set else 1
            cost += float(np.prod(sizes, dtype=float)) * new
            sizes[c] = new
    return cost


def weighted_log_sum(region: Region, domains: dict, beta: float, level: int = 0,
                     log_unary: dict | None = None, budget: float = DEFAULT_BUDGET) -> float:
    """log of the sum over fields with phi(x) in domains[x] of exp(-beta H + sum_x log_unary[x](phi(x))).

    ``domains`` maps every region site to an integer array of allowed heights;
    ``log_unary`` optionally maps sites to log-weights aligned with their domain.
    Returns ``-inf`` if some domain is empty.
    """
    for s in region.sites:
        if len(domains[s]) == 0:
            return -math.inf
    cost = elimination_cost(region, domains)
    if cost > budget:
        raise TooLarge(f"elimination cost {cost:.3g} exceeds budget {budget:.3g}")
    log_unary = log_unary or {}
    x0, y0, x1, y1 = region.bbox()
    width = x1 - x0 + 3
    fixed = np.array([level], dtype=np.int64)
    doms = [fixed] * width
    table = np.ones((1,) * width)
    log_scale = 0.0
    for y in range(y0 - 1, y1 + 2):
        for c, x in enumerate(range(x0 - 1, x1 + 2)):
            site = (x, y)
            inside = site in region.site_set
            new = np.asarray(domains[site], dtype=np.int64) if inside else fixed
            table = np.tensordot(table, _pair_matrix(beta, doms[c], new), axes=([c], [0]))
            table = np.moveaxis(table, -1, c)
            if c > 0:
                shape = [1] * width
                shape[c - 1] = len(doms[c - 1])
                shape[c] = len(new)
                table = table * _pair_matrix(beta, doms[c - 1], new).reshape(shape)
            if inside and site in log_unary:
                shape = [1] * width
                shape[c] = len(new)
                table = table * np.exp(np.asarray(log_unary[site], dtype=float)).reshape(shape)
            doms[c] = new
            peak = table.max()
            if peak == 0.0:
                return -math.inf
            table = table / peak
            log_scale += math.log(peak)
    return log_scale + math.log(math.fsum(table.ravel()))


def ensemble_domains(region: Region, ensemble: EnsembleSpec, h_max: int) -> tuple[dict, dict]:
    if ensemble.kind is EnsembleKind.FREE:
        base = np.arange(ensemble.n - h_max, ensemble.n + h_max + 1)
    else:
        base = np.arange(0, h_max + 1)
    domains = {s: base for s in region.sites}
    unary = {}
    if ensemble.kind is EnsembleKind.WETTING:
        w = np.where(base == 0, ensemble.h, 0.0)
        unary = {s: w for s in region.sites}
    return domains, unary


def restrict(domains: dict, unary: dict, site: Site, keep: Callable[[np.ndarray], np.ndarray]):
    """Copies of (domains, unary) with ``site`` restricted to heights where ``keep`` holds."""
    mask = keep(domains[site])
    domains = dict(domains)
    domains[site] = domains[site][mask]
    if site in unary:
        unary = dict(unary)
        unary[site] = unary[site][mask]
    return domains, unary


def certify(fn: Callable[[int], float], trunc: TruncationPolicy) -> float:
    """Evaluate ``fn(h_max)``; in adaptive mode double h_max until the value moves by < tol."""
    if trunc.mode is TruncationMode.FIXED:
        return fn(trunc.h_max)
    h = trunc.h_max
    prev = fn(h)
    while True:
        if 2 * h > MAX_H:
            raise TruncationFailure(f"no convergence up to h_max={h}")
        cur = fn(2 * h)
        if abs(cur - prev) < trunc.tol or (math.isinf(cur) and cur == prev):
            return cur
        h *= 2
        prev = cur


def _log_partition_fixed(region: Region, beta: float, ensemble: EnsembleSpec, h_max: int,
                         budget: float = DEFAULT_BUDGET) -> float:
    domains, unary = ensemble_domains(region, ensemble, h_max)
    return weighted_log_sum(region, domains, beta, ensemble.level, unary, budget)


def log_partition(region: Region, params: ModelParams, ensemble: EnsembleSpec = FREE,
                  trunc: TruncationPolicy | None = None) -> float:
    """log Z of the truncated ensemble, certified to ``trunc.tol`` in adaptive mode."""
    trunc = trunc or default_truncation(params.beta)
    return certify(lambda h: _log_partition_fixed(region, params.beta, ensemble, h, trunc.budget), trunc)


# ---------------------------------------------------------------------------
# Positive partition functions of arbitrary site sets: H and its excess
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _positive_log_partition_cached(sites: tuple, beta: float, h_max: int, tol: float, mode: str,
                                   budget: float) -> float:
    region = Region.from_sites(sites)
    trunc = TruncationPolicy(h_max, tol, mode, budget)
    return certify(lambda h: _log_partition_fixed(region, beta, POSITIVE, h, budget), trunc)


def positive_log_partition(sites: Iterable[Site], beta: float, trunc: TruncationPolicy | None = None) -> float:
    """H(Gamma) = log Z+_Gamma, summed over the connected components of Gamma."""
    trunc = trunc or default_truncation(beta)
    total = 0.0
    for comp in connected_components(sites):
        total += _positive_log_partition_cached(canonical(comp), float(beta), trunc.h_max, trunc.tol,
                                                trunc.mode.value, trunc.budget)
    return total


def excess_pair_energy(gamma_set: Iterable[Site], params: ModelParams,
                       trunc: TruncationPolicy | None = None) -> float:
    """H(Gamma) - |Gamma| log(1/(1-J^2))."""
    sites = canonical(gamma_set)
    h1 = formulas.small_cluster_constants(params.beta).H1
    return positive_log_partition(sites, params.beta, trunc) - len(sites) * h1


def subsets(sites: Sequence[Site]):
    for r in range(len(sites) + 1):
        yield from itertools.combinations(sites, r)


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float


def _negative_set_sum(region: Region, beta: float, h_max: int, level: int,
                      weight_of_set: Callable[[tuple], float], budget: float) -> float:
    """log sum_S exp(weight_of_set(S)) * Z(phi <= 0 on S, phi >= 1 off S), heights in level +- h_max."""
    base = np.arange(level - h_max, level + h_max + 1)
    terms = []
    for chosen in subsets(region.sites):
        chosen_set = set(chosen)
        domains = {s: base[base <= 0] if s in chosen_set else base[base >= 1] for s in region.sites}
        lz = weighted_log_sum(region, domains, beta, level, None, budget)
        if lz > -math.inf:
            terms.append(weight_of_set(chosen) + lz)
    return _logsumexp(terms)


def _logsumexp(values: Sequence[float]) -> float:
    if not values:
        return -math.inf
    top = max(values)
    if top == -math.inf:
        return top
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def wetting_identity_check(region: Region, params: ModelParams,
                           trunc: TruncationPolicy | None = None) -> IdentityCheck:
    """Compare log Z^h with the unconstrained rewriting that penalises the negative set by H."""
    trunc = trunc or default_truncation(params.beta)
    beta, h = params.beta, params.h

    def lhs_at(hm):
        return _log_partition_fixed(region, beta, wetting(h), hm, trunc.budget)

    def rhs_at(hm):
        inner = trunc.fixed(hm) if trunc.mode is TruncationMode.FIXED else trunc
        return _negative_set_sum(
            region, beta, hm, 0,
            lambda S: h * len(S) - positive_log_partition(S, beta, inner) if S else 0.0,
            trunc.budget)

    lhs = certify(lhs_at, trunc)
    rhs = certify(rhs_at, trunc)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs))


@dataclass
class BoundaryShift:
    delta: float
    bound: float
    log_ratio: float
    log_expectation: float

    @property
    def ok(self) -> bool:
        return self.delta <= self.bound


def boundary_shift_check(region: Region, params: ModelParams, n: int,
                         trunc: TruncationPolicy | None = None) -> BoundaryShift:
    """|log(Z^h/Z) - log E^n[exp(u|A| - Hbar(A))]| with A the non-positive set, against 4 n N beta.

    N is the larger side of the region's bounding box.
    """
    trunc = trunc or default_truncation(params.beta)
    beta, u = params.beta, params.u

    def log_ratio(hm):
        return (_log_partition_fixed(region, beta, wetting(params.h), hm, trunc.budget)
                - _log_partition_fixed(region, beta, FREE, hm, trunc.budget))

    def log_expectation(hm):
        inner = trunc.fixed(hm) if trunc.mode is TruncationMode.FIXED else trunc
        num = _negative_set_sum(
            region, beta, hm, n,
            lambda S: u * len(S) - excess_pair_energy(S, params, inner) if S else 0.0,
            trunc.budget)
        return num - _log_partition_fixed(region, beta, EnsembleSpec(EnsembleKind.FREE, n=n), hm, trunc.budget)

    a = certify(log_ratio, trunc)
    b = certify(log_expectation, trunc)
    x0, y0, x1, y1 = region.bbox()
    side = max(x1 - x0 + 1, y1 - y0 + 1)
    return BoundaryShift(abs(a - b), 4.0 * n * side * beta, a, b)


def g_exact(gamma_set: Iterable[Site], params: ModelParams, k: int, u: float,
            trunc: TruncationPolicy | None = None) -> float:
    """G^{k,u}(Gamma) = log E+_Gamma[exp(u |A_k| - Hbar(A_k))], A_k = {phi >= k}, by exact summation."""
    trunc = trunc or default_truncation(params.beta)
    sites = canonical(gamma_set)
    region = Region.from_sites(sites)
    beta = params.beta

    def at(hm):
        if k > hm:
            return 0.0
        base = np.arange(0, hm + 1)
        inner = trunc.fixed(hm) if trunc.mode is TruncationMode.FIXED else trunc
        terms = []
        for chosen in subsets(sites):
            chosen_set = set(chosen)
            domains = {s: base[base >= k] if s in chosen_set else base[base < k] for s in sites}
            lz = weighted_log_sum(region, domains, beta, 0, None, trunc.budget)
            if lz == -math.inf:
                continue
            penalty = excess_pair_energy(chosen, params, inner) if chosen else 0.0
            terms.append(u * len(chosen) - penalty + lz)
        return _logsumexp(terms) - _log_partition_fixed(region, beta, POSITIVE, hm, trunc.budget)

    return certify(at, trunc)


def uppg_k_max(beta: float, u: float, margin: float) -> float:
    """Upper end |log u| / (2 beta) - margin of the depth range where clusters of size >= 2 are penalised."""
    if u <= 0:
        return math.inf
    return abs(math.log(u)) / (2.0 * beta) - margin


def uppg_sign_check(gamma_set: Iterable[Site], params: ModelParams, k: int, u: float,
                    trunc: TruncationPolicy | None = None) -> bool:
    """True iff G^{k,u}(Gamma) < 0.

    The sign is only guaranteed for k <= uppg_k_max(beta, u, K) with K large
    enough; outside that range a positive value is the correct answer.
    """
    return g_exact(gamma_set, params, k, u, trunc) < 0.0


def _tail_log_partition(region: Region, beta: float, ensemble: EnsembleSpec, h_max: int,
                        lower: dict, budget: float) -> float:
    domains, unary = ensemble_domains(region, ensemble, h_max)
    for s, lo in lower.items():
        domains, unary = restrict(domains, unary, s, lambda d, lo=lo: d >= lo)
    return weighted_log_sum(region, domains, beta, ensemble.level, unary, budget)


def site_tail_prob(region: Region, params: ModelParams, sites: Sequence[Site], n: int,
                   trunc: TruncationPolicy | None = None, ensemble: EnsembleSpec = FREE) -> float:
    """P[min over ``sites`` of phi >= n]."""
    trunc = trunc or default_truncation(params.beta)
    sites = canonical(sites)
    for s in sites:
        if s not in region:
            raise ValueError(f"site {s} not in region")

    def at(hm):
        lz = _log_partition_fixed(region, params.beta, ensemble, hm, trunc.budget)
        lt = _tail_log_partition(region, params.beta, ensemble, hm, {s: n for s in sites}, trunc.budget)
        return math.exp(lt - lz)

    return certify(at, trunc)


SHIFT_COST = {1: 4, 2: 6, 3: 8}


@dataclass
class ShiftCheck:
    ratio: float
    bound: float
    p_nonneg: float

    @property
    def ok(self) -> bool:
        return self.ratio >= self.bound and self.p_nonneg >= 0.5


def shift_inequality_check(region: Region, params: ModelParams, sites: Sequence[Site], n: int,
                           trunc: TruncationPolicy | None = None) -> ShiftCheck:
    """P[min phi >= n+1] / P[min phi >= n] against exp(-beta * cost), cost 4/6/8 for 1/2/3 sites.

    Also reports P[phi(x) >= 0] for the first site.
    """
    sites = canonical(sites)
    if len(sites) not in SHIFT_COST:
        raise ValueError("shift inequality is defined for 1, 2 or 3 sites")
    p_n = site_tail_prob(region, params, sites, n, trunc)
    p_next = site_tail_prob(region, params, sites, n + 1, trunc)
    p0 = site_tail_prob(region, params, sites[:1], 0, trunc)
    return ShiftCheck(p_next / p_n, math.exp(-params.beta * SHIFT_COST[len(sites)]), p0)


def cluster_statistics(region: Region, params: ModelParams, n: int,
                       trunc: TruncationPolicy | None = None,
                       ensemble: EnsembleSpec = FREE) -> dict:
    """Exact law of q(phi, x, n) in {0, 1, 2, 3+} for every site x.

    q is the size of the connected component of {phi >= n} containing x.
    """
    trunc = trunc or default_truncation(params.beta)
    beta = params.beta

    def law(hm):
        domains, unary = ensemble_domains(region, ensemble, hm)
        lz = weighted_log_sum(region, domains, beta, ensemble.level, unary, trunc.budget)

        def prob(high: Iterable[Site], low: Iterable[Site]) -> float:
            d, w = domains, unary
            for s in high:
                d, w = restrict(d, w, s, lambda a: a >= n)
            for s in low:
                d, w = restrict(d, w, s, lambda a: a < n)
            return math.exp(weighted_log_sum(region, d, beta, ensemble.level, w, trunc.budget) - lz)

        out = {}
        for x in region.sites:
            nbrs = region.adjacency[x]
            p0 = prob([], [x])
            p1 = prob([x], nbrs)
            p2 = 0.0
            for y in nbrs:
                lows = {t for t in nbrs if t != y} | {t for t in region.adjacency[y] if t != x}
                p2 += prob([x, y], lows)
            out[x] = (p0, p1, p2, max(0.0, 1.0 - p0 - p1 - p2))
        return out

    if trunc.mode is TruncationMode.FIXED:
        result = law(trunc.h_max)
    else:
        result = _certify_table(law, trunc)
    return {x: {"0": v[0], "1": v[1], "2": v[2], "3+": v[3]} for x, v in result.items()}


def _certify_table(fn: Callable[[int], dict], trunc: TruncationPolicy) -> dict:
    h = trunc.h_max
    prev = fn(h)
    while True:
        if 2 * h > MAX_H:
            raise TruncationFailure(f"no convergence up to h_max={h}")
        cur = fn(2 * h)
        if all(max(abs(a - b) for a, b in zip(cur[x], prev[x])) < trunc.tol for x in cur):
            return cur
        h *= 2
        prev = cur


def fkg_check(region: Region, params: ModelParams, f_sites: Sequence[Site], g_sites: Sequence[Site],
              trunc: TruncationPolicy | None = None, ensemble: EnsembleSpec = FREE,
              f_sign: int = 1, g_sign: int = 1) -> float:
    """Cov(f, g) for f = f_sign * min_{f_sites} phi and g = g_sign * min_{g_sites} phi.

    Computed from the exact joint survival function of the two minima.
    """
    trunc = trunc or TruncationPolicy(h_max=6, mode=TruncationMode.FIXED)
    h_max = trunc.h_max
    domains, unary = ensemble_domains(region, ensemble, h_max)
    lo = ensemble.level - h_max if ensemble.kind is EnsembleKind.FREE else 0
    hi = ensemble.level + h_max if ensemble.kind is EnsembleKind.FREE else h_max
    levels = np.arange(lo, hi + 2)
    lz = weighted_log_sum(region, domains, params.beta, ensemble.level, unary, trunc.budget)
    surv = np.zeros((len(levels), len(levels)))
    f_sites, g_sites = canonical(f_sites), canonical(g_sites)
    for i, s in enumerate(levels):
        for j, t in enumerate(levels):
            d, w = domains, unary
            for x in set(f_sites) | set(g_sites):
                bound = max(s if x in f_sites else lo, t if x in g_sites else lo)
                d, w = restrict(d, w, x, lambda a, b=bound: a >= b)
            surv[i, j] = math.exp(weighted_log_sum(region, d, params.beta, ensemble.level, w, trunc.budget) - lz)
    pmf = surv[:-1, :-1] - surv[1:, :-1] - surv[:-1, 1:] + surv[1:, 1:]
    vals = levels[:-1].astype(float)
    ef = float(np.sum(pmf.sum(axis=1) * vals))
    eg = float(np.sum(pmf.sum(axis=0) * vals))
    efg = float(np.sum(pmf * np.outer(vals, vals)))
    return f_sign * g_sign * (efg - ef * eg)


def contact_fraction(region: Region, params: ModelParams, trunc: TruncationPolicy | None = None) -> float:
    """E^h[|phi^{-1}(0)|] / |Lambda| under the wetting measure."""
    trunc = trunc or default_truncation(params.beta)
    ens = wetting(params.h)

    def at(hm):
        domains, unary = ensemble_domains(region, ens, hm)
        lz = weighted_log_sum(region, domains, params.beta, 0, unary, trunc.budget)
        total = 0.0
        for s in region.sites:
            d, w = restrict(domains, unary, s, lambda a: a == 0)
            total += math.exp(weighted_log_sum(region, d, params.beta, 0, w, trunc.budget) - lz)
        return total / len(region)

    return certify(at, trunc)


# ---------------------------------------------------------------------------
# Unit contour around the centre of a 3x3 box
# ---------------------------------------------------------------------------


@dataclass
class IntensityLaw:
    """Law of the intensity of the unit contour around the centre of a 3x3 box (bc 0)."""

    beta: float
    sign: int
    presence: float
    conditional: np.ndarray = field(repr=False)
    geometric: np.ndarray = field(repr=False)
    tv_marginal: float = 0.0
    tv_worst_conditional: float = 0.0

    @property
    def bound(self) -> float:
        return math.exp(-4.0 * self.beta)


def unit_contour_intensity_law(beta: float, sign: int = 1, h_max: int = 12) -> IntensityLaw:
    """Joint law of the centre and its four neighbours on the 3x3 box, corners summed out exactly.

    For the unit contour of sign ``sign`` the intensity is sign*(phi(c) - extreme neighbour).
    Returns its presence probability, its law given presence, and the total-variation
    distance to the geometric law prop. to exp(-4 beta k): both for the marginal and the
    worst case over neighbour configurations of non-negligible weight.
    """
    heights = np.arange(-h_max, h_max + 1)
    R = len(heights)
    w = lambda a: np.exp(-beta * np.abs(a).astype(float))
    # corner z touches two side-neighbours and two boundary sites
    corner = np.exp(-beta * (np.abs(heights[:, None, None] - heights[None, :, None])
                             + np.abs(heights[:, None, None] - heights[None, None, :])
                             + 2 * np.abs(heights[:, None, None]))).sum(axis=0)
    b = heights
    # neighbours: b1=(2,1) south, b2=(1,2) west, b3=(3,2) east, b4=(2,3) north; corners pair (S,W),(S,E),(N,W),(N,E)
    nb = (w(b)[:, None, None, None] * w(b)[None, :, None, None] * w(b)[None, None, :, None]
          * w(b)[None, None, None, :]
          * corner[:, :, None, None]            # S-W
          * corner[:, None, :, None]            # S-E
          * corner[None, :, None, :]            # W-N
          * corner[None, None, :, :])           # E-N
    grids = np.meshgrid(b, b, b, b, indexing="ij")
    stacked = np.stack(grids)
    extreme = stacked.max(axis=0) if sign > 0 else stacked.min(axis=0)
    energy_c = np.zeros((R,) * 4 + (R,))
    for g in grids:
        energy_c += np.abs(heights[None, None, None, None, :] - g[..., None])
    joint = nb[..., None] * np.exp(-beta * energy_c)
    total = joint.sum()
    k = sign * (heights[None, None, None, None, :] - extreme[..., None])
    kmax = h_max
    by_k = np.array([joint[k == m].sum() for m in range(1, kmax + 1)])
    presence = by_k.sum() / total
    conditional = by_k / by_k.sum()
    q = math.exp(-4.0 * beta)
    geometric = (1 - q) * q ** np.arange(kmax)
    tail = q ** kmax
    tv_marginal = 0.5 * (np.abs(conditional - geometric).sum() + tail)
    # per neighbour configuration, weighted configurations only
    cond_mass = np.where(k >= 1, joint, 0.0)
    per_cfg = cond_mass.sum(axis=-1)
    heavy = per_cfg > 1e-12 * per_cfg.max()
    worst = 0.0
    idx = np.argwhere(heavy)
    for cfg in idx:
        row = cond_mass[tuple(cfg)]
        ks = k[tuple(cfg)]
        pos = ks >= 1
        probs = row[pos] / row[pos].sum()
        kk = ks[pos]
        ref = (1 - q) * q ** (kk - 1)
        missing = q ** kk.max()
        worst = max(worst, 0.5 * (np.abs(probs - ref).sum() + missing))
    return IntensityLaw(beta, sign, float(presence), conditional, geometric, float(tv_marginal), float(worst))


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def all_configurations(n_sites: int, lo: int, hi: int, budget: float = 2e7) -> np.ndarray:
    count = (hi - lo + 1) ** n_sites
    if count > budget:
        raise TooLarge(f"{count} configurations exceed budget {budget:.3g}")
    axes = [np.arange(lo, hi + 1)] * n_sites
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n_sites)


def brute_force_log_partition(region: Region, beta: float, ensemble: EnsembleSpec, h_max: int) -> float:
    """Direct sum over every truncated configuration (small regions only)."""
    if ensemble.kind is EnsembleKind.FREE:
        lo, hi = ensemble.n - h_max, ensemble.n + h_max
    else:
        lo, hi = 0, h_max
    configs = all_configurations(len(region), lo, hi)
    logw = -beta * hamiltonian_batch(region, configs, ensemble.level).astype(float)
    if ensemble.kind is EnsembleKind.WETTING:
        logw = logw + ensemble.h * (configs == 0).sum(axis=1)
    top = logw.max()
    return float(top + np.log(np.exp(logw - top).sum()))


def periodic_strip_log_partition(width: int, length: int, beta: float, ensemble: EnsembleSpec,
                                 h_max: int) -> float:
    """Brute-force log Z of a width x length strip, periodic along its length.

    The two long sides see the boundary level 0 (or n for FREE).
    """
    if ensemble.kind is EnsembleKind.FREE:
        lo, hi = ensemble.n - h_max, ensemble.n + h_max
    else:
        lo, hi = 0, h_max
    configs = all_configurations(width * length, lo, hi).reshape(-1, length, width)
    level = ensemble.level
    energy = np.abs(configs - np.roll(configs, -1, axis=1)).sum(axis=(1, 2)) if length > 1 else 0
    if width > 1:
        energy = energy + np.abs(np.diff(configs, axis=2)).sum(axis=(1, 2))
    energy = energy + np.abs(configs[:, :, 0] - level).sum(axis=1) + np.abs(configs[:, :, -1] - level).sum(axis=1)
    logw = -beta * np.asarray(energy, dtype=float)
    if ensemble.kind is EnsembleKind.WETTING:
        logw = logw + ensemble.h * (configs == 0).sum(axis=(1, 2))
    top = logw.max()
    return float(top + np.log(np.exp(logw - top).sum()))
