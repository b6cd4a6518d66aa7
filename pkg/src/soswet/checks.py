"""The verification battery behind ``soswet verify``.

Each check returns a :class:`CheckResult` carrying a short name, the label of
the statement it exercises, a pass flag and the numbers it compared.  Library
functions are looked up through their modules at call time, so a patched
constant is seen by the battery.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import contours, exact, formulas, freeenergy, sampler
from .lattice import HeightField, build_rect_region

SUITES = ("identities", "contours", "peierls", "sampler", "freeenergy")

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "suite", "passed", "checks"],
    "properties": {
        "format_version": {"type": "string"},
        "suite": {"type": "string"},
        "passed": {"type": "boolean"},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "anchor", "passed", "detail"],
                "properties": {
                    "name": {"type": "string"},
                    "anchor": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "detail": {"type": "object"},
                },
            },
        },
        "failures": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass
class CheckResult:
    name: str
    anchor: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_json(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "passed": bool(self.passed), "detail": self.detail}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


# -- identities ---------------------------------------------------------------

def check_small_cluster_constants() -> list[CheckResult]:
    single, pair = [], []
    for beta in (0.5, 1.0, 2.0):
        c = formulas.small_cluster_constants(beta)
        single.append((beta, exact.positive_log_partition([(0, 0)], beta), c.H1))
        pair.append((beta, exact.positive_log_partition([(0, 0), (1, 0)], beta), c.H2))
    out = []
    for name, rows in (("lehagga-i", single), ("lehagga-ii", pair)):
        worst = max(_rel(a, b) for _, a, b in rows)
        out.append(CheckResult(name, f"lehagga({name.split('-')[1]})", worst < 1e-9,
                               {"max_rel_error": worst, "rows": [list(r) for r in rows]}))
    return out


def check_wetting_identity() -> list[CheckResult]:
    rows = []
    for w, h in ((1, 1), (2, 2), (2, 3)):
        region = build_rect_region(w, h)
        for beta in (0.5, 1.0):
            hw = formulas.wetting_critical_point(beta)
            for hh in (0.0, hw, hw + 0.2):
                r = exact.wetting_identity_check(region, formulas.ModelParams(beta, hh))
                rows.append([w, h, beta, hh, r.gap])
    worst = max(r[-1] for r in rows)
    return [CheckResult("represent", "represent", worst < 1e-8, {"max_gap": worst, "rows": rows})]


def _connected_shapes(max_size: int) -> list[tuple]:
    shapes = {((0, 0),)}
    frontier = set(shapes)
    for _ in range(max_size - 1):
        new = set()
        for s in frontier:
            for x, y in s:
                for t in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if t in s:
                        continue
                    pts = list(s) + [t]
                    mx, my = min(p[0] for p in pts), min(p[1] for p in pts)
                    new.add(tuple(sorted((p[0] - mx, p[1] - my) for p in pts)))
        shapes |= new
        frontier = new
    return sorted(shapes, key=lambda s: (len(s), s))


def check_g_closed_forms(beta: float = 1.0) -> list[CheckResult]:
    params = formulas.ModelParams(beta)
    single, pair = [], []
    for k in range(4):
        for u in (0.0, 0.1, 0.5):
            single.append([k, u, exact.g_exact([(0, 0)], params, k, u), formulas.g1(beta, k, u)])
        pair.append([k, 0.0, exact.g_exact([(0, 0), (1, 0)], params, k, 0.0), formulas.g2_zero(beta, k)])
    excess = []
    for shape in _connected_shapes(3):
        g = exact.g_exact(shape, params, 0, 0.0)
        e = exact.excess_pair_energy(shape, params)
        excess.append([[list(p) for p in shape], g, -e])
    e1 = max(abs(r[2] - r[3]) for r in single)
    e2 = max(abs(r[2] - r[3]) for r in pair)
    e3 = max(abs(r[1] - r[2]) for r in excess)
    return [
        CheckResult("stimaG-i", "stimaG(i)", e1 < 1e-9, {"max_abs_error": e1, "rows": single}),
        CheckResult("stimaG-ii", "stimaG(ii)", e2 < 1e-9, {"max_abs_error": e2, "rows": pair}),
        CheckResult("stimaG-excess", "G at k=0,u=0 equals minus excess", e3 < 1e-9,
                    {"max_abs_error": e3, "rows": excess}),
    ]


def check_intensity_law(beta: float = 1.0) -> list[CheckResult]:
    law = exact.unit_contour_intensity_law(beta, 1)
    return [
        CheckResult("geom", "geom", law.tv_worst_conditional < 1e-9,
                    {"tv_worst_conditional": law.tv_worst_conditional, "tv_marginal": law.tv_marginal}),
        CheckResult("restrict", "restrict", law.presence <= law.bound,
                    {"presence": law.presence, "bound": law.bound}),
    ]


def check_peierls_bands(beta: float = 1.0) -> list[CheckResult]:
    region = build_rect_region(3, 3)
    params = formulas.ModelParams(beta)
    patterns = {
        "single": ([(2, 2)], 4, 0.5),
        "pair": ([(2, 2), (3, 2)], 6, 0.25),
        "triple": ([(1, 2), (2, 2), (3, 2)], 8, 0.125),
    }
    out = []
    shift_rows = []
    shift_ok = True
    for label, (sites, cost, factor) in patterns.items():
        rows = []
        ok = True
        for n in (1, 2):
            p = exact.site_tail_prob(region, params, sites, n)
            bound = factor * math.exp(-cost * beta * n)
            rows.append([n, p, bound])
            ok &= p >= bound
        out.append(CheckResult(f"rourou-{label}", f"rourou ({label})", ok, {"rows": rows}))
        for n in (0, 1):
            r = exact.shift_inequality_check(region, params, sites, n)
            shift_rows.append([label, n, r.ratio, r.bound])
            shift_ok &= r.ratio >= r.bound
    out.append(CheckResult("lezgop", "lezgop", shift_ok, {"rows": shift_rows}))
    p0 = exact.site_tail_prob(region, params, [(2, 2)], 0)
    out.append(CheckResult("dehalf", "dehalf", p0 >= 0.5, {"p_nonneg": p0}))
    return out


def check_layering(betas=(0.3, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0)) -> list[CheckResult]:
    scaling, ratios, slopes = [], [], []
    for conv in formulas.DenominatorConvention:
        coeffs = formulas.LayeringCoefficients(1.0, 1.0, conv)
        for beta in (0.5, 1.0, 2.0):
            j = formulas.coupling(beta)
            for u in (0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3):
                p = formulas.ModelParams.from_u(beta, u)
                q = formulas.ModelParams.from_u(beta, j * u)
                fu, nu = formulas.layering_F(p, coeffs)
                fj, nj = formulas.layering_F(q, coeffs)
                if nj[0] >= 1:
                    scaling.append([conv.value, beta, u, _rel(fj, j ** 3 * fu)])
                    slopes.append([conv.value, beta, u, (math.log(fj) - math.log(fu)) / math.log(j)])
            bps = formulas.breakpoints(coeffs, j, 6)
            ratios.append([conv.value, beta, max(abs(b2 / b1 - j) / j for b1, b2 in zip(bps, bps[1:]))])
    chal = []
    for beta in betas:
        lo, hi = formulas.chalker_bounds(beta)
        hw = formulas.wetting_critical_point(beta)
        chal.append([beta, hw, lo, hi, hw == lo and lo <= hw <= hi])
    e_scale = max(r[-1] for r in scaling)
    e_ratio = max(r[-1] for r in ratios)
    e_slope = max(abs(r[-1] - 3.0) for r in slopes)
    return [
        CheckResult("uds-scaling", "uds", e_scale < 1e-12, {"max_rel_error": e_scale, "points": len(scaling)}),
        CheckResult("uds-breakpoints", "uds", e_ratio < 1e-12, {"max_rel_ratio_error": e_ratio, "rows": ratios}),
        CheckResult("uds-slope", "uds", e_slope < 1e-6, {"max_slope_error": e_slope, "points": len(slopes)}),
        CheckResult("chalbound", "chalbound", all(r[-1] for r in chal), {"rows": chal}),
    ]


# -- contours -----------------------------------------------------------------

def check_contour_calculus(n_random: int = 10_000, seed: int = 0) -> list[CheckResult]:
    region2 = build_rect_region(2, 2)
    fields = [HeightField(region2, hs, 0) for hs in np.ndindex(*(5,) * 4)]
    fields = [HeightField(region2, tuple(int(h) - 2 for h in f.heights), 0) for f in fields]
    rng = random.Random(seed)
    region8 = build_rect_region(8, 8)
    fields += [HeightField(region8, tuple(rng.randint(-3, 3) for _ in range(64)), 0) for _ in range(n_random)]
    round_fail = energy_fail = 0
    for f in fields:
        cs = contours.decompose(f)
        if contours.reconstruct(cs, f.region, f.boundary_level, check=False) != f:
            round_fail += 1
        if contours.contour_energy(cs) != exact.hamiltonian(f):
            energy_fail += 1
    detail = {"fields": len(fields)}
    return [
        CheckResult("express-roundtrip", "cylinder", round_fail == 0, {**detail, "failures": round_fail}),
        CheckResult("express-energy", "express", energy_fail == 0, {**detail, "failures": energy_fail}),
    ]


# -- peierls ------------------------------------------------------------------

KNOWN_COUNTS = {4: 1, 6: 4, 8: 24}


def check_peierls(max_length: int = 16) -> list[CheckResult]:
    ps = contours.peierls_sum(1.0, max_length)
    low = {L: ps.counts[L] for L in KNOWN_COUNTS}
    return [
        CheckResult("contour-counts", "finite", low == KNOWN_COUNTS, {"counts": {str(k): v for k, v in ps.counts.items()}}),
        CheckResult("beta1-growth", "finiteprim", 2.0 < ps.growth_rate < 3.0,
                    {"growth_rate": ps.growth_rate, "log_rate": math.log(ps.growth_rate)}),
    ]


# -- sampler ------------------------------------------------------------------

def check_sampler(sweeps: int = 1_000_000, seed: int = 2024) -> list[CheckResult]:
    beta = 1.0
    region = build_rect_region(3, 3)
    params = formulas.ModelParams(beta)
    free_cfg = sampler.ChainConfig(3, 3, params, exact.FREE, seed, sweeps, 1000, levels=(1, 2))
    res = sampler.run_chain(free_cfg)
    rows = []
    for n in (1, 2):
        rows.append([f"p1[{n}]", res.summary(f"p1[{n}]"), exact.site_tail_prob(region, params, [(2, 2)], n)])
        rows.append([f"p2[{n}]", res.summary(f"p2[{n}]"), exact.site_tail_prob(region, params, [(2, 2), (3, 2)], n)])
    q_exact = exact.cluster_statistics(region, params, 1)[(2, 2)]
    for b in ("0", "1", "2", "3+"):
        rows.append([f"q[1]={b}", res.summary(f"q[1]={b}"), q_exact[b]])
    wet_params = formulas.ModelParams(beta, 0.5)
    wet_cfg = sampler.ChainConfig(3, 3, wet_params, exact.wetting(0.5), seed, sweeps, 1000, levels=(1,))
    rows.append(["contact_fraction", sampler.run_chain(wet_cfg).summary("contact_fraction"),
                 exact.contact_fraction(region, wet_params)])
    table = []
    ok = True
    for name, est, ref in rows:
        z = abs(est.mean - ref) / est.stderr if est.stderr else math.inf
        ok &= z <= 3.0
        table.append([name, est.mean, est.stderr, ref, z])
    short = sampler.ChainConfig(3, 3, params, exact.FREE, seed, 5000, 100, levels=(1,))
    a, b = sampler.run_chain(short), sampler.run_chain(short)
    same = a.batch_means.tobytes() == b.batch_means.tobytes()
    return [
        CheckResult("sampler-exact", "exact oracle within 3 sigma", ok, {"rows": table}),
        CheckResult("sampler-determinism", "seeded rerun", same, {}),
    ]


# -- free energy --------------------------------------------------------------

def check_transfer() -> list[CheckResult]:
    rows = []
    for w in (1, 2):
        for length in (1, 2, 3, 4):
            for hm in (1, 2):
                for ens in (exact.FREE, exact.wetting(0.3)):
                    spec = freeenergy.TransferSpec(w, hm, formulas.ModelParams(1.0), ens)
                    a = freeenergy.transfer_log_trace(spec, length)
                    b = exact.periodic_strip_log_partition(w, length, 1.0, ens, hm)
                    rows.append([w, length, hm, ens.kind.value, abs(a - b)])
    worst = max(r[-1] for r in rows)
    brackets = []
    ok = True
    for beta in (1.0, 2.0):
        br = freeenergy.one_dimensional_wetting_check(beta)
        target = math.log1p(math.exp(-beta))
        inside = br.contains(target, 0.05)
        ok &= inside
        brackets.append([beta, br.lower, br.upper, target, inside])
    return [
        CheckResult("transfer-trace", "transfer trace vs enumeration", worst < 1e-10, {"max_abs_error": worst}),
        CheckResult("hw-1d", "1D chain: h_w = log(1 + e^-beta)", ok, {"rows": brackets}),
    ]


def check_wetting_signature(beta: float = 1.0, width: int = 4, h_max: int = 10) -> list[CheckResult]:
    u_neg = [-0.5, -0.3, -0.1, -0.05]
    u_pos = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5]
    rows = freeenergy.baseline_subtracted(beta, u_neg + [0.0] + u_pos, width, h_max)
    by_u = {r["u"]: r["fbar_sub"] for r in rows}
    plateau = max(abs(by_u[u]) for u in u_neg)
    pos = [by_u[u] for u in u_pos]
    increasing = all(b > a for a, b in zip(pos, pos[1:])) and pos[0] > 0
    gaps = np.diff(pos) / np.diff(u_pos)
    convex = bool(np.all(np.diff(gaps) >= -1e-10))
    fit = [u for u in u_pos if 0.05 <= u <= 0.3]
    slope = float(np.polyfit(np.log(fit), np.log([by_u[u] for u in fit]), 1)[0])
    ok = plateau < 1e-3 and increasing and convex and 2.0 <= slope <= 4.0
    return [CheckResult("wetting-signature", "qualitative cubic order", ok,
                        {"plateau_max": plateau, "increasing": increasing, "convex": convex,
                         "log_slope": slope, "rows": [[r["u"], r["fbar_sub"]] for r in rows]})]


# -- suites -------------------------------------------------------------------

SUITE_CHECKS: dict[str, list[Callable[[], list[CheckResult]]]] = {
    "identities": [check_small_cluster_constants, check_wetting_identity, check_g_closed_forms,
                   check_intensity_law, check_peierls_bands, check_layering],
    "contours": [check_contour_calculus],
    "peierls": [check_peierls],
    "sampler": [check_sampler],
    "freeenergy": [check_transfer, check_wetting_signature],
}


def run_suite(suite: str) -> list[CheckResult]:
    names = SUITES if suite == "all" else (suite,)
    if any(n not in SUITE_CHECKS for n in names):
        raise ValueError(f"unknown suite {suite!r}")
    results = []
    for n in names:
        for fn in SUITE_CHECKS[n]:
            t0 = time.perf_counter()
            batch = fn()
            dt = (time.perf_counter() - t0) / len(batch)
            for r in batch:
                r.seconds = dt
            results.extend(batch)
    return results
