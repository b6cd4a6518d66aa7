"""Heat-bath Monte Carlo for the FREE and WETTING ensembles on rectangles.

The single-site conditional weight ``exp(-beta * sum_i |j - a_i|)`` (times
``exp(h)`` at ``j = 0`` when wetting) is piecewise geometric in ``j`` between
the sorted neighbour heights, so it is sampled exactly on the unbounded
integers by inverse CDF over at most six segments.  The inverse CDF is
monotone in both the uniform and the neighbour heights, which gives the
monotone coupling used by the sandwich test.

Uniforms come from a Philox stream keyed by ``(seed, chain)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .exact import EnsembleKind, EnsembleSpec
from .formulas import ModelParams
from .lattice import Region, Site, build_rect_region, distance_to_boundary

DEFAULT_BATCHES = 32
MIN_REPORTED_BATCHES = 8
_BLOCK = 2048


# ---------------------------------------------------------------------------
# single-site kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _energy(a, j):
    e = 0
    for i in range(a.shape[0]):
        e += abs(j - a[i])
    return e


@numba.njit(cache=True)
def _segments(a, wet):
    """Segments in increasing-j order as rows (j0, direction, length or -1, E(j0), slope, bonus).

    Each segment starts at its lowest-energy end ``j0`` and walks in
    ``direction`` with energy increasing by ``slope`` per step.
    """
    m = a.shape[0]
    seg = np.zeros((m + 2, 6), dtype=np.int64)
    k = 0
    if wet:
        seg[k, 0] = 0
        seg[k, 1] = 1
        seg[k, 2] = 1
        seg[k, 3] = _energy(a, 0)
        seg[k, 4] = 0
        seg[k, 5] = 1
        k += 1
    # left tail: j <= a[0]
    j0 = a[0]
    if not wet or j0 >= 1:
        seg[k, 0] = j0
        seg[k, 1] = -1
        seg[k, 2] = j0 if wet else -1
        seg[k, 3] = _energy(a, j0)
        seg[k, 4] = m
        k += 1
    for i in range(1, m):
        lo = a[i - 1] + 1
        hi = a[i]
        if wet and lo < 1:
            lo = 1
        if hi < lo:
            continue
        s = 2 * i - m
        if s >= 0:
            seg[k, 0] = lo
            seg[k, 1] = 1
            seg[k, 3] = _energy(a, lo)
            seg[k, 4] = s
        else:
            seg[k, 0] = hi
            seg[k, 1] = -1
            seg[k, 3] = _energy(a, hi)
            seg[k, 4] = -s
        seg[k, 2] = hi - lo + 1
        k += 1
    lo = a[m - 1] + 1
    if wet and lo < 1:
        lo = 1
    seg[k, 0] = lo
    seg[k, 1] = 1
    seg[k, 2] = -1
    seg[k, 3] = _energy(a, lo)
    seg[k, 4] = m
    k += 1
    return seg[:k]


@numba.njit(cache=True)
def _segment_mass(beta, length, slope):
    if length < 0:
        return 1.0 / (-math.expm1(-beta * slope))
    if slope == 0:
        return float(length)
    return math.expm1(-beta * slope * length) / math.expm1(-beta * slope)


@numba.njit(cache=True)
def _sample_site(a, beta, wet, h, v):
    """Exact draw from the conditional law given sorted neighbour heights ``a`` and a uniform ``v``."""
    seg = _segments(a, wet)
    ns = seg.shape[0]
    e_min = seg[0, 3]
    for i in range(1, ns):
        if seg[i, 3] < e_min:
            e_min = seg[i, 3]
    mass = np.empty(ns)
    total = 0.0
    for i in range(ns):
        w = math.exp(-beta * (seg[i, 3] - e_min) + (h if seg[i, 5] else 0.0))
        w *= _segment_mass(beta, seg[i, 2], seg[i, 4])
        mass[i] = w
        total += w
    target = v * total
    i = 0
    acc = 0.0
    while i < ns - 1 and acc + mass[i] <= target:
        acc += mass[i]
        i += 1
    w = (target - acc) / mass[i]
    if w < 0.0:
        w = 0.0
    if w >= 1.0:
        w = 1.0 - 1e-16
    d = seg[i, 1]
    if d < 0:
        w = 1.0 - w
        if w >= 1.0:
            w = 1.0 - 1e-16
    length = seg[i, 2]
    slope = seg[i, 4]
    if slope == 0:
        t = int(w * length)
    else:
        x = w if length < 0 else w * (-math.expm1(-beta * slope * length))
        if x >= 1.0:
            x = 1.0 - 1e-16
        t = int(math.floor(math.log1p(-x) / (-beta * slope)))
    if length >= 0 and t > length - 1:
        t = length - 1
    if t < 0:
        t = 0
    return seg[i, 0] + d * t


@numba.njit(cache=True)
def _update(phi, y, x, beta, wet, h, v):
    a = np.empty(4, dtype=np.int64)
    a[0] = phi[y - 1, x]
    a[1] = phi[y + 1, x]
    a[2] = phi[y, x - 1]
    a[3] = phi[y, x + 1]
    a.sort()
    phi[y, x] = _sample_site(a, beta, wet, h, v)


@numba.njit(cache=True)
def _component_capped(phi, y, x, level, cap):
    """Size of the {phi >= level} nearest-neighbour component of (y, x), counted up to ``cap``."""
    if phi[y, x] < level:
        return 0
    ny = phi.shape[0] - 2
    nx = phi.shape[1] - 2
    seen_y = np.empty(cap, dtype=np.int64)
    seen_x = np.empty(cap, dtype=np.int64)
    seen_y[0] = y
    seen_x[0] = x
    count = 1
    head = 0
    while head < count and count < cap:
        cy = seen_y[head]
        cx = seen_x[head]
        head += 1
        for k in range(4):
            ty = cy + (1 if k == 0 else (-1 if k == 1 else 0))
            tx = cx + (1 if k == 2 else (-1 if k == 3 else 0))
            if ty < 1 or ty > ny or tx < 1 or tx > nx or phi[ty, tx] < level:
                continue
            dup = False
            for q in range(count):
                if seen_y[q] == ty and seen_x[q] == tx:
                    dup = True
                    break
            if not dup:
                seen_y[count] = ty
                seen_x[count] = tx
                count += 1
                if count >= cap:
                    break
    return count


@numba.njit(cache=True)
def _run_block(phi, uniforms, beta, wet, h, record, meas, pairs, levels, qsites, out):
    """Run ``uniforms.shape[0]`` sweeps in place; write observables of recorded sweeps to ``out``.

    Observable layout per row: contact fraction, p1 per level, p2 per level,
    then the q-histogram (0, 1, 2, 3+) per level averaged over ``qsites``.
    """
    ny = phi.shape[0] - 2
    nx = phi.shape[1] - 2
    nl = levels.shape[0]
    row = 0
    for sweep in range(uniforms.shape[0]):
        for y in range(1, ny + 1):
            for x in range(1, nx + 1):
                _update(phi, y, x, beta, wet, h, uniforms[sweep, y - 1, x - 1])
        if not record[sweep]:
            continue
        zeros = 0
        for y in range(1, ny + 1):
            for x in range(1, nx + 1):
                if phi[y, x] == 0:
                    zeros += 1
        out[row, 0] = zeros / (nx * ny)
        for li in range(nl):
            lev = levels[li]
            c = 0
            for i in range(meas.shape[0]):
                if phi[meas[i, 0], meas[i, 1]] >= lev:
                    c += 1
            out[row, 1 + li] = c / meas.shape[0]
            c = 0
            for i in range(pairs.shape[0]):
                if phi[pairs[i, 0], pairs[i, 1]] >= lev and phi[pairs[i, 2], pairs[i, 3]] >= lev:
                    c += 1
            out[row, 1 + nl + li] = c / pairs.shape[0]
            base = 1 + 2 * nl + 4 * li
            for b in range(4):
                out[row, base + b] = 0.0
            for i in range(qsites.shape[0]):
                q = _component_capped(phi, qsites[i, 0], qsites[i, 1], lev, 3)
                out[row, base + q] += 1.0 / qsites.shape[0]
        row += 1
    return row


def conditional_height_sample(neighbor_heights, params: ModelParams, ensemble: EnsembleSpec, v: float) -> int:
    """One exact draw from the single-site conditional for the given (unsorted) neighbour heights."""
    a = np.sort(np.asarray(neighbor_heights, dtype=np.int64))
    wet = ensemble.kind is EnsembleKind.WETTING
    return int(_sample_site(a, params.beta, wet, ensemble.h if wet else 0.0, float(v)))


def conditional_pmf(neighbor_heights, params: ModelParams, ensemble: EnsembleSpec, lo: int, hi: int) -> dict:
    """Exact conditional probabilities on [lo, hi], normalised over all admissible heights (direct summation oracle)."""
    a = np.asarray(neighbor_heights, dtype=np.int64)
    wet = ensemble.kind is EnsembleKind.WETTING
    reach = int(60.0 / params.beta) + 4
    j_lo = 0 if wet else int(a.min()) - reach
    j_hi = int(a.max()) + reach
    js = np.arange(j_lo, j_hi + 1)
    logw = -params.beta * np.abs(js[:, None] - a[None, :]).sum(axis=1).astype(float)
    if wet:
        logw[js == 0] += ensemble.h
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return {int(j): float(p) for j, p in zip(js, w) if lo <= j <= hi}


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    nx: int
    ny: int
    params: ModelParams
    ensemble: EnsembleSpec
    seed: int
    sweeps: int
    burn_in: int
    thin: int = 1
    chains: int = 1
    levels: tuple = (1, 2)
    measurement_sites: tuple | None = None
    n_batches: int = DEFAULT_BATCHES

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("region dimensions must be positive")
        if min(self.sweeps, self.burn_in, self.thin, self.chains) < 1:
            raise ValueError("sweeps, burn_in, thin and chains must be positive")
        if self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.ensemble.kind is EnsembleKind.POSITIVE:
            raise ValueError("the sampler supports FREE and WETTING ensembles")
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))

    @property
    def region(self) -> Region:
        return build_rect_region(self.nx, self.ny)

    @property
    def n_records(self) -> int:
        return len(range(self.burn_in, self.sweeps, self.thin))

    def to_json(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "beta": self.params.beta, "h": self.ensemble.h,
            "ensemble": self.ensemble.kind.value, "boundary_level": self.ensemble.level,
            "seed": self.seed, "sweeps": self.sweeps, "burn_in": self.burn_in, "thin": self.thin,
            "chains": self.chains, "levels": list(self.levels),
            "measurement_sites": [list(s) for s in self.resolved_sites()[0]],
        }

    def resolved_sites(self) -> tuple[tuple[Site, ...], tuple[tuple[Site, Site], ...], tuple[Site, ...]]:
        """Measurement sites, adjacent measurement pairs, and the sites averaged in the q-histogram."""
        region = self.region
        if self.measurement_sites is not None:
            meas = tuple(tuple(s) for s in self.measurement_sites)
        else:
            dist = {s: distance_to_boundary(region, s) for s in region.sites}
            best = max(dist.values())
            meas = tuple(s for s in region.sites if dist[s] == best)[:4]
        ms = set(meas)
        pairs = tuple((s, (s[0] + dx, s[1] + dy)) for s in meas for dx, dy in ((1, 0), (0, 1))
                      if (s[0] + dx, s[1] + dy) in ms)
        if not pairs:
            s = meas[0]
            t = (s[0] + 1, s[1]) if (s[0] + 1, s[1]) in region else (s[0] - 1, s[1])
            if t not in region:
                t = (s[0], s[1] + 1) if (s[0], s[1] + 1) in region else (s[0], s[1] - 1)
            pairs = ((s, t),) if t in region else ((s, s),)
        interior = tuple(s for s in region.sites if region.boundary_degree(s) == 0)
        return meas, pairs, interior or region.sites


@dataclass(frozen=True)
class EstimateSummary:
    mean: float
    stderr: float | None
    n_batches: int
    raw_count: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_batches": self.n_batches, "raw_count": self.raw_count}


@dataclass
class ChainResult:
    config: ChainConfig
    names: list
    batch_means: np.ndarray  # (total batches, observables)
    n_records: int
    final_fields: list = field(default_factory=list)

    def summary(self, name: str) -> EstimateSummary:
        col = self.batch_means[:, self.names.index(name)]
        nb = col.shape[0]
        mean = float(col.mean())
        stderr = float(col.std(ddof=1) / math.sqrt(nb)) if nb >= MIN_REPORTED_BATCHES else None
        return EstimateSummary(mean, stderr, nb, self.n_records)

    def summaries(self) -> dict:
        return {n: self.summary(n) for n in self.names}


def observable_names(levels) -> list[str]:
    names = ["contact_fraction"]
    names += [f"p1[{n}]" for n in levels]
    names += [f"p2[{n}]" for n in levels]
    for n in levels:
        names += [f"q[{n}]={b}" for b in ("0", "1", "2", "3+")]
    return names


def _index_arrays(config: ChainConfig):
    meas, pairs, qsites = config.resolved_sites()
    to_idx = lambda s: (s[1], s[0])  # padded array index (row y, column x) for the rectangle at (1, 1)
    m = np.array([to_idx(s) for s in meas], dtype=np.int64)
    p = np.array([to_idx(a) + to_idx(b) for a, b in pairs], dtype=np.int64)
    q = np.array([to_idx(s) for s in qsites], dtype=np.int64)
    return m, p, q


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def initial_field(config: ChainConfig) -> np.ndarray:
    level = config.ensemble.level
    return np.full((config.ny + 2, config.nx + 2), level, dtype=np.int64)


def run_chain(config: ChainConfig, trace_path: str | None = None) -> ChainResult:
    """Run all chains; batch means are pooled over chains (``n_batches`` per chain)."""
    wet = config.ensemble.kind is EnsembleKind.WETTING
    h = config.ensemble.h if wet else 0.0
    levels = np.array(config.levels, dtype=np.int64)
    meas, pairs, qsites = _index_arrays(config)
    names = observable_names(config.levels)
    n_rec = config.n_records
    nb = min(config.n_batches, n_rec)
    record_all = np.zeros(config.sweeps, dtype=np.bool_)
    record_all[config.burn_in::config.thin] = True
    batches = []
    finals = []
    writer = None
    handle = None
    if trace_path:
        handle = open(trace_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(["chain", "sweep"] + names)
    try:
        for chain in range(config.chains):
            rng = chain_rng(config.seed, chain)
            phi = initial_field(config)
            sums = np.zeros((nb, len(names)))
            counts = np.zeros(nb)
            rec_index = 0
            out = np.empty((_BLOCK, len(names)))
            for start in range(0, config.sweeps, _BLOCK):
                stop = min(start + _BLOCK, config.sweeps)
                u = rng.random((stop - start, config.ny, config.nx))
                rec = record_all[start:stop]
                rows = _run_block(phi, u, config.params.beta, wet, h, rec, meas, pairs, levels, qsites, out)
                if rows:
                    idx = (np.arange(rec_index, rec_index + rows) * nb) // n_rec
                    np.add.at(sums, idx, out[:rows])
                    np.add.at(counts, idx, 1.0)
                    if writer is not None:
                        sweeps_done = np.nonzero(rec)[0] + start
                        for s, r in zip(sweeps_done, out[:rows]):
                            writer.writerow([chain, int(s)] + [repr(float(x)) for x in r])
                    rec_index += rows
            batches.append(sums / counts[:, None])
            finals.append(phi[1:-1, 1:-1].copy())
    finally:
        if handle is not None:
            handle.close()
    return ChainResult(config, names, np.vstack(batches), n_rec * config.chains, finals)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def estimate_contact_fraction(config: ChainConfig) -> EstimateSummary:
    if config.ensemble.kind is not EnsembleKind.WETTING:
        raise ValueError("contact fraction is estimated in the WETTING ensemble")
    return run_chain(config).summary("contact_fraction")


@dataclass(frozen=True)
class PeakAmplitude:
    n: int
    p1: EstimateSummary
    p2: EstimateSummary
    alpha1: float
    alpha1_stderr: float | None
    alpha2: float
    alpha2_stderr: float | None
    distance_to_boundary: int
    reliable: bool

    def to_json(self) -> dict:
        return {"n": self.n, "p1_hat": self.p1.to_json(), "p2_hat": self.p2.to_json(),
                "alpha1_hat": self.alpha1, "alpha1_stderr": self.alpha1_stderr,
                "alpha2_hat": self.alpha2, "alpha2_stderr": self.alpha2_stderr,
                "distance_to_boundary": self.distance_to_boundary, "reliable": self.reliable,
                "heuristic": True}


def peak_amplitudes(result: ChainResult, n_list) -> list[PeakAmplitude]:
    config = result.config
    beta = config.params.beta
    meas, _, _ = config.resolved_sites()
    dist = min(distance_to_boundary(config.region, s) for s in meas)
    out = []
    for n in n_list:
        p1 = result.summary(f"p1[{n}]")
        p2 = result.summary(f"p2[{n}]")
        s1, s2 = math.exp(4 * beta * n), math.exp(6 * beta * n)
        reliable = p1.mean > 0 and p2.mean > 0
        out.append(PeakAmplitude(
            n, p1, p2,
            s1 * p1.mean, None if p1.stderr is None else s1 * p1.stderr,
            s2 * p2.mean, None if p2.stderr is None else s2 * p2.stderr,
            dist, reliable))
    return out


def estimate_peak_amplitudes(config: ChainConfig, n_list) -> list[PeakAmplitude]:
    """Tail frequencies at the measurement sites, rescaled by exp(4 beta n) and exp(6 beta n)."""
    if config.ensemble.kind is not EnsembleKind.FREE:
        raise ValueError("peak amplitudes are estimated in the FREE ensemble")
    n_list = [int(n) for n in n_list]
    if set(n_list) - set(config.levels):
        config = ChainConfig(**{**config.__dict__, "levels": tuple(sorted(set(config.levels) | set(n_list)))})
    return peak_amplitudes(run_chain(config), n_list)


def estimate_cluster_histogram(config: ChainConfig, n: int) -> dict[str, EstimateSummary]:
    """Frequencies of q(phi, x, n) in {0, 1, 2, 3+}, averaged over sites not touching the boundary."""
    if n not in config.levels:
        config = ChainConfig(**{**config.__dict__, "levels": tuple(sorted(set(config.levels) | {int(n)}))})
    result = run_chain(config)
    return {b: result.summary(f"q[{n}]={b}") for b in ("0", "1", "2", "3+")}


def coupled_sweeps(low: np.ndarray, high: np.ndarray, params: ModelParams, ensemble: EnsembleSpec,
                   sweeps: int, seed: int) -> int:
    """Run two padded fields with shared uniforms; return the number of sweeps after which low <= high failed (0 if never)."""
    wet = ensemble.kind is EnsembleKind.WETTING
    h = ensemble.h if wet else 0.0
    ny, nx = low.shape[0] - 2, low.shape[1] - 2
    rng = chain_rng(seed, 0)
    empty_i = np.zeros((1, 2), dtype=np.int64)
    empty_p = np.zeros((1, 4), dtype=np.int64)
    levels = np.zeros(0, dtype=np.int64)
    out = np.empty((1, 1))
    no_record = np.zeros(1, dtype=np.bool_)
    for s in range(sweeps):
        u = rng.random((1, ny, nx))
        _run_block(low, u, params.beta, wet, h, no_record, empty_i, empty_p, levels, empty_i, out)
        _run_block(high, u, params.beta, wet, h, no_record, empty_i, empty_p, levels, empty_i, out)
        if np.any(low > high):
            return s + 1
    return 0
