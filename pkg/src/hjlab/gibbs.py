"""Exact finite-N Gibbs computations for the spiked rank-one model.

For tensor order ``p`` the enriched Hamiltonian is

    H_N(t, h, x) = sqrt(t) / N^((p-1)/2) W : x^(p) + t / N^(p-1) (x.xbar)^p
                   - t / (2 N^(p-1)) |x|^(2p)
                   + sqrt(h) z.x + h x.xbar - h/2 |x|^2

and ``F_N = (1/N) log sum_x P_N(x) exp(H_N)``. Gibbs brackets are computed by
enumerating every configuration in ``support^N``, so the only Monte Carlo
error is the average over disorder ``(xbar, W, z)``.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .prior import DiscretePrior
from .stats import DEFAULT_BATCHES, Estimate, batch_jackknife, loglog_slope, mean_estimate, variance_estimate

DEFAULT_BUDGET = 2 ** 22
GAUSSIAN_BUDGET = 2 ** 24
CHUNK = 2 ** 15
_CACHE_CONFIGS = 2 ** 20


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    N: int
    p: int
    t: float
    h: float
    prior: DiscretePrior
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.N < 1 or self.p < 1:
            raise ValueError("need N >= 1 and p >= 1")
        if not (math.isfinite(self.t) and math.isfinite(self.h)) or self.t < 0 or self.h < 0:
            raise ValueError(f"need finite t, h >= 0, got t={self.t}, h={self.h}")

    @property
    def n_configs(self) -> int:
        return self.prior.n_atoms ** self.N

    def check_budget(self):
        check_enumeration_budget(self.prior, self.N, self.budget)


def check_enumeration_budget(prior: DiscretePrior, N: int, budget: int = DEFAULT_BUDGET):
    k = prior.n_atoms
    if k ** N > budget:
        n_max = int(math.floor(math.log(budget) / math.log(k) + 1e-12)) if k > 1 else N
        raise BudgetError(f"{k}^{N} configurations exceed the enumeration budget {budget}; "
                          f"maximal admissible N is {n_max}")


@dataclass(frozen=True)
class DisorderSample:
    xbar: np.ndarray
    W: np.ndarray
    z: np.ndarray
    seed: int


def sub_seed(base_seed: int, index: int) -> int:
    """64-bit seed of sample ``index``; a pure function of ``(base_seed, index)``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def sample_disorder(params: ModelParams, seed: int,
                    gaussian_budget: int = GAUSSIAN_BUDGET) -> DisorderSample:
    """Draw ``(xbar, W, z)`` from a counter-based (Philox) stream keyed by ``seed``."""
    N, p = params.N, params.p
    if N ** p > gaussian_budget:
        n_max = int(math.floor(gaussian_budget ** (1.0 / p) + 1e-9))
        raise BudgetError(f"N^p = {N ** p} Gaussians exceed the budget {gaussian_budget}; "
                          f"maximal admissible N is {n_max}")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    xbar = params.prior.sample(rng, N)
    W = rng.standard_normal((N,) * p)
    z = rng.standard_normal(N)
    return DisorderSample(xbar, W, z, int(seed))


def _config_block(prior: DiscretePrior, N: int, start: int, stop: int):
    k = prior.n_atoms
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((stop - start, N), dtype=np.int64)
    for i in range(N):
        digits[:, i] = idx % k
        idx //= k
    X = prior.values_array[digits]
    with np.errstate(divide="ignore"):
        lw = np.log(prior.weights_array)
    logw = lw[digits].sum(axis=1)
    return X, logw


@functools.lru_cache(maxsize=8)
def _cached_blocks(prior: DiscretePrior, N: int, chunk: int):
    return tuple(_config_block(prior, N, a, min(a + chunk, prior.n_atoms ** N))
                 for a in range(0, prior.n_atoms ** N, chunk))


def configuration_blocks(prior: DiscretePrior, N: int, chunk: int = CHUNK):
    """Yield ``(X, log P_N(X))`` blocks covering ``support^N`` in a fixed order."""
    total = prior.n_atoms ** N
    if total <= _CACHE_CONFIGS:
        yield from _cached_blocks(prior, N, chunk)
        return
    for a in range(0, total, chunk):
        yield _config_block(prior, N, a, min(a + chunk, total))


def tensor_contraction(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``W : x^(p)`` for every row ``x`` of ``X``."""
    c, N = X.shape
    p = W.ndim
    if p == 1:
        return X @ W
    T = X @ W.reshape(N, -1)
    for _ in range(p - 2):
        T = np.einsum("ci,cir->cr", X, T.reshape(c, N, -1))
    return np.einsum("ci,ci->c", X, T)


# Bracket moments accumulated per configuration block.
_MOMENTS = ("B", "B2", "Bp", "Q", "Q2", "Qp", "C", "C2", "CB", "CQ", "BQ", "A")


def _block_features(X, logw, sample: DisorderSample, p: int):
    A = tensor_contraction(X, sample.W)
    B = X @ sample.xbar
    Q = np.einsum("ci,ci->c", X, X)
    C = X @ sample.z
    Bp, Qp = B ** p, Q ** p
    energy = np.stack([A, Bp, Qp, C, B, Q])
    moments = np.stack([B, B * B, Bp, Q, Q * Q, Qp, C, C * C, C * B, C * Q, B * Q, A], axis=1)
    return energy, moments


def _brackets(prior, N, p, sample, ts, hs, second_moments=False):
    """Accumulate log Z and Gibbs brackets for every point ``(ts[k], hs[k])``."""
    ts = np.asarray(ts, float)
    hs = np.asarray(hs, float)
    n_pts = ts.size
    np1 = float(N) ** (p - 1)
    coef = np.stack([np.sqrt(ts) / math.sqrt(np1), ts / np1, -ts / (2 * np1),
                     np.sqrt(hs), hs, -hs / 2], axis=1)
    shift = np.full(n_pts, -np.inf)
    Z = np.zeros(n_pts)
    G = np.zeros((n_pts, len(_MOMENTS)))
    Xs = np.zeros((n_pts, N))
    S = np.zeros((n_pts, N, N)) if second_moments else None
    for X, logw in configuration_blocks(prior, N):
        energy, moments = _block_features(X, logw, sample, p)
        H = coef @ energy + logw[None, :]
        new = np.maximum(shift, H.max(axis=1))
        scale = np.exp(shift - new)
        e = np.exp(H - new[:, None])
        Z = Z * scale + e.sum(axis=1)
        G = G * scale[:, None] + e @ moments
        Xs = Xs * scale[:, None] + e @ X
        if S is not None:
            S = S * scale[:, None, None] + np.einsum("kc,ci,cj->kij", e, X, X, optimize=True)
        shift = new
    out = {name: G[:, i] / Z for i, name in enumerate(_MOMENTS)}
    out["log_Z"] = shift + np.log(Z)
    out["mean_x"] = Xs / Z[:, None]
    if S is not None:
        out["S"] = S / Z[:, None, None]
    return out


@dataclass
class GibbsRecord:
    """Exact Gibbs quantities for one disorder sample.

    Scalar fields are floats for a single ``(t, h)`` or arrays over points.
    Derivative fields are NaN where their formula is singular (``t = 0`` for
    ``dt_F``; ``h = 0`` for the ``H'`` based ones).
    """

    F: np.ndarray
    overlap: np.ndarray            # <x.xbar>
    overlap_sq: np.ndarray         # <(x.xbar)^2>
    overlap_p: np.ndarray          # <(x.xbar)^p>
    replica_overlap: np.ndarray    # <x.x'> = |<x>|^2
    zx: np.ndarray                 # <z.x>
    dH: np.ndarray                 # <H'>
    dH_sq: np.ndarray              # <H'^2>
    dt_F: np.ndarray               # per-sample d_t F_N = <d_t H>/N
    dh_F: np.ndarray               # per-sample d_h F_N = <H'>/N
    d2h_F: np.ndarray              # per-sample d_h^2 F_N
    mean_x: np.ndarray
    replica_overlap_sq: Optional[np.ndarray] = None   # <(x.x')^2>
    three_replica: Optional[np.ndarray] = None        # <(x.x'')(x.x')>
    three_replica_planted: Optional[np.ndarray] = None  # <(x.xbar)(x.x')>


def _record_from_brackets(b, N, p, ts, hs, sample) -> GibbsRecord:
    ts = np.asarray(ts, float)
    hs = np.asarray(hs, float)
    np1 = float(N) ** (p - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        st = np.sqrt(ts)
        dtH = b["A"] / (2.0 * st * math.sqrt(np1)) + b["Bp"] / np1 - b["Qp"] / (2.0 * np1)
        dt_F = np.where(ts > 0, dtH / N, np.nan)
        sh = np.sqrt(hs)
        dH = b["C"] / (2.0 * sh) + b["B"] - b["Q"] / 2.0
        dH_sq = (b["C2"] / (4.0 * hs) + b["B2"] + b["Q2"] / 4.0
                 + b["CB"] / sh - b["CQ"] / (2.0 * sh) - b["BQ"])
        pos = hs > 0
        dH = np.where(pos, dH, np.nan)
        dH_sq = np.where(pos, dH_sq, np.nan)
        d2h = np.where(pos, (dH_sq - dH ** 2) / N - b["C"] / (4.0 * N * hs ** 1.5), np.nan)
    m = b["mean_x"]
    rec = GibbsRecord(
        F=b["log_Z"] / N, overlap=b["B"], overlap_sq=b["B2"], overlap_p=b["Bp"],
        replica_overlap=np.einsum("ki,ki->k", m, m), zx=b["C"], dH=dH, dH_sq=dH_sq,
        dt_F=dt_F, dh_F=dH / N, d2h_F=d2h, mean_x=m)
    if "S" in b:
        S = b["S"]
        rec.replica_overlap_sq = np.einsum("kij,kij->k", S, S)
        rec.three_replica = np.einsum("ki,kij,kj->k", m, S, m)
        rec.three_replica_planted = np.einsum("i,kij,kj->k", sample.xbar, S, m)
    return rec


def gibbs_points(prior: DiscretePrior, N: int, p: int, sample: DisorderSample, ts, hs,
                 second_moments: bool = False, budget: int = DEFAULT_BUDGET) -> GibbsRecord:
    """Per-sample record at several ``(t, h)`` points (arrays over points)."""
    check_enumeration_budget(prior, N, budget)
    b = _brackets(prior, N, p, sample, ts, hs, second_moments)
    return _record_from_brackets(b, N, p, ts, hs, sample)


def gibbs_enumerate(params: ModelParams, sample: DisorderSample,
                    second_moments: bool = True) -> GibbsRecord:
    """Exact Gibbs record of one sample at ``(params.t, params.h)``."""
    rec = gibbs_points(params.prior, params.N, params.p, sample, [params.t], [params.h],
                       second_moments, params.budget)
    for f in fields(rec):
        v = getattr(rec, f.name)
        if v is not None:
            setattr(rec, f.name, v[0] if f.name == "mean_x" else float(v[0]))
    return rec


def free_energy(params: ModelParams, sample: DisorderSample, t: float | None = None,
                h: float | None = None) -> float:
    """``F_N`` of a frozen sample, optionally at other ``(t, h)``."""
    t = params.t if t is None else t
    h = params.h if h is None else h
    b = _brackets(params.prior, params.N, params.p, sample, [t], [h])
    return float(b["log_Z"][0] / params.N)


# ---------------------------------------------------------------------------
# Disorder averages


@dataclass
class SampleTable:
    """Per-sample records stacked along axis 0: arrays of shape (n_samples, n_points)."""

    N: int
    p: int
    prior: DiscretePrior
    ts: np.ndarray
    hs: np.ndarray
    base_seed: int
    columns: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def __getitem__(self, key):
        return self.columns[key]


_SCALAR_FIELDS = [f.name for f in fields(GibbsRecord) if f.name != "mean_x"]


def sample_table(prior: DiscretePrior, N: int, p: int, points: Sequence[tuple[float, float]],
                 n_samples: int, base_seed: int = 0, threads: int = 1,
                 second_moments: bool = False, budget: int = DEFAULT_BUDGET) -> SampleTable:
    """Enumerate ``n_samples`` disorder samples at every point.

    Sample ``i`` uses ``sub_seed(base_seed, i)`` and results are stored by
    index, so the table does not depend on ``threads``.
    """
    check_enumeration_budget(prior, N, budget)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ts, hs = pts[:, 0].copy(), pts[:, 1].copy()
    params0 = ModelParams(N, p, 0.0, 0.0, prior, budget)

    def work(i):
        sample = sample_disorder(params0, sub_seed(base_seed, i))
        rec = gibbs_points(prior, N, p, sample, ts, hs, second_moments, budget)
        return {k: getattr(rec, k) for k in _SCALAR_FIELDS if getattr(rec, k) is not None}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, range(n_samples)))
    else:
        rows = [work(i) for i in range(n_samples)]
    cols = {k: np.stack([r[k] for r in rows]) for k in rows[0]}
    return SampleTable(N, p, prior, ts, hs, int(base_seed), cols)


def _est(value, se, k=None) -> Estimate:
    if k is None:
        return Estimate(float(value), float(se))
    return Estimate(float(value[k]), float(se[k]))


@dataclass(frozen=True)
class GibbsReport:
    N: int
    p: int
    t: float
    h: float
    n_samples: int
    F_bar: Estimate
    F_var: Estimate
    dt_F: Estimate          # (1/2N^p) E<(x.xbar)^p>
    dh_F: Estimate          # (1/2N) E<x.xbar>
    dh2_F: Estimate         # E d_h^2 F_N (h > 0)
    overlap1: Estimate      # E<x.xbar>/N
    overlap2: Estimate      # E<x.x'>/N
    overlap_var: Estimate   # E<(x.xbar - E<x.xbar>)^2>/N^2
    dt_F_direct: Estimate   # E<d_t H>/N (t > 0)
    dh_F_direct: Estimate   # E<H'>/N (h > 0)
    dh_F_var: Estimate      # Var(d_h F_N) (h > 0)

    @property
    def se_flagged(self) -> bool:
        """True when error bars are unavailable (fewer than two samples)."""
        return self.n_samples < 2

    def as_row(self) -> dict:
        row = {"N": self.N, "p": self.p, "t": self.t, "h": self.h, "n_samples": self.n_samples}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Estimate):
                row[f.name] = v.value
                row[f.name + "_se"] = v.se
        return row


def reports_from_table(table: SampleTable, n_batches: int = DEFAULT_BATCHES) -> list[GibbsReport]:
    N, p = table.N, table.p
    c = table.columns
    F = mean_estimate(c["F"], n_batches)
    Fv = variance_estimate(c["F"], n_batches)
    dt = mean_estimate(c["overlap_p"] / (2.0 * N ** p), n_batches)
    dh = mean_estimate(c["overlap"] / (2.0 * N), n_batches)
    d2 = mean_estimate(c["d2h_F"], n_batches)
    o1 = mean_estimate(c["overlap"] / N, n_batches)
    o2 = mean_estimate(c["replica_overlap"] / N, n_batches)
    ov = batch_jackknife(lambda b1, b2: (b2 - b1 * b1) / N ** 2,
                         [c["overlap"], c["overlap_sq"]], n_batches)
    dtd = mean_estimate(c["dt_F"], n_batches)
    dhd = mean_estimate(c["dh_F"], n_batches)
    dhv = variance_estimate(c["dh_F"], n_batches)
    out = []
    for k, (t, h) in enumerate(zip(table.ts, table.hs)):
        out.append(GibbsReport(
            N, p, float(t), float(h), table.n_samples,
            _est(*F, k), _est(*Fv, k), _est(*dt, k), _est(*dh, k), _est(*d2, k),
            _est(*o1, k), _est(*o2, k), _est(*ov, k), _est(*dtd, k), _est(*dhd, k),
            _est(*dhv, k)))
    return out


def free_energy_stats(params: ModelParams, n_samples: int, base_seed: int = 0,
                      threads: int = 1) -> GibbsReport:
    """Disorder-averaged report at ``(params.t, params.h)``."""
    table = sample_table(params.prior, params.N, params.p, [(params.t, params.h)],
                         n_samples, base_seed, threads, budget=params.budget)
    return reports_from_table(table)[0]


# ---------------------------------------------------------------------------
# Nishimori identities

NISHIMORI_OBSERVABLES = ("x.y", "(x.y)^2", "(x.y)(x.y')")
_NISHI_COLUMNS = {
    "x.y": ("replica_overlap", "overlap"),
    "(x.y)^2": ("replica_overlap_sq", "overlap_sq"),
    "(x.y)(x.y')": ("three_replica", "three_replica_planted"),
}


@dataclass(frozen=True)
class NishimoriRow:
    observable: str
    t: float
    h: float
    replicas: float      # E<g(x, x')> (or three-replica version)
    planted: float       # E<g(x, xbar)>
    difference: Estimate

    @property
    def passes(self) -> bool:
        return abs(self.difference.value) <= 3.0 * self.difference.se or self.difference.value == 0.0


def nishimori_from_table(table: SampleTable, observables: Iterable[str] = NISHIMORI_OBSERVABLES,
                         n_batches: int = DEFAULT_BATCHES) -> list[NishimoriRow]:
    rows = []
    for name in observables:
        a, b = _NISHI_COLUMNS[name]
        lhs, rhs = table[a], table[b]
        diff = mean_estimate(lhs - rhs, n_batches)
        for k, (t, h) in enumerate(zip(table.ts, table.hs)):
            rows.append(NishimoriRow(name, float(t), float(h), float(lhs[:, k].mean()),
                                     float(rhs[:, k].mean()), _est(*diff, k)))
    return rows


def nishimori_check(params: ModelParams, n_samples: int,
                    observables: Iterable[str] = NISHIMORI_OBSERVABLES,
                    base_seed: int = 0, threads: int = 1,
                    points: Sequence[tuple[float, float]] | None = None) -> list[NishimoriRow]:
    """Replica vs planted averages on shared disorder samples.

    Observables: ``x.y`` and ``(x.y)^2`` compare ``E<g(x, x')>`` with
    ``E<g(x, xbar)>``; ``(x.y)(x.y')`` compares ``E<(x.x'')(x.x')>`` with
    ``E<(x.xbar)(x.x')>``.
    """
    observables = tuple(observables)
    for name in observables:
        if name not in _NISHI_COLUMNS:
            raise ValueError(f"unknown observable {name!r}")
    pts = points if points is not None else [(params.t, params.h)]
    table = sample_table(params.prior, params.N, params.p, pts, n_samples, base_seed,
                         threads, second_moments=True, budget=params.budget)
    return nishimori_from_table(table, observables)


# ---------------------------------------------------------------------------
# Approximate Hamilton-Jacobi residual


@dataclass(frozen=True)
class HJResidual:
    N: int
    p: int
    t: float
    h: float
    lhs: Estimate          # derivative side, from direct Gibbs-derivative estimators
    rhs: Estimate          # overlap-fluctuation side
    difference: Estimate   # lhs - rhs
    bound_terms: Optional[Estimate]
    bound_C: float

    @property
    def identity_ok(self) -> bool:
        return abs(self.difference.value) <= 3.0 * self.difference.se

    @property
    def nonnegative_ok(self) -> bool:
        return self.lhs.value >= -3.0 * self.lhs.se

    @property
    def within_bound(self) -> Optional[bool]:
        """Inspection flag: lhs below the bound terms (None at h = 0)."""
        if self.bound_terms is None:
            return None
        if self.p == 2:
            return self.lhs.value <= self.bound_terms.value
        return (self.lhs.value / 2.0) ** 2 <= self.bound_terms.value


def default_bound_constant(prior: DiscretePrior) -> float:
    return 10.0 * prior.bound ** 4


def hj_residual_from_table(table: SampleTable, C: float | None = None,
                           n_batches: int = DEFAULT_BATCHES) -> list[HJResidual]:
    """Finite-volume HJ identity at every point of ``table``.

    p = 2:  ``d_t F - 2 (d_h F)^2`` against ``E<(x.xbar - E<x.xbar>)^2> / (2N^2)``.
    p != 2: ``2 d_t F - 2^p (d_h F)^p`` against ``E<(x.xbar/N)^p> - (E<x.xbar/N>)^p``.

    The derivative side uses the direct estimators ``E<d_t H>/N`` and
    ``E<H'>/N`` (no integration by parts), falling back to the overlap
    formulas where those are singular (``t = 0`` or ``h = 0``), so the
    comparison exercises Gaussian integration by parts and the Nishimori
    identity.
    """
    N, p = table.N, table.p
    c = table.columns
    C = default_bound_constant(table.prior) if C is None else C
    ts, hs = table.ts, table.hs
    dt = np.where(ts > 0, c["dt_F"], c["overlap_p"] / (2.0 * N ** p))
    dh = np.where(hs > 0, c["dh_F"], c["overlap"] / (2.0 * N))
    B1, B2, Bp = c["overlap"], c["overlap_sq"], c["overlap_p"]

    if p == 2:
        def lhs_fn(a, b, *_):
            return a - 2.0 * b * b

        def rhs_fn(_a, _b, b1, b2, _bp):
            return (b2 - b1 * b1) / (2.0 * N ** 2)
    else:
        def lhs_fn(a, b, *_):
            return 2.0 * a - 2.0 ** p * b ** p

        def rhs_fn(_a, _b, b1, _b2, bp):
            return bp / N ** p - (b1 / N) ** p

    cols = [dt, dh, B1, B2, Bp]
    lhs = batch_jackknife(lhs_fn, cols, n_batches)
    rhs = batch_jackknife(rhs_fn, cols, n_batches)
    diff = batch_jackknife(lambda *m: lhs_fn(*m) - rhs_fn(*m), cols, n_batches)

    with np.errstate(divide="ignore", invalid="ignore"):
        tail = (C / N) * (1.0 / hs + 1.0 / np.sqrt(hs))
    d2 = c["d2h_F"]
    dhF = c["dh_F"]
    if p == 2:
        def bound_fn(m2, m1, s1):
            return (2.0 / N) * m2 + 2.0 * (s1 - m1 * m1) + tail
    else:
        def bound_fn(m2, m1, s1):
            return C * (m2 / N + (s1 - m1 * m1)) + tail
    bound = batch_jackknife(bound_fn, [d2, dhF, dhF * dhF], n_batches)

    out = []
    for k, (t, h) in enumerate(zip(ts, hs)):
        bt = _est(*bound, k) if h > 0 else None
        out.append(HJResidual(N, p, float(t), float(h), _est(*lhs, k), _est(*rhs, k),
                              _est(*diff, k), bt, C))
    return out


def hj_residual_report(params: ModelParams, n_samples: int, base_seed: int = 0,
                       C: float | None = None, threads: int = 1) -> HJResidual:
    table = sample_table(params.prior, params.N, params.p, [(params.t, params.h)],
                         n_samples, base_seed, threads, budget=params.budget)
    return hj_residual_from_table(table, C)[0]


# ---------------------------------------------------------------------------
# Concentration of the free energy


def square_grid(M: float, resolution: int) -> list[tuple[float, float]]:
    axis = np.linspace(0.0, M, resolution)
    return [(float(t), float(h)) for t in axis for h in axis]


@dataclass(frozen=True)
class ConcentrationRow:
    N: int
    max_var: Estimate
    argmax: tuple[float, float]
    envelope: float   # max over (t, h) != 0 of N Var / (t + t^2 + h + h^2)


@dataclass(frozen=True)
class ConcentrationReport:
    rows: list
    slope: float
    points: list
    variances: dict   # N -> (values, se) over points

    def growth_fit(self, N: int):
        return quadratic_growth_check(self.points, *self.variances[N])


def quadratic_growth_check(points, var, se):
    """Weighted fit of ``Var`` by a quadratic in ``(t, h)`` vanishing at the origin.

    The basis is ``t, h, t^2, t h, h^2``, the polynomial class of the bound
    ``C/N (t + t^2 + h + h^2)``. Returns ``(coefficients, max standardized
    excess, ok)``: the excess at a point is ``(Var - fit) / se`` and ``ok``
    means no point lies more than 3 standard errors above the fit.
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    t, h = pts[:, 0], pts[:, 1]
    var, se = np.asarray(var, float), np.asarray(se, float)
    keep = (t + h) > 0
    t, h, v, e = t[keep], h[keep], var[keep], se[keep]
    e = np.where(e > 0, e, np.min(e[e > 0]) if np.any(e > 0) else 1.0)
    basis = np.stack([t, h, t * t, t * h, h * h], axis=1)
    coefs, *_ = np.linalg.lstsq(basis / e[:, None], v / e, rcond=None)
    excess = (v - basis @ coefs) / e
    return coefs, float(excess.max()), bool(excess.max() <= 3.0)


def concentration_from_variances(points, variances: dict) -> ConcentrationReport:
    """Summarize ``{N: (Var, se)}`` arrays given over a common list of points."""
    pts = [tuple(map(float, q)) for q in points]
    arr = np.asarray(pts, float).reshape(-1, 2)
    g = arr[:, 0] + arr[:, 0] ** 2 + arr[:, 1] + arr[:, 1] ** 2
    rows = []
    for N in sorted(variances):
        v, se = (np.asarray(a, float) for a in variances[N])
        k = int(np.argmax(v))
        with np.errstate(divide="ignore", invalid="ignore"):
            env = np.where(g > 0, N * v / g, 0.0)
        rows.append(ConcentrationRow(N, Estimate(float(v[k]), float(se[k])), pts[k], float(env.max())))
    maxes = [r.max_var.value for r in rows]
    slope = loglog_slope([r.N for r in rows], maxes) if len(rows) > 1 and min(maxes) > 0 else float("nan")
    return ConcentrationReport(rows, slope, pts, {N: variances[N] for N in sorted(variances)})


def concentration_from_tables(tables: dict, n_batches: int = DEFAULT_BATCHES) -> ConcentrationReport:
    points = None
    variances = {}
    for N, tab in tables.items():
        pts = list(zip(tab.ts.tolist(), tab.hs.tolist()))
        if points is None:
            points = pts
        elif pts != points:
            raise ValueError("concentration tables must share the same grid")
        variances[N] = variance_estimate(tab["F"], n_batches)
    return concentration_from_variances(points, variances)


def concentration_report(prior: DiscretePrior, p: int, M: float, N_list: Sequence[int],
                         n_samples: int, resolution: int = 5, base_seed: int = 0,
                         threads: int = 1) -> ConcentrationReport:
    """Empirical ``Var(F_N)`` on a ``resolution x resolution`` grid of ``[0, M]^2``."""
    pts = square_grid(M, resolution)
    tables = {N: sample_table(prior, N, p, pts, n_samples, base_seed, threads) for N in N_list}
    return concentration_from_tables(tables)
