"""Tasks built on the frequency oracles.

* Heavy hitters with a binary prefix tree of Count-Min oracles.
* Median and quantile M-estimation from private prefix counts.
* Non-adaptive sparse statistical queries through the Hadamard protocol.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ConfigError, Dataset, DomainError, ParameterError, SparsityError, derive_seed, pad_domain
from .countmin import CMOracle, CMParams, HashFamily, cm_error_bound, run_cm
from .hadamard import HadParams, run_had
from .privacy import PrivacyParams
from .rangequery import make_range_params, prefix_nodes, run_range


# heavy hitters

@dataclass
class HeavyHitterResult:
    items: list[tuple[int, float]]
    nodes_expanded: int
    levels: int
    error_floor: float
    survivor_cap: int
    per_level_survivors: list[int] = field(default_factory=list)
    messages_total: int = 0
    bits_total: int = 0


def _prefix_sets(dataset: Dataset, L: int, level: int) -> list[list[int]]:
    shift = L - level
    return [sorted({((x - 1) >> shift) + 1 for x in u}) for u in dataset.users]


def heavy_hitter_levels(n: int, B: int, k: int, privacy: PrivacyParams, *, one_sided: bool = False) -> list[CMParams]:
    """Count-Min parameters for each prefix length ``1..ceil(log2 B)``.

    Each level gets ``eps/L`` and ``delta/L`` so the levels compose to
    ``(eps, delta)``, and ``beta/L`` so all levels are accurate together with
    probability ``1 - beta``.
    """
    L = max(1, (pad_domain(B) - 1).bit_length())
    out = []
    for i in range(1, L + 1):
        out.append(
            CMParams.for_privacy(
                max(n, 1), 1 << i, k, privacy.epsilon / L, privacy.delta / L, privacy.beta / L, one_sided=one_sided
            )
        )
    return [CMParams(n, p.B, p.tau, p.s, p.gamma, p.k, p.one_sided, p.clamped) for p in out]


def heavy_hitter_error_floor(levels: list[CMParams], beta: float) -> float:
    L = len(levels)
    return max(cm_error_bound(p, beta / L) for p in levels)


def heavy_hitters(
    dataset: Dataset,
    threshold: float,
    privacy: PrivacyParams,
    seed: int,
    *,
    public_seed: int | None = None,
    strict: bool = False,
    one_sided: bool = False,
    cm_mode: str = "auto",
) -> HeavyHitterResult:
    """Elements whose count is at least ``threshold``, found level by level.

    Every user inserts all binary prefixes of its elements, one Count-Min
    oracle per prefix length.  The decoder starts from the two length-1
    prefixes, keeps those with estimate at least ``threshold/2`` (at most
    ``4n/threshold`` of them, largest first) and expands only the survivors.
    """
    n, B = dataset.n, dataset.B
    if threshold <= 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    levels = heavy_hitter_levels(n, B, dataset.k, privacy, one_sided=one_sided)
    L = len(levels)
    floor = heavy_hitter_error_floor(levels, privacy.beta)
    if threshold <= 2 * floor:
        msg = f"threshold {threshold} is not above twice the per-level error floor {floor:.1f}"
        if strict:
            raise ConfigError(msg)
        warnings.warn(msg, stacklevel=2)
    public_seed = seed if public_seed is None else public_seed
    cap = max(1, int(4 * n / threshold))
    candidates = np.array([1, 2], dtype=np.int64)
    expanded = 0
    survivors_per_level = []
    est = np.zeros(0)
    messages = bits = 0
    for i, p in enumerate(levels, start=1):
        fam = HashFamily.from_seed(derive_seed(public_seed, i), p.tau, p.s)
        run = run_cm(_prefix_sets(dataset, L, i), p, fam, derive_seed(seed, i), mode=cm_mode)
        oracle = CMOracle(run.sketch, p, fam)
        messages += run.messages_analyzed
        bits += run.messages_analyzed * p.message_bits
        candidates = candidates[candidates <= p.B]
        expanded += len(candidates)
        est = oracle.query_many(candidates)
        keep = est >= threshold / 2
        candidates, est = candidates[keep], est[keep]
        if len(candidates) > cap:
            order = np.lexsort((candidates, -est))[:cap]
            candidates, est = candidates[order], est[order]
        survivors_per_level.append(len(candidates))
        if i < L:
            candidates = np.sort(np.concatenate([2 * candidates - 1, 2 * candidates]))
    keep = candidates <= B
    candidates, est = candidates[keep], est[keep]
    order = np.lexsort((candidates, -est))
    items = [(int(candidates[o]), float(est[o])) for o in order]
    return HeavyHitterResult(items, expanded, L, floor, cap, survivors_per_level, messages, bits)


# quantiles

@dataclass(frozen=True)
class QuantileSpec:
    k: int
    q: int
    values: tuple[float, ...]

    def __post_init__(self):
        if not 1 <= self.k < self.q:
            raise ParameterError(f"need 1 <= k < q, got k={self.k}, q={self.q}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.size and (v.min() < 0 or v.max() > 1 or np.isnan(v).any()):
            raise DomainError("values must lie in [0, 1]")

    @classmethod
    def median(cls, values) -> "QuantileSpec":
        return cls(1, 2, tuple(float(v) for v in values))

    @property
    def p(self) -> float:
        return self.k / self.q


def quantile_objective(values, y, p: float = 0.5) -> np.ndarray:
    """``sum_i (1-p)(y - x_i)_+ + p (x_i - y)_+``; at ``p = 1/2`` this is ``sum |x_i - y| / 2``."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    # prefix sums make this O((n + |y|) log n)
    cs = np.concatenate([[0.0], np.cumsum(x)])
    below = np.searchsorted(x, y, side="right")
    sum_below = cs[below]
    sum_above = cs[-1] - sum_below
    above = len(x) - below
    return (1 - p) * (below * y - sum_below) + p * (sum_above - above * y)


def quantile_objective_min(values, p: float = 0.5) -> float:
    """Minimum of the objective; it is convex and piecewise linear with kinks at the data."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(quantile_objective(x, np.unique(x), p).min())


def bucket_of(values, B: int) -> np.ndarray:
    """Bucket ``j`` with ``x in ((j-1)/B, j/B]``; 0 goes to bucket 1 and 1.0 to bucket B."""
    x = np.asarray(values, dtype=np.float64)
    j = np.ceil(x * B)
    # undo rounding that pushes a value sitting on a boundary into the upper bucket
    j = np.where((j > 1) & (x <= (j - 1) / B), j - 1, j)
    return np.clip(j, 1, B).astype(np.int64)


@dataclass
class QuantileResult:
    value: float
    bucket: int
    B: int
    prefix_counts: np.ndarray = field(repr=False)
    messages_total: int = 0
    message_bits: int = 0


def m_estimate_quantile_detail(
    spec: QuantileSpec,
    privacy: PrivacyParams,
    seed: int,
    *,
    fo: str = "cm",
    noiseless: bool = False,
    public_seed: int | None = None,
    B: int | None = None,
) -> QuantileResult:
    n = len(spec.values)
    if n == 0:
        raise ParameterError("need at least one value")
    B = n if B is None else B
    buckets = bucket_of(spec.values, B)
    params = make_range_params(
        n, B, 1, privacy.epsilon, privacy.delta, privacy.beta, fo="exact" if noiseless else fo
    )
    run = run_range(buckets.reshape(-1, 1), params, seed, seed if public_seed is None else public_seed)
    prefix = prefix_counts(run.oracle, params, B)
    target = spec.k * n / spec.q
    hit = np.nonzero(prefix >= target)[0]
    j_star = int(hit[0]) + 1 if hit.size else B
    fp = params.fo_params
    mbits = 0 if fp is None else fp.message_bits
    return QuantileResult(j_star / B, j_star, B, prefix, run.messages_analyzed, mbits)


def m_estimate_quantile(spec: QuantileSpec, privacy: PrivacyParams, seed: int, **kw) -> float:
    """``j*/B`` for the first bucket ``j*`` whose private prefix count reaches ``k n / q``.

    ``B`` defaults to ``n``; the range tree pads it to a power of two.
    """
    return m_estimate_quantile_detail(spec, privacy, seed, **kw).value


def prefix_counts(oracle, params, B: int) -> np.ndarray:
    """Estimated counts of ``[1, j]`` for ``j = 1..B`` from node estimates."""
    est = oracle.query_many(np.arange(1, params.B + 1))
    out = np.empty(B)
    for m in range(1, B + 1):
        out[m - 1] = est[np.array(prefix_nodes(m, params.B0p)) - 1].sum()
    return out


# statistical queries

def sq_sample_bound(B: int, k: int, tolerance: float, privacy: PrivacyParams) -> float:
    """Sample size of the form ``log(B/beta)/tol^2 + k log(B/beta) sqrt(log(k/(delta eps)))/(eps tol)``."""
    lg = math.log(B / privacy.beta)
    return lg / tolerance**2 + k * lg * math.sqrt(math.log(k / (privacy.delta * privacy.epsilon))) / (
        privacy.epsilon * tolerance
    )


def sq_params(n: int, num_queries: int, k: int, privacy: PrivacyParams) -> HadParams:
    """Hadamard parameters for ``num_queries`` predicates, padded to a power of two above ``k``."""
    Bp = max(pad_domain(num_queries), 2)
    while Bp <= k:
        Bp *= 2
    return HadParams.for_privacy(n, Bp, k, privacy.epsilon, privacy.delta)


def satisfied_sets(predicates: Sequence[Callable], samples: Sequence, k: int) -> list[list[int]]:
    """1-based indices of the predicates each sample satisfies, checking every predicate."""
    out = []
    for i, x in enumerate(samples):
        hits = [j + 1 for j, q in enumerate(predicates) if q(x)]
        if len(hits) > k:
            raise SparsityError(f"sample {i} ({x!r}) satisfies {len(hits)} predicates, more than k={k}")
        out.append(hits)
    return out


def simulate_sq(
    predicates: Sequence[Callable],
    samples: Sequence,
    tolerance: float,
    privacy: PrivacyParams,
    seed: int,
    *,
    k: int = 1,
    sets: list[list[int]] | None = None,
) -> np.ndarray:
    """Private answers to ``B`` statistical queries, each the fraction of samples satisfying it.

    Each sample's satisfied-predicate set goes through the Hadamard protocol
    over a domain padded to a power of two, and the estimates are divided by
    ``n``.
    """
    n = len(samples)
    Bq = len(predicates)
    if n == 0 or Bq == 0:
        raise ParameterError("need samples and predicates")
    if sets is None:
        sets = satisfied_sets(predicates, samples, k)
    need = sq_sample_bound(Bq, k, tolerance, privacy)
    if n < need:
        warnings.warn(f"n={n} is below the sample bound {need:.0f} for tolerance {tolerance}", stacklevel=2)
    p = sq_params(n, Bq, k, privacy)
    run = run_had(Dataset.from_sets(sets, p.B, k), p, seed)
    return run.estimates[:Bq] / n

