"""Range counting through the matrix mechanism over a dyadic tree.

The complete binary tree over ``[B]`` has nodes ``(t, s)`` at depth ``t`` and
position ``s``.  Only the root and the left children are kept; they are
numbered ``j = 1..B`` in breadth-first order: ``j = 1`` is the root and, for
``t >= 1``, ``j = 2**(t-1) + (s+1)/2``.  Node ``j`` aggregates the leaves
below it, so a user holding leaf ``x`` contributes to the ``1 + log2 B``
kept ancestors of ``x`` (its column support).

Any range sum over the leaves is a signed combination of kept nodes: a prefix
``[1, m]`` uses one left child per set bit of ``m``, and ``[j, j']`` is the
difference of two prefixes.  In ``d`` dimensions everything is the tensor
product of the one-dimensional pieces, flattened row-major.

A user sends its support set through a frequency oracle (Count-Min by
default) and the analyzer answers each query as the signed sum of oracle
estimates on the decomposition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Dataset,
    DomainError,
    ExactOracle,
    FormatError,
    ParameterError,
    QueryError,
    RandomStream,
    ShuffledBatch,
    SparsityError,
    VectorOracle,
    log2_exact,
    pad_domain,
)
from .countmin import CMOracle, CMParams, HashFamily, analyze_cm, randomize_cm, run_cm
from .hadamard import HadParams, analyze_had_fast, randomize_had, run_had


# one-dimensional tree algebra

def node_index(j: int, B: int | None = None) -> tuple[int, int]:
    """Depth and position ``(t, s)`` of the kept node numbered ``j``."""
    if j < 1 or (B is not None and j > B):
        raise DomainError(f"node number {j} outside [1, {B}]")
    if j == 1:
        return (0, 1)
    t = (j - 1).bit_length()
    return (t, 2 * (j - (1 << (t - 1))) - 1)


def node_number(t: int, s: int) -> int:
    """Inverse of :func:`node_index`; only the root and left children have a number."""
    if t == 0:
        if s != 1:
            raise DomainError("the root is (0, 1)")
        return 1
    if not (1 <= s <= 1 << t) or s % 2 == 0:
        raise DomainError(f"node ({t}, {s}) is not a left child")
    return (1 << (t - 1)) + (s + 1) // 2


def column_support(x: int, B: int) -> np.ndarray:
    """Numbers of the kept nodes above leaf ``x``, in increasing order."""
    L = log2_exact(B)
    if not 1 <= x <= B:
        raise DomainError(f"leaf {x} outside [1, {B}]")
    out = [1]
    for t in range(1, L + 1):
        s = ((x - 1) >> (L - t)) + 1
        if s % 2 == 1:
            out.append((1 << (t - 1)) + (s + 1) // 2)
    return np.array(out, dtype=np.int64)


def tree_transform(z, B: int) -> np.ndarray:
    """Node aggregates ``y = M z`` of a leaf vector ``z``, indexed by node number."""
    z = np.asarray(z)
    if z.shape != (B,):
        raise ParameterError(f"expected a vector of length {B}")
    y = np.zeros(B, dtype=z.dtype)
    for x in range(1, B + 1):
        y[column_support(x, B) - 1] += z[x - 1]
    return y


class SignedSparseVector:
    """Sparse vector with nonzero integer coefficients, keyed by 1-based index."""

    __slots__ = ("entries",)

    def __init__(self, entries: dict[int, int] | None = None):
        self.entries = {int(k): int(v) for k, v in (entries or {}).items() if v != 0}

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if isinstance(other, SignedSparseVector):
            return self.entries == other.entries
        if isinstance(other, dict):
            return self.entries == {k: v for k, v in other.items() if v != 0}
        return NotImplemented

    def __repr__(self) -> str:
        return f"SignedSparseVector({dict(sorted(self.entries.items()))})"

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        keys = sorted(self.entries)
        return (np.array(keys, dtype=np.int64), np.array([self.entries[k] for k in keys], dtype=np.int64))

    def dot(self, y) -> float:
        """Inner product with a dense vector indexed from 1."""
        idx, coef = self.arrays()
        return (np.asarray(y)[idx - 1] * coef).sum() if len(idx) else 0

    def add(self, other: "SignedSparseVector", sign: int = 1) -> "SignedSparseVector":
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out.get(k, 0) + sign * v
        return SignedSparseVector(out)


def prefix_nodes(m: int, B: int) -> list[int]:
    """Kept nodes whose leaf sets partition ``[1, m]``, one per set bit of ``m``."""
    L = log2_exact(B)
    if not 0 <= m <= B:
        raise QueryError(f"prefix length {m} outside [0, {B}]")
    out = []
    for b in range(L, -1, -1):
        if (m >> b) & 1:
            t = L - b
            s = ((m >> (b + 1)) << 1) + 1  # always odd: a left child or the root
            out.append(1 if t == 0 else (1 << (t - 1)) + (s + 1) // 2)
    return out


def range_decomposition(j: int, jp: int, B: int) -> SignedSparseVector:
    """Signed node combination equal to the leaf sum over ``[j, jp]``."""
    if not 1 <= j <= jp <= B:
        raise QueryError(f"range [{j}, {jp}] invalid for domain [1, {B}]")
    out: dict[int, int] = {}
    for v in prefix_nodes(jp, B):
        out[v] = out.get(v, 0) + 1
    for v in prefix_nodes(j - 1, B):
        out[v] = out.get(v, 0) - 1
    return SignedSparseVector(out)


def count_ones(m: int) -> int:
    return int(m).bit_count()


# d dimensions

@dataclass(frozen=True)
class RangeQuery:
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise QueryError("lo and hi need the same nonzero number of coordinates")
        for a, b in zip(self.lo, self.hi):
            if a > b:
                raise QueryError(f"empty range [{a}, {b}]")

    @property
    def d(self) -> int:
        return len(self.lo)

    def __str__(self) -> str:
        return ";".join(f"{a},{b}" for a, b in zip(self.lo, self.hi))

    @classmethod
    def parse(cls, text: str) -> "RangeQuery":
        try:
            parts = [tuple(int(v) for v in chunk.split(",")) for chunk in text.strip().split(";")]
        except ValueError as exc:
            raise FormatError(f"bad query {text!r}: {exc}") from None
        if any(len(p) != 2 for p in parts):
            raise FormatError(f"bad query {text!r}: each dimension needs lo,hi")
        return cls(tuple(p[0] for p in parts), tuple(p[1] for p in parts))


def flatten_index(coords: Sequence[int], B0: int) -> int:
    """Row-major flattening of 1-based coordinates into ``[1, B0**d]``."""
    flat = 0
    for c in coords:
        flat = flat * B0 + (int(c) - 1)
    return flat + 1


def _check_query(q: RangeQuery, B0: int, d: int) -> None:
    if q.d != d:
        raise QueryError(f"query has {q.d} dimensions, expected {d}")
    for a, b in zip(q.lo, q.hi):
        if a < 1 or b > B0:
            raise QueryError(f"range [{a}, {b}] outside [1, {B0}]")


def range_decomposition_d(q: RangeQuery, B0: int, d: int) -> SignedSparseVector:
    """Tensor product of per-dimension decompositions; ``B0`` must be a power of two."""
    _check_query(q, B0, d)
    parts = [range_decomposition(a, b, B0).entries for a, b in zip(q.lo, q.hi)]
    out = {}
    for combo in itertools.product(*(sorted(p.items()) for p in parts)):
        coef = 1
        for _, c in combo:
            coef *= c
        out[flatten_index([k for k, _ in combo], B0)] = coef
    return SignedSparseVector(out)


def column_support_d(point: Sequence[int], B0: int, d: int) -> np.ndarray:
    """Flattened Cartesian product of per-dimension column supports, sorted."""
    if len(point) != d:
        raise DomainError(f"point has {len(point)} coordinates, expected {d}")
    sup = [column_support(int(c), B0) for c in point]
    out = np.zeros(1, dtype=np.int64)
    for s in sup:
        out = (out[:, None] * B0 + (s[None, :] - 1)).reshape(-1)
    return np.sort(out + 1)


# protocol

@dataclass(frozen=True)
class RangeParams:
    n: int
    B0: int
    d: int
    k: int
    fo: str
    fo_params: CMParams | HadParams | None
    strict_paper: bool = False

    @property
    def B0p(self) -> int:
        return pad_domain(self.B0)

    @property
    def B(self) -> int:
        return self.B0p**self.d

    @property
    def tight_k(self) -> int:
        return (1 + log2_exact(self.B0p)) ** self.d


def make_range_params(
    n: int,
    B0: int,
    d: int,
    eps: float = 1.0,
    delta: float = 1e-6,
    beta: float = 0.2,
    *,
    fo: str = "cm",
    strict_paper: bool = False,
    noiseless: bool = False,
    k: int | None = None,
    one_sided: bool = False,
) -> RangeParams:
    """Parameters of the range protocol over ``[1, B0]^d`` (padded per dimension).

    ``k`` defaults to the exact per-user support size ``(1 + log2 B0)^d``.
    With ``strict_paper`` the Hadamard variant uses ``(log2 2B)^d`` with
    ``B = B0^d`` instead, which is larger for ``d > 1``.
    """
    if n < 0 or d < 1 or B0 < 1:
        raise ParameterError(f"invalid n={n}, B0={B0}, d={d}")
    B0p = pad_domain(B0)
    B = B0p**d
    tight = (1 + log2_exact(B0p)) ** d
    if k is None:
        k = tight
        if strict_paper and fo == "had":
            k = (1 + log2_exact(B)) ** d
    if k < tight:
        raise ParameterError(f"k={k} below the support size {tight}")
    if fo == "cm":
        if noiseless:
            c = CMParams.for_privacy(max(n, 1), max(B, 2), k, eps, delta, beta)
            fp = CMParams(n, B, c.tau, c.s, 0.0, k, one_sided)
        else:
            c = CMParams.for_privacy(max(n, 1), max(B, 2), k, eps, delta, beta, one_sided=one_sided)
            fp = CMParams(n, B, c.tau, c.s, c.gamma, k, one_sided, c.clamped)
    elif fo == "had":
        if B <= k:
            raise ParameterError(f"Hadamard oracle needs k < B, got k={k}, B={B}")
        fp = HadParams.noiseless(n, B, k) if noiseless else HadParams.for_privacy(n, B, k, eps, delta)
    elif fo == "exact":
        fp = None
    else:
        raise ParameterError(f"unknown frequency oracle {fo!r}")
    return RangeParams(n, B0, d, k, fo, fp, strict_paper)


def _points(points, d: int, B0: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, d)
    if pts.size and (pts.min() < 1 or pts.max() > B0):
        raise DomainError(f"point coordinate outside [1, {B0}]")
    return pts


def support_sets(points, params: RangeParams) -> list[np.ndarray]:
    pts = _points(points, params.d, params.B0)
    return [column_support_d(p, params.B0p, params.d) for p in pts]


def randomize_range(point, params: RangeParams, rng: RandomStream, family: HashFamily | None = None) -> np.ndarray:
    """The chosen oracle's randomizer applied to the point's column support."""
    sup = column_support_d([int(c) for c in point], params.B0p, params.d)
    if any(int(c) > params.B0 for c in point):
        raise DomainError(f"point {tuple(point)} outside [1, {params.B0}]^{params.d}")
    if len(sup) > params.k:
        raise SparsityError(f"support of size {len(sup)} exceeds k={params.k}")
    if params.fo == "cm":
        if family is None:
            raise ParameterError("Count-Min oracle needs a hash family")
        return randomize_cm(sup, params.fo_params, family, rng)
    if params.fo == "had":
        return randomize_had(sup, params.fo_params, rng)
    raise ParameterError("the exact oracle has no randomizer")


def range_family(params: RangeParams, public_seed: int) -> HashFamily | None:
    if params.fo != "cm":
        return None
    return HashFamily.from_seed(public_seed, params.fo_params.tau, params.fo_params.s)


@dataclass
class RangeRun:
    oracle: object
    user_counts: np.ndarray | None
    messages_analyzed: int
    family: HashFamily | None = None
    batch: ShuffledBatch | None = field(default=None, repr=False)


def run_range(points, params: RangeParams, seed: int, public_seed: int = 0, *, materialize: bool = False, cm_mode: str = "auto") -> RangeRun:
    """Randomize all points, analyze, and return a frequency oracle over tree nodes."""
    sets = support_sets(points, params)
    ds = Dataset.from_sets(sets, params.B, params.k) if sets else Dataset((), params.B, params.k)
    if params.fo == "exact":
        return RangeRun(ExactOracle(ds), None, 0)
    if params.fo == "cm":
        fam = range_family(params, public_seed)
        r = run_cm(ds, params.fo_params, fam, seed, mode="messages" if materialize else cm_mode, materialize=materialize)
        return RangeRun(CMOracle(r.sketch, params.fo_params, fam), r.user_counts, r.messages_analyzed, fam, r.batch)
    r = run_had(ds, params.fo_params, seed, materialize=materialize)
    return RangeRun(VectorOracle(r.estimates), r.user_counts, r.messages_analyzed, None, r.batch)


def answer_queries(oracle, queries: Iterable[RangeQuery], params: RangeParams) -> np.ndarray:
    """Signed sums of oracle estimates over each query's decomposition."""
    out = []
    for q in queries:
        _check_query(q, params.B0, params.d)
        dec = range_decomposition_d(q, params.B0p, params.d)
        idx, coef = dec.arrays()
        out.append(float((oracle.query_many(idx) * coef).sum()) if len(idx) else 0.0)
    return np.array(out, dtype=np.float64)


def analyze_range(batch: ShuffledBatch, queries: Iterable[RangeQuery], params: RangeParams, family: HashFamily | None = None) -> np.ndarray:
    """Answers from a shuffled batch produced by :func:`randomize_range`."""
    if params.fo == "cm":
        if family is None:
            raise ParameterError("Count-Min oracle needs the hash family")
        oracle = CMOracle(analyze_cm(batch, params.fo_params), params.fo_params, family)
    elif params.fo == "had":
        oracle = VectorOracle(analyze_had_fast(batch, params.fo_params))
    else:
        raise ParameterError("the exact oracle has no batch")
    return answer_queries(oracle, queries, params)


def exact_range_counts(points, queries: Iterable[RangeQuery], d: int) -> np.ndarray:
    """Brute-force point-in-box counts."""
    pts = np.asarray(points, dtype=np.int64).reshape(-1, d)
    out = []
    for q in queries:
        lo = np.array(q.lo)
        hi = np.array(q.hi)
        out.append(int(np.count_nonzero(((pts >= lo) & (pts <= hi)).all(axis=1))) if len(pts) else 0)
    return np.array(out, dtype=np.int64)


def max_decomposition_size(params: RangeParams) -> int:
    """Largest number of nodes any query over the padded domain can touch."""
    L = log2_exact(params.B0p)
    return (2 * L) ** params.d if L > 0 else 1


def range_error_bound(per_query_alpha: float, params: RangeParams) -> float:
    return per_query_alpha * max_decomposition_size(params)


def read_queries(path: str | Path) -> list[RangeQuery]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(RangeQuery.parse(line))
    return out


def write_answers_csv(path: str | Path, queries, estimates, truth=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query,estimate,truth,abs_error\n")
        for i, q in enumerate(queries):
            est = float(estimates[i])
            if truth is None:
                fh.write(f"\"{q}\",{est!r},,\n")
            else:
                t = int(truth[i])
                fh.write(f"\"{q}\",{est!r},{t},{abs(est - t)!r}\n")
