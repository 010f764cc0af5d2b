"""Public-coin frequency estimation: Count-Min with Bernoulli blanket noise.

Every user reports ``(t, h_t(j))`` for each held element ``j`` and each row
``t``, and additionally each of the ``tau * s`` cells independently with
probability ``gamma``.  The analyzer is a plain counter table; a point query
takes the minimum over rows and subtracts the expected noise ``gamma * n``.

The hash functions are public randomness shared by all parties.  They are a
multiply-add family over the Mersenne prime ``2**61 - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import (
    Dataset,
    DomainError,
    FormatError,
    ParameterError,
    RandomStream,
    Role,
    ShuffledBatch,
    SparsityError,
    shuffle,
)
from .privacy import cm_params

MERSENNE61 = (1 << 61) - 1
_P = np.uint64(MERSENNE61)
_LO32 = np.uint64(0xFFFFFFFF)
_LO29 = np.uint64((1 << 29) - 1)


@dataclass(frozen=True)
class CMParams:
    n: int
    B: int
    tau: int
    s: int
    gamma: float
    k: int = 1
    one_sided: bool = False
    clamped: bool = False

    def __post_init__(self):
        if self.tau < 1 or self.s < 1:
            raise ParameterError(f"need tau >= 1 and s >= 1, got tau={self.tau}, s={self.s}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.B < 1 or self.B >= 2**32:
            raise ParameterError(f"B must be in [1, 2^32), got {self.B}")
        if self.n < 0 or self.k < 1:
            raise ParameterError(f"need n >= 0 and k >= 1, got n={self.n}, k={self.k}")

    @classmethod
    def for_privacy(
        cls,
        n: int,
        B: int,
        k: int,
        eps: float,
        delta: float,
        beta: float,
        *,
        c_util: float = 1.0,
        one_sided: bool = False,
    ) -> "CMParams":
        c = cm_params(n, B, k, eps, delta, beta, c_util)
        return cls(n, B, c.tau, c.s, c.gamma, k, one_sided, c.clamped)

    @property
    def cells(self) -> int:
        return self.tau * self.s

    @property
    def message_bits(self) -> int:
        """Bits to encode one (row, bucket) pair."""
        return max(1, math.ceil(math.log2(self.tau))) + max(1, math.ceil(math.log2(self.s)))

    def expected_messages_per_user(self) -> float:
        return self.k * self.tau + self.gamma * self.cells


@dataclass(frozen=True)
class HashFamily:
    """``h_t(j) = ((a_t j + b_t) mod p) mod s`` for rows ``t = 1..tau``, with residue 0 read as bucket ``s``."""

    a: tuple[int, ...]
    b: tuple[int, ...]
    s: int
    seed: int | None = None

    def __post_init__(self):
        if len(self.a) != len(self.b) or not self.a:
            raise ParameterError("need one (a, b) pair per row")
        if not 1 <= self.s < MERSENNE61:
            raise ParameterError(f"range s={self.s} must be in [1, p)")
        for a, b in zip(self.a, self.b):
            if not (1 <= a < MERSENNE61 and 0 <= b < MERSENNE61):
                raise ParameterError("hash coefficients outside the field")

    @classmethod
    def from_seed(cls, seed: int, tau: int, s: int) -> "HashFamily":
        g = RandomStream(seed, 0, Role.HASH).generator
        a = g.integers(1, MERSENNE61, size=tau, dtype=np.uint64)
        b = g.integers(0, MERSENNE61, size=tau, dtype=np.uint64)
        return cls(tuple(int(x) for x in a), tuple(int(x) for x in b), s, seed)

    @property
    def tau(self) -> int:
        return len(self.a)

    def eval(self, t: int, j: int) -> int:
        if not 1 <= t <= self.tau:
            raise ParameterError(f"row {t} outside [1, {self.tau}]")
        v = (self.a[t - 1] * int(j) + self.b[t - 1]) % MERSENNE61 % self.s
        return v if v else self.s

    def eval_rows(self, js) -> np.ndarray:
        """Buckets of every element in every row, shape ``(tau, len(js))``, 1-based."""
        x = np.asarray(js, dtype=np.uint64).reshape(-1)
        if x.size and int(x.max()) >= 2**32:
            raise DomainError("hash inputs must be below 2^32")
        a = np.array(self.a, dtype=np.uint64)[:, None]
        b = np.array(self.b, dtype=np.uint64)[:, None]
        r = _mulmod61(a, x[None, :]) + b
        r = _fold61(r)
        r = np.where(r >= _P, r - _P, r)
        v = (r % np.uint64(self.s)).astype(np.int64)
        return np.where(v == 0, self.s, v)


def _fold61(z: np.ndarray) -> np.ndarray:
    return (z & _P) + (z >> np.uint64(61))


def _mulmod61(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``a * x mod (2^61 - 1)`` up to one extra multiple of p, for a < 2^61 and x < 2^32."""
    ah = a >> np.uint64(32)
    al = a & _LO32
    lo = _fold61(al * x)
    y = ah * x  # < 2^61
    hi = (y >> np.uint64(29)) + ((y & _LO29) << np.uint64(32))
    return _fold61(lo + hi)


def hash_eval(family: HashFamily, t: int, j: int) -> int:
    return family.eval(t, j)


def _check_input(elements: Iterable[int], p: CMParams) -> np.ndarray:
    S = np.array(sorted(int(x) for x in elements), dtype=np.int64)
    if len(S) > p.k:
        raise SparsityError(f"input has {len(S)} elements, more than k={p.k}")
    if S.size and (S.min() < 1 or S.max() > p.B):
        raise DomainError(f"element outside [1, {p.B}]")
    return S


def _payload_cells(S: np.ndarray, p: CMParams, family: HashFamily) -> np.ndarray:
    """Zero-based flat cell indices ``(t-1)*s + (h_t(j)-1)``, element-major."""
    if S.size == 0:
        return np.zeros(0, dtype=np.int64)
    buckets = family.eval_rows(S) - 1  # (tau, |S|)
    rows = np.arange(p.tau, dtype=np.int64)[:, None] * p.s
    return (rows + buckets).T.reshape(-1)


def _blanket_cells(p: CMParams, rng: RandomStream) -> np.ndarray:
    g = rng.with_role(Role.BLANKET).generator
    c = int(g.binomial(p.cells, p.gamma)) if p.gamma > 0 else 0
    if c == 0:
        return np.zeros(0, dtype=np.int64)
    if c == p.cells:
        return np.arange(p.cells, dtype=np.int64)
    return np.sort(g.choice(p.cells, size=c, replace=False, shuffle=False)).astype(np.int64)


def _cells_to_messages(cells: np.ndarray, s: int) -> np.ndarray:
    return np.stack([cells // s + 1, cells % s + 1], axis=1)


def randomize_cm(elements: Iterable[int], p: CMParams, family: HashFamily, rng: RandomStream) -> np.ndarray:
    """Messages of one user as ``(row, bucket)`` pairs, shape ``(m, 2)``, 1-based.

    Payload pairs come first (grouped by element), then the blanket cells.
    The blanket is drawn as a ``Bin(tau*s, gamma)`` total placed uniformly
    without replacement, which has the same law as an independent coin per cell.
    """
    if family.tau != p.tau or family.s != p.s:
        raise ParameterError("hash family shape does not match parameters")
    S = _check_input(elements, p)
    cells = np.concatenate([_payload_cells(S, p, family), _blanket_cells(p, rng)])
    return _cells_to_messages(cells, p.s)


@dataclass
class CMSketch:
    """Counter table with ``tau`` rows and ``s`` buckets."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.int64)
        if self.table.ndim != 2:
            raise FormatError("sketch table must be two-dimensional")
        if (self.table < 0).any():
            raise FormatError("sketch counters must be nonnegative")

    @classmethod
    def zeros(cls, tau: int, s: int) -> "CMSketch":
        return cls(np.zeros((tau, s), dtype=np.int64))

    @property
    def tau(self) -> int:
        return self.table.shape[0]

    @property
    def s(self) -> int:
        return self.table.shape[1]

    def total(self) -> int:
        return int(self.table.sum())

    def merge(self, other: "CMSketch") -> "CMSketch":
        if self.table.shape != other.table.shape:
            raise FormatError("cannot merge sketches of different shapes")
        return CMSketch(self.table + other.table)

    def add_cells(self, cells: np.ndarray) -> None:
        """Add flat zero-based cell indices into the table in place."""
        if len(cells):
            self.table += np.bincount(cells, minlength=self.table.size).reshape(self.table.shape)


def analyze_cm(batch: ShuffledBatch, p: CMParams) -> CMSketch:
    msgs = np.asarray(batch.messages, dtype=np.int64)
    sk = CMSketch.zeros(p.tau, p.s)
    if len(msgs) == 0:
        return sk
    if msgs.ndim != 2 or msgs.shape[1] != 2:
        raise FormatError(f"expected (row, bucket) pairs, got shape {msgs.shape}")
    rows, buckets = msgs[:, 0], msgs[:, 1]
    if rows.min() < 1 or rows.max() > p.tau or buckets.min() < 1 or buckets.max() > p.s:
        raise FormatError("message outside the sketch")
    sk.add_cells((rows - 1) * p.s + (buckets - 1))
    return sk


def query_cm(sketch: CMSketch, j: int, p: CMParams, family: HashFamily) -> float:
    return float(query_cm_many(sketch, np.array([j]), p, family)[0])


def query_cm_many(sketch: CMSketch, js, p: CMParams, family: HashFamily) -> np.ndarray:
    js = np.asarray(js, dtype=np.int64).reshape(-1)
    if js.size and (js.min() < 1 or js.max() > p.B):
        raise DomainError(f"query outside [1, {p.B}]")
    if js.size == 0:
        return np.zeros(0)
    buckets = family.eval_rows(js) - 1
    vals = sketch.table[np.arange(p.tau)[:, None], buckets].min(axis=0).astype(np.float64)
    if p.one_sided:
        return vals
    return np.maximum(vals - p.gamma * p.n, 0.0)


class CMOracle:
    """Frequency oracle over a Count-Min sketch. A query reads ``tau`` counters."""

    def __init__(self, sketch: CMSketch, p: CMParams, family: HashFamily):
        self.sketch, self.p, self.family = sketch, p, family
        self.B = p.B

    def query(self, j: int) -> float:
        return query_cm(self.sketch, j, self.p, self.family)

    def query_many(self, js) -> np.ndarray:
        return query_cm_many(self.sketch, js, self.p, self.family)


def cm_error_bound(p: CMParams, beta: float) -> float:
    """Bound ``xi * sqrt(gamma n)`` on the max error, with ``xi = sqrt(3 ln(8 B s tau / beta))``."""
    return cm_xi(p, beta) * math.sqrt(p.gamma * p.n)


def cm_xi(p: CMParams, beta: float) -> float:
    return math.sqrt(3 * math.log(8 * p.B * p.s * p.tau / beta))


def noiseless_table(users: Iterable[Iterable[int]], p: CMParams, family: HashFamily) -> np.ndarray:
    """Counter table from payload messages only."""
    sk = CMSketch.zeros(p.tau, p.s)
    cells = [_payload_cells(_check_input(u, p), p, family) for u in users]
    if cells:
        sk.add_cells(np.concatenate(cells))
    return sk.table


def collision_free(users: Iterable[Iterable[int]], p: CMParams, family: HashFamily) -> bool:
    """True when every element of ``[1, B]`` has a row where no other held element shares its bucket.

    Under that condition the noiseless (gamma = 0) sketch answers every point
    query exactly.
    """
    held = np.unique(np.fromiter((x for u in users for x in u), dtype=np.int64))
    ab = family.eval_rows(np.arange(1, p.B + 1)) - 1  # (tau, B)
    is_held = np.zeros(p.B, dtype=np.int64)
    is_held[held - 1] = 1
    clean = np.zeros(p.B, dtype=bool)
    for t in range(p.tau):
        load = np.bincount(ab[t, held - 1], minlength=p.s) if held.size else np.zeros(p.s, np.int64)
        clean |= load[ab[t]] - is_held == 0
    return bool(clean.all())


@dataclass
class CMRun:
    sketch: CMSketch
    user_counts: np.ndarray | None
    messages_analyzed: int
    mode: str
    batch: ShuffledBatch | None = field(default=None, repr=False)


def run_cm(
    users: Dataset | Iterable[Iterable[int]],
    p: CMParams,
    family: HashFamily,
    seed: int,
    *,
    mode: str = "auto",
    materialize: bool = False,
    max_messages: int = 2 * 10**7,
) -> CMRun:
    """Randomize every user, shuffle and build the sketch.

    ``mode="messages"`` runs each user's randomizer.  ``mode="aggregate"``
    builds the payload table and adds one ``Bin(n, gamma)`` draw per cell,
    which is the exact law of the summed blanket of ``n`` users and costs
    ``O(tau s)`` instead of ``O(n gamma tau s)``.  ``auto`` picks messages
    when the expected message count stays under ``max_messages``.
    """
    sets = users.users if isinstance(users, Dataset) else list(users)
    n = len(sets)
    if mode == "auto":
        mode = "messages" if n * p.expected_messages_per_user() <= max_messages else "aggregate"
    if mode == "aggregate":
        if materialize:
            raise ParameterError("aggregate mode has no message batch to materialize")
        sk = CMSketch(noiseless_table(sets, p, family))
        if p.gamma > 0 and n > 0:
            g = RandomStream(seed, 0, Role.AGGREGATE).generator
            sk.table += g.binomial(n, p.gamma, size=(p.tau, p.s))
        return CMRun(sk, None, sk.total(), mode)
    if mode != "messages":
        raise ParameterError(f"unknown mode {mode!r}")
    base = RandomStream(seed)
    counts = np.zeros(n, dtype=np.int64)
    if materialize:
        per_user = [randomize_cm(u, p, family, base.for_user(i)) for i, u in enumerate(sets)]
        counts[:] = [len(m) for m in per_user]
        batch = shuffle(per_user, RandomStream(seed, 0, Role.SHUFFLE), width=2)
        if not np.array_equal(batch.user_counts, counts):
            raise AssertionError("shuffler message count disagrees with randomizers")
        sk = analyze_cm(batch, p)
        return CMRun(sk, counts, len(batch), mode, batch)
    sk = CMSketch.zeros(p.tau, p.s)
    buf: list[np.ndarray] = []
    held = 0
    for i, u in enumerate(sets):
        S = _check_input(u, p)
        cells = np.concatenate([_payload_cells(S, p, family), _blanket_cells(p, base.for_user(i))])
        counts[i] = len(cells)
        buf.append(cells)
        held += len(cells)
        if held >= 1 << 22:
            sk.add_cells(np.concatenate(buf))
            buf, held = [], 0
    if buf:
        sk.add_cells(np.concatenate(buf))
    return CMRun(sk, counts, sk.total(), mode)


def dump_sketch(sketch: CMSketch, p: CMParams, path: str | Path) -> None:
    """Header line ``tau s gamma n`` followed by one line of counters per row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{p.tau} {p.s} {p.gamma!r} {p.n}\n")
        for row in sketch.table:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_sketch(path: str | Path) -> tuple[CMSketch, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty sketch file")
    try:
        tau_s, s_s, g_s, n_s = lines[0].split()
        header = {"tau": int(tau_s), "s": int(s_s), "gamma": float(g_s), "n": int(n_s)}
        rows = [[int(v) for v in line.split()] for line in lines[1:] if line.strip()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(rows) != header["tau"] or any(len(r) != header["s"] for r in rows):
        raise FormatError(f"{path}: table shape does not match header")
    return CMSketch(np.array(rows, dtype=np.int64).reshape(header["tau"], header["s"])), header
