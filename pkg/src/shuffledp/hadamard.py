"""Private-coin frequency estimation with Hadamard response.

Each user sends ``k + rho`` messages.  A message is a tuple of ``tau`` symbols
from ``[1, 2B]``.  For each held element ``j`` (padded with the dummy elements
``B+1, B+2, ...`` up to ``k``) the user sends one tuple drawn uniformly from
the codeword ``H_j = {a : parity(j & (a-1)) = 0}``.  The other ``rho`` tuples
are uniform over ``[1, 2B]`` and serve as blanket noise.

The analyzer counts, for every ``j``, the tuples that lie entirely inside
``H_j`` and removes the expected contribution of the rest.  A tuple outside
its own codeword lands inside a fixed other one with probability ``2**-tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels
from .core import (
    Dataset,
    DomainError,
    FormatError,
    ParameterError,
    RandomStream,
    Role,
    ShuffledBatch,
    SparsityError,
    _FreshStreams,
    is_power_of_two,
    shuffle,
)
from .privacy import had_rho, had_tau


@dataclass(frozen=True)
class HadParams:
    n: int
    B: int
    tau: int
    rho: int
    k: int = 1
    debias: bool = True

    def __post_init__(self):
        if not is_power_of_two(self.B) or self.B < 2:
            raise ParameterError(f"B must be a power of two >= 2, got {self.B}")
        if not 1 <= self.k < self.B:
            raise ParameterError(f"need 1 <= k < B, got k={self.k}, B={self.B}")
        if self.tau < 1:
            raise ParameterError(f"tau must be >= 1 (de-biasing divides by 1 - 2^-tau), got {self.tau}")
        if self.rho < 0 or self.n < 0:
            raise ParameterError(f"rho and n must be >= 0, got rho={self.rho}, n={self.n}")

    @classmethod
    def for_privacy(cls, n: int, B: int, k: int, eps: float, delta: float, tau: int | None = None) -> "HadParams":
        return cls(n=n, B=B, tau=had_tau(n) if tau is None else tau, rho=had_rho(eps, delta, k), k=k)

    @classmethod
    def noiseless(cls, n: int, B: int, k: int = 1, tau: int | None = None) -> "HadParams":
        """No blanket and no de-biasing; exact on collision-free instances."""
        L = symbol_bits(B)
        return cls(n=n, B=B, tau=tau if tau is not None else L + 24, rho=0, k=k, debias=False)

    @property
    def symbol_bits(self) -> int:
        return symbol_bits(self.B)

    @property
    def messages_per_user(self) -> int:
        return self.k + self.rho

    @property
    def message_bits(self) -> int:
        return self.tau * self.symbol_bits

    @property
    def bits_per_user(self) -> int:
        return self.messages_per_user * self.message_bits


def symbol_bits(B: int) -> int:
    """Bits per symbol, ceil(log2 2B)."""
    return (2 * B - 1).bit_length()


def had_member(j: int, a: int, B: int) -> bool:
    """Whether symbol ``a`` lies in codeword ``j`` of the ``2B x 2B`` Hadamard matrix."""
    if not is_power_of_two(B):
        raise ParameterError(f"B must be a power of two, got {B}")
    if not 1 <= j < 2 * B:
        raise DomainError(f"codeword index must be in [1, {2 * B - 1}], got {j}")
    if not 1 <= a <= 2 * B:
        raise DomainError(f"symbol must be in [1, {2 * B}], got {a}")
    return (j & (a - 1)).bit_count() % 2 == 0


def codeword(j: int, B: int) -> np.ndarray:
    a = np.arange(1, 2 * B + 1, dtype=np.int64)
    had_member(j, 1, B)  # validates j
    return a[(np.bitwise_count(j & (a - 1)) & 1) == 0]


def _augment(elements: Iterable[int], p: HadParams) -> np.ndarray:
    S = sorted(int(x) for x in elements)
    if len(S) > p.k:
        raise SparsityError(f"input has {len(S)} elements, more than k={p.k}")
    for x in S:
        if not 1 <= x <= p.B:
            raise DomainError(f"element {x} outside [1, {p.B}]")
    S.extend(range(p.B + 1, p.B + 1 + p.k - len(S)))
    return np.array(S, dtype=np.int64)


def _fold_payload(pay: np.ndarray, js: np.ndarray) -> np.ndarray:
    # an odd-parity draw r is moved onto the codeword by flipping the lowest set bit of j;
    # every codeword member then has exactly two preimages, so the result stays uniform
    col = js[:, None]
    pay ^= (np.bitwise_count(pay & col) & 1) * (col & -col)
    return pay


def randomize_had(elements: Iterable[int], p: HadParams, rng: RandomStream) -> np.ndarray:
    """Messages of one user as an int64 array of shape ``(k + rho, tau)``.

    Payload symbols come from the ``PAYLOAD`` stream and blanket symbols from
    the ``BLANKET`` stream of ``rng``'s seed and user.
    """
    js = _augment(elements, p)
    L = p.symbol_bits
    pay = rng.with_role(Role.PAYLOAD).bits(L, p.k * p.tau).reshape(p.k, p.tau)
    blank = rng.with_role(Role.BLANKET).bits(L, p.rho * p.tau).reshape(p.rho, p.tau)
    return np.concatenate([_fold_payload(pay, js), blank]) + 1


def _randomize_bulk(elements: Iterable[int], p: HadParams, fresh: _FreshStreams, user_id: int) -> np.ndarray:
    # identical output to randomize_had(elements, p, RandomStream(seed, user_id))
    js = _augment(elements, p)
    L = p.symbol_bits
    pay = fresh.bits(user_id, Role.PAYLOAD, L, p.k * p.tau).reshape(p.k, p.tau)
    blank = fresh.bits(user_id, Role.BLANKET, L, p.rho * p.tau).reshape(p.rho, p.tau)
    return np.concatenate([_fold_payload(pay, js), blank]) + 1


def _check_symbols(msgs: np.ndarray, p: HadParams) -> np.ndarray:
    msgs = np.asarray(msgs, dtype=np.int64)
    if msgs.ndim != 2 or (msgs.size and msgs.shape[1] != p.tau):
        raise FormatError(f"expected messages of {p.tau} symbols, got shape {msgs.shape}")
    if msgs.size and (msgs.min() < 1 or msgs.max() > 2 * p.B):
        raise FormatError(f"symbol outside [1, {2 * p.B}]")
    return msgs


def debias_had(raw: np.ndarray, p: HadParams) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if not p.debias:
        return raw.copy()
    q = math.ldexp(1.0, -p.tau)
    return (raw - (p.rho + p.k) * p.n * q) / (1.0 - q)


def raw_counts_scan(msgs: np.ndarray, js: np.ndarray) -> np.ndarray:
    """Count, for each codeword in ``js``, the messages fully inside it. O(m tau |js|)."""
    sym0 = np.asarray(msgs, dtype=np.int64) - 1
    out = np.zeros(len(js), dtype=np.int64)
    for i, j in enumerate(np.asarray(js, dtype=np.int64)):
        if sym0.size:
            out[i] = int(np.count_nonzero(~(np.bitwise_count(sym0 & j) & 1).any(axis=1)))
    return out


def analyze_had(batch: ShuffledBatch, p: HadParams) -> np.ndarray:
    """De-biased count estimates for ``[1, B]`` by direct membership scan."""
    msgs = _check_symbols(batch.messages, p)
    raw = raw_counts_scan(msgs, np.arange(1, p.B + 1))
    return debias_had(raw, p)


def raw_counts_fast(msgs: np.ndarray, B: int, out: np.ndarray | None = None) -> np.ndarray:
    """Per-codeword counts through F2 kernel enumeration, one solve per message."""
    if out is None:
        out = np.zeros(B, dtype=np.int64)
    sym0 = np.ascontiguousarray(np.asarray(msgs, dtype=np.int64) - 1)
    if sym0.size:
        _kernels.kernel_counts(sym0, B, out)
    return out


def analyze_had_fast(batch: ShuffledBatch, p: HadParams) -> np.ndarray:
    """Same output as :func:`analyze_had`, in time linear in the number of codewords hit."""
    msgs = _check_symbols(batch.messages, p)
    return debias_had(raw_counts_fast(msgs, p.B), p)


class HadOracle:
    """Frequency oracle that keeps the raw tuples and scans them per query.

    A query costs O(m tau) for m stored messages.
    """

    def __init__(self, batch: ShuffledBatch, p: HadParams):
        self.p = p
        self.B = p.B
        self._msgs = _check_symbols(batch.messages, p)

    def query(self, j: int) -> float:
        return float(self.query_many(np.array([j]))[0])

    def query_many(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=np.int64).reshape(-1)
        if js.size and (js.min() < 1 or js.max() > self.B):
            raise DomainError(f"query outside [1, {self.B}]")
        return debias_had(raw_counts_scan(self._msgs, js), self.p)


def build_oracle_had(batch: ShuffledBatch, p: HadParams) -> HadOracle:
    return HadOracle(batch, p)


def had_error_bound(B: int, beta: float, rho: int, k: int) -> float:
    """High-probability bound on the max absolute error over all ``B`` estimates."""
    lg = math.log(2 * B / beta)
    return math.sqrt(3 * lg * max(3 * lg, rho + k))


@dataclass
class HadRun:
    estimates: np.ndarray
    raw: np.ndarray
    user_counts: np.ndarray
    messages_analyzed: int
    batch: ShuffledBatch | None = field(default=None, repr=False)


def run_had(
    users: Dataset | Iterable[Iterable[int]],
    p: HadParams,
    seed: int,
    *,
    materialize: bool = False,
    chunk_messages: int = 1 << 22,
) -> HadRun:
    """Randomize every user, shuffle and analyze.

    By default messages are fed to the analyzer in chunks as they are
    produced and never held all at once; the analyzer is order-free, so this
    matches analyzing a shuffled batch.  ``materialize=True`` builds and
    shuffles the full batch instead.
    """
    base = RandomStream(seed)
    sets = users.users if isinstance(users, Dataset) else list(users)
    counts = np.zeros(len(sets), dtype=np.int64)
    if materialize:
        per_user = []
        for i, s in enumerate(sets):
            per_user.append(randomize_had(s, p, base.for_user(i)))
            counts[i] = len(per_user[-1])
        batch = shuffle(per_user, RandomStream(seed, 0, Role.SHUFFLE), width=p.tau)
        if not np.array_equal(batch.user_counts, counts):
            raise AssertionError("shuffler message count disagrees with randomizers")
        raw = raw_counts_fast(batch.messages, p.B)
        return HadRun(debias_had(raw, p), raw, counts, len(batch), batch)
    fresh = _FreshStreams(seed)
    raw = np.zeros(p.B, dtype=np.int64)
    seen = 0
    buf: list[np.ndarray] = []
    held = 0
    for i, s in enumerate(sets):
        msgs = _randomize_bulk(s, p, fresh, i)
        counts[i] = len(msgs)
        buf.append(msgs)
        held += len(msgs)
        if held >= chunk_messages:
            seen += _kernels.kernel_counts(np.concatenate(buf) - 1, p.B, raw)
            buf, held = [], 0
    if buf:
        seen += _kernels.kernel_counts(np.concatenate(buf) - 1, p.B, raw)
    return HadRun(debias_had(raw, p), raw, counts, int(seen))


def encode_message(symbols, B: int) -> bytes:
    """Pack ``a - 1`` of each symbol into ``ceil(log2 2B)`` bits, little-endian."""
    L = symbol_bits(B)
    acc = 0
    for g, a in enumerate(symbols):
        a = int(a)
        if not 1 <= a <= 2 * B:
            raise FormatError(f"symbol {a} outside [1, {2 * B}]")
        acc |= (a - 1) << (g * L)
    return acc.to_bytes(-(-len(symbols) * L // 8), "little")


def decode_message(data: bytes, B: int, tau: int) -> np.ndarray:
    L = symbol_bits(B)
    if len(data) != -(-tau * L // 8):
        raise FormatError(f"expected {-(-tau * L // 8)} bytes, got {len(data)}")
    acc = int.from_bytes(data, "little")
    if acc >> (tau * L):
        raise FormatError("padding bits are not zero")
    mask = (1 << L) - 1
    return np.array([((acc >> (g * L)) & mask) + 1 for g in range(tau)], dtype=np.int64)


def dump_messages(msgs: np.ndarray, B: int, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(msgs):
            fh.write(encode_message(row, B).hex() + "\n")


def load_messages(path, B: int, tau: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(decode_message(bytes.fromhex(line), B, tau))
    return np.array(rows, dtype=np.int64).reshape(-1, tau)
