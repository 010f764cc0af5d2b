"""Shared domain model: datasets, histograms, the shuffler, seeded randomness.

Domain elements are 1-based integers in ``[1, B]`` in every public function.
Bit-level code works with ``value - 1`` internally.

Randomness comes from :class:`RandomStream`, a counter-based Philox stream
keyed by ``(seed, user_id, role)``.  Two streams with the same key produce
the same words; different keys give independent-looking streams.  Private
per-user coins use the ``PAYLOAD`` and ``BLANKET`` roles, public coins (hash
functions) use ``HASH``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np


class ShuffleDPError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ShuffleDPError, ValueError):
    pass


class ParameterError(ShuffleDPError, ValueError):
    pass


class SparsityError(ShuffleDPError, ValueError):
    pass


class QueryError(ShuffleDPError, ValueError):
    pass


class FormatError(ShuffleDPError, ValueError):
    pass


class OutOfRegimeError(ShuffleDPError, ValueError):
    pass


class ConfigError(ShuffleDPError, ValueError):
    pass


class Role(enum.IntEnum):
    PAYLOAD = 0
    BLANKET = 1
    DATA_GEN = 2
    HASH = 3
    SHUFFLE = 4
    AGGREGATE = 5


_USER_BITS = 56


@lru_cache(maxsize=4096)
def _seed_word(seed: int) -> int:
    return int(np.random.SeedSequence(seed & (2**64 - 1)).generate_state(1, np.uint64)[0])


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed of ``seed`` along an integer path."""
    ss = np.random.SeedSequence(seed & (2**64 - 1), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


class RandomStream:
    """Reproducible random stream for one ``(seed, user_id, role)`` triple.

    The underlying bit generator is Philox-4x64 with a 128-bit key built from
    the mixed seed and ``(role, user_id)``, so any user's stream can be
    recreated without replaying the others.
    """

    __slots__ = ("seed", "user_id", "role", "_bitgen", "_gen")

    def __init__(self, seed: int, user_id: int = 0, role: Role = Role.PAYLOAD):
        if not 0 <= user_id < 2**_USER_BITS:
            raise ParameterError(f"user_id {user_id} out of range")
        self.seed = int(seed)
        self.user_id = int(user_id)
        self.role = Role(role)
        self._bitgen: np.random.Philox | None = None
        self._gen: np.random.Generator | None = None

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, user_id={self.user_id}, role={self.role.name})"

    @property
    def key(self) -> np.ndarray:
        return np.array(
            [_seed_word(self.seed), (int(self.role) << _USER_BITS) | self.user_id],
            dtype=np.uint64,
        )

    def for_user(self, user_id: int) -> "RandomStream":
        return RandomStream(self.seed, user_id, self.role)

    def with_role(self, role: Role) -> "RandomStream":
        return RandomStream(self.seed, self.user_id, role)

    @property
    def bitgen(self) -> np.random.Philox:
        if self._bitgen is None:
            self._bitgen = np.random.Philox(key=self.key)
        return self._bitgen

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(self.bitgen)
        return self._gen

    def raw(self, size: int) -> np.ndarray:
        """``size`` raw 64-bit words."""
        return self.bitgen.random_raw(size)

    def bits(self, nbits: int, size: int) -> np.ndarray:
        """``size`` independent uniform integers in ``[0, 2**nbits)``.

        Several values are cut from each 64-bit word, low bits first, which
        keeps bulk symbol generation cheap.
        """
        return _unpack(self.raw(_words_for(nbits, size)), nbits, size)


def _words_for(nbits: int, size: int) -> int:
    if not 1 <= nbits <= 63:
        raise ParameterError(f"nbits must be in [1, 63], got {nbits}")
    return -(-size // (64 // nbits))


def _unpack(words: np.ndarray, nbits: int, size: int) -> np.ndarray:
    from ._kernels import unpack_bits

    return unpack_bits(words, nbits, size)


class _FreshStreams:
    """Words from the start of many streams through one reused bit generator.

    Same output as ``RandomStream(seed, user, role).bits(...)`` on a fresh
    stream, without building a generator object per call.
    """

    def __init__(self, seed: int):
        self._word = _seed_word(seed)
        self._pg = np.random.Philox(0)
        self._zero = np.zeros(4, np.uint64)

    def bits(self, user_id: int, role: Role, nbits: int, size: int) -> np.ndarray:
        if size == 0:
            return np.zeros(0, np.int64)
        self._pg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": self._zero,
                "key": np.array([self._word, (int(role) << _USER_BITS) | user_id], np.uint64),
            },
            "buffer": self._zero,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return _unpack(self._pg.random_raw(_words_for(nbits, size)), nbits, size)


@dataclass(frozen=True)
class Dataset:
    """``n`` users, each holding a set of at most ``k`` elements of ``[1, B]``."""

    users: tuple[frozenset[int], ...]
    B: int
    k: int = 1

    def __post_init__(self):
        if self.B < 1:
            raise DomainError(f"domain size must be >= 1, got {self.B}")
        if self.k < 0:
            raise ParameterError(f"sparsity bound must be >= 0, got {self.k}")
        for i, u in enumerate(self.users):
            if len(u) > self.k:
                raise SparsityError(f"user {i} holds {len(u)} elements, more than k={self.k}")
            for x in u:
                if not 1 <= x <= self.B:
                    raise DomainError(f"user {i} holds {x}, outside [1, {self.B}]")

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], B: int, k: int | None = None) -> "Dataset":
        users = tuple(frozenset(int(x) for x in s) for s in sets)
        if k is None:
            k = max((len(u) for u in users), default=1) or 1
        return cls(users, B, k)

    @classmethod
    def from_elements(cls, elements: Sequence[int] | np.ndarray, B: int) -> "Dataset":
        """One element per user (the ``k = 1`` case)."""
        return cls(tuple(frozenset((int(x),)) for x in elements), B, 1)

    @property
    def n(self) -> int:
        return len(self.users)

    def __len__(self) -> int:
        return len(self.users)

    def elements(self) -> np.ndarray:
        """Flat array of all held elements, user by user in sorted order."""
        return np.fromiter((x for u in self.users for x in sorted(u)), dtype=np.int64)

    def sizes(self) -> np.ndarray:
        return np.fromiter((len(u) for u in self.users), dtype=np.int64, count=self.n)

    def __add__(self, other: "Dataset") -> "Dataset":
        if self.B != other.B:
            raise DomainError("cannot join datasets over different domains")
        return Dataset(self.users + other.users, self.B, max(self.k, other.k))


def exact_histogram(dataset: Dataset) -> np.ndarray:
    """Number of users holding each element, as an int64 vector of length ``B``."""
    elems = dataset.elements()
    if elems.size and (elems.min() < 1 or elems.max() > dataset.B):
        raise DomainError("element outside domain")
    return np.bincount(elems - 1, minlength=dataset.B).astype(np.int64)


def pad_domain(B: int) -> int:
    """Smallest power of two that is at least ``B``."""
    if B < 1:
        raise DomainError(f"domain size must be >= 1, got {B}")
    return 1 << (int(B) - 1).bit_length()


def is_power_of_two(x: int) -> bool:
    return x >= 1 and x & (x - 1) == 0


def log2_exact(x: int) -> int:
    if not is_power_of_two(x):
        raise ParameterError(f"{x} is not a power of two")
    return int(x).bit_length() - 1


@dataclass
class ShuffledBatch:
    """Messages after the shuffler, stored as one row per message.

    ``messages`` has shape ``(m, width)``.  Analyzers only look at the multiset
    of rows, so the order carries no information.  ``user_counts`` records how
    many messages each user emitted; the shuffler fills it in independently of
    the randomizers so message accounting can be cross-checked.
    """

    messages: np.ndarray
    user_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        self.messages = np.asarray(self.messages)
        if self.messages.ndim == 1:
            self.messages = self.messages.reshape(-1, 1)

    def __len__(self) -> int:
        return self.messages.shape[0]

    @property
    def width(self) -> int:
        return self.messages.shape[1]

    def multiset(self) -> dict[tuple[int, ...], int]:
        """Message to multiplicity map."""
        if len(self) == 0:
            return {}
        rows, counts = np.unique(self.messages, axis=0, return_counts=True)
        return {tuple(int(v) for v in r): int(c) for r, c in zip(rows, counts)}

    def concat(self, other: "ShuffledBatch") -> "ShuffledBatch":
        return ShuffledBatch(
            np.concatenate([self.messages, other.messages]),
            np.concatenate([self.user_counts, other.user_counts]),
        )


def shuffle(
    per_user_messages: Sequence[np.ndarray | Sequence],
    rng: RandomStream | None,
    width: int | None = None,
) -> ShuffledBatch:
    """Concatenate every user's messages and apply a uniform random permutation.

    With ``rng=None`` the concatenation order is kept.  That is only useful to
    check that analyzers ignore order.
    """
    arrays = []
    counts = np.zeros(len(per_user_messages), dtype=np.int64)
    for i, msgs in enumerate(per_user_messages):
        a = np.asarray(msgs)
        if a.size == 0:
            continue
        if a.ndim == 1:
            a = a.reshape(-1, 1) if width in (None, 1) else a.reshape(-1, width)
        if width is None:
            width = a.shape[1]
        elif a.shape[1] != width:
            raise FormatError(f"user {i} sent messages of width {a.shape[1]}, expected {width}")
        arrays.append(a)
        counts[i] = a.shape[0]
    if width is None:
        width = 1
    allm = np.concatenate(arrays) if arrays else np.zeros((0, width), dtype=np.int64)
    if rng is not None and len(allm) > 1:
        allm = allm[rng.generator.permutation(len(allm))]
    return ShuffledBatch(allm, counts)


class FrequencyOracle(Protocol):
    """Queryable count estimates over ``[1, B]``."""

    B: int

    def query(self, j: int) -> float: ...

    def query_many(self, js: np.ndarray) -> np.ndarray: ...


class ExactOracle:
    """Noiseless reference oracle answering from the true histogram. Query cost O(1)."""

    def __init__(self, dataset: Dataset):
        self.B = dataset.B
        self._hist = exact_histogram(dataset).astype(np.float64)

    def query(self, j: int) -> float:
        if not 1 <= j <= self.B:
            raise DomainError(f"query {j} outside [1, {self.B}]")
        return float(self._hist[j - 1])

    def query_many(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=np.int64)
        if js.size and (js.min() < 1 or js.max() > self.B):
            raise DomainError("query outside domain")
        return self._hist[js - 1]


class VectorOracle:
    """Oracle over a precomputed estimate vector."""

    def __init__(self, estimates: np.ndarray):
        self.estimates = np.asarray(estimates, dtype=np.float64)
        self.B = len(self.estimates)

    def query(self, j: int) -> float:
        if not 1 <= j <= self.B:
            raise DomainError(f"query {j} outside [1, {self.B}]")
        return float(self.estimates[j - 1])

    def query_many(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=np.int64)
        if js.size and (js.min() < 1 or js.max() > self.B):
            raise DomainError("query outside domain")
        return self.estimates[js - 1]


# file formats

def read_dataset(path: str | Path, B: int, k: int | None = None) -> Dataset:
    """Read a set-valued dataset: one user per line, comma-separated elements."""
    sets = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            sets.append(())
            continue
        try:
            vals = [int(tok) for tok in line.split(",") if tok.strip()]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if len(set(vals)) != len(vals):
            raise FormatError(f"{path}:{lineno}: duplicate element")
        sets.append(vals)
    return Dataset.from_sets(sets, B, k)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = [",".join(str(x) for x in sorted(u)) for u in dataset.users]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_points(path: str | Path, d: int) -> np.ndarray:
    """Read d-dimensional points, d comma-separated coordinates per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            vals = [int(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if len(vals) != d:
            raise FormatError(f"{path}:{lineno}: expected {d} coordinates, got {len(vals)}")
        rows.append(vals)
    return np.array(rows, dtype=np.int64).reshape(-1, d)


def write_points(points: np.ndarray, path: str | Path) -> None:
    lines = [",".join(str(int(v)) for v in row) for row in np.asarray(points)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
