"""Single-message baselines: B-ary randomized response and B-RAPPOR.

Both are local randomizers with one message per user.  Their local epsilon is
usually picked so that the shuffled epsilon from
:func:`shuffledp.privacy.amplified_epsilon` hits a target, see
:func:`shuffledp.privacy.local_epsilon_for`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, FormatError, ParameterError, RandomStream, Role, shuffle

RAPPOR_MAX_B = 1 << 20


@dataclass(frozen=True)
class LocalEps:
    eps_local: float

    def __post_init__(self):
        if not self.eps_local > 0:
            raise ParameterError(f"local epsilon must be positive, got {self.eps_local}")


def _eps(e) -> float:
    return e.eps_local if isinstance(e, LocalEps) else float(e)


def rr_keep_probability(B: int, eps_local: float) -> float:
    # e^eps / (e^eps + B - 1), written to stay finite for large eps
    return 1.0 / (1.0 + (B - 1) * math.exp(-eps_local))


def randomize_rr(x: int, B: int, eps_local, rng: RandomStream) -> int:
    """Keep ``x`` with probability ``e^eps / (e^eps + B - 1)``, else report a uniform other element."""
    if not 1 <= x <= B:
        raise DomainError(f"element {x} outside [1, {B}]")
    g = rng.with_role(Role.PAYLOAD).generator
    if B == 1 or g.random() < rr_keep_probability(B, _eps(eps_local)):
        return int(x)
    u = int(g.integers(1, B))  # uniform over [1, B-1], then skip x
    return u + 1 if u >= x else u


def analyze_rr(reports, B: int, eps_local, n: int | None = None) -> np.ndarray:
    """Unbiased counts from randomized-response reports."""
    e = _eps(eps_local)
    if e == 0:
        raise ParameterError("local epsilon 0 makes the reports independent of the data")
    z = np.asarray(getattr(reports, "messages", reports), dtype=np.int64).reshape(-1)
    if z.size and (z.min() < 1 or z.max() > B):
        raise FormatError(f"report outside [1, {B}]")
    n = len(z) if n is None else n
    c = np.bincount(z - 1, minlength=B).astype(np.float64)
    # (c - n/(e^eps + B - 1)) * (e^eps + B - 1)/(e^eps - 1), divided through by e^eps
    w = math.exp(-e)
    return (c * (1 + (B - 1) * w) - n * w) / (1 - w)


def rappor_flip_probability(eps_local: float) -> float:
    return 1.0 / (1.0 + math.exp(eps_local / 2))


def randomize_rappor(x: int, B: int, eps_local, rng: RandomStream) -> np.ndarray:
    """One-hot encoding of ``x`` with each bit flipped independently w.p. ``1/(1 + e^(eps/2))``."""
    if not 1 <= x <= B:
        raise DomainError(f"element {x} outside [1, {B}]")
    if B > RAPPOR_MAX_B:
        raise ParameterError(f"RAPPOR reports are B bits long; refusing B={B} > {RAPPOR_MAX_B}")
    q = rappor_flip_probability(_eps(eps_local))
    flips = rng.with_role(Role.PAYLOAD).generator.random(B) < q
    bits = flips.astype(np.uint8)
    bits[x - 1] ^= 1
    return bits


def analyze_rappor(reports, B: int, eps_local, n: int | None = None) -> np.ndarray:
    """Unbiased counts from RAPPOR bit vectors (rows of ``reports``)."""
    e = _eps(eps_local)
    if e == 0:
        raise ParameterError("local epsilon 0 makes the reports independent of the data")
    z = np.asarray(getattr(reports, "messages", reports))
    if z.size and (z.ndim != 2 or z.shape[1] != B):
        raise FormatError(f"expected bit vectors of length {B}")
    n = len(z) if n is None else n
    col = z.sum(axis=0, dtype=np.int64) if z.size else np.zeros(B, np.int64)
    return rappor_from_column_sums(col, n, e)


def rappor_from_column_sums(col: np.ndarray, n: int, eps_local: float) -> np.ndarray:
    h = math.exp(-eps_local / 2)
    q = h / (1 + h)
    return (np.asarray(col, dtype=np.float64) - n * q) * (1 + h) / (1 - h)


def run_rr(elements, B: int, eps_local, seed: int, *, materialize: bool = False):
    """Reports of all users (shuffled when ``materialize``) and the estimate."""
    base = RandomStream(seed)
    reps = np.array([randomize_rr(int(x), B, eps_local, base.for_user(i)) for i, x in enumerate(elements)], dtype=np.int64)
    if materialize:
        batch = shuffle([[r] for r in reps], RandomStream(seed, 0, Role.SHUFFLE), width=1)
        return analyze_rr(batch, B, eps_local), batch
    return analyze_rr(reps, B, eps_local), None


def simulate_rappor_column_sums(hist: np.ndarray, eps_local: float, rng: RandomStream) -> np.ndarray:
    """Column sums of all RAPPOR reports drawn directly.

    A coordinate held by ``c`` of ``n`` users sums ``c`` bits that stay one
    with probability ``1 - q`` and ``n - c`` bits that flip on with
    probability ``q``; coordinates are independent.  This is the exact law of
    the sums the analyzer uses, at ``O(B)`` cost instead of ``O(nB)``.
    """
    q = rappor_flip_probability(eps_local)
    hist = np.asarray(hist, dtype=np.int64)
    n = int(hist.sum())
    g = rng.generator
    return g.binomial(hist, 1 - q) + g.binomial(n - hist, q)


def run_rappor(elements, B: int, eps_local, seed: int, *, mode: str = "auto", max_bits: int = 1 << 26):
    """Estimate from per-user RAPPOR reports, or from directly drawn column sums.

    ``auto`` runs the per-user randomizers while ``n * B`` stays below
    ``max_bits`` and otherwise draws the column sums.
    """
    if B > RAPPOR_MAX_B:
        raise ParameterError(f"RAPPOR reports are B bits long; refusing B={B} > {RAPPOR_MAX_B}")
    elements = np.asarray(elements, dtype=np.int64)
    n = len(elements)
    e = _eps(eps_local)
    if mode == "auto":
        mode = "messages" if n * B <= max_bits else "aggregate"
    if mode == "aggregate":
        hist = np.bincount(elements - 1, minlength=B)
        col = simulate_rappor_column_sums(hist, e, RandomStream(seed, 0, Role.AGGREGATE))
        return rappor_from_column_sums(col, n, e)
    if mode != "messages":
        raise ParameterError(f"unknown mode {mode!r}")
    base = RandomStream(seed)
    col = np.zeros(B, dtype=np.int64)
    for i, x in enumerate(elements):
        col += randomize_rappor(int(x), B, e, base.for_user(i))
    return rappor_from_column_sums(col, n, e)
