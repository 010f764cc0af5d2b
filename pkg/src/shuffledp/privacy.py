"""Parameter calculators and binomial smoothness tools.

The calculators turn a target ``(eps, delta, beta)`` into concrete protocol
sizes.  The smoothness functions give both the closed-form bound on how far
``Bin(n, gamma)`` moves under small shifts and an exact value computed from
the pmf, so one can be checked against the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special, stats

from .core import OutOfRegimeError, ParameterError


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    beta: float = 0.2

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must be in (0, 1), got {self.delta}")
        if not 0 < self.beta < 1:
            raise ParameterError(f"beta must be in (0, 1), got {self.beta}")


def _ceil(x: float, rel: float = 1e-9) -> int:
    """Ceiling that treats values within rounding noise of an integer as that integer."""
    r = round(x)
    if abs(x - r) <= rel * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


def had_rho(eps: float, delta: float, k: int = 1) -> int:
    """Blanket messages per user for the Hadamard protocol: ceil(36 k^2/eps^2 * ln(e k/(eps delta)))."""
    if not eps > 0 or not delta > 0:
        raise ParameterError(f"eps and delta must be positive, got eps={eps}, delta={delta}")
    if eps > 1 or delta > 1:
        raise ParameterError(f"need eps <= 1 and delta <= 1, got eps={eps}, delta={delta}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    return _ceil(36.0 * k * k / eps**2 * math.log(math.e * k / (eps * delta)))


def had_tau(n: int) -> int:
    """Symbols per Hadamard message, ceil(log2 n) and at least 1."""
    return max(1, (max(int(n), 1) - 1).bit_length())


class CMChoice(NamedTuple):
    tau: int
    s: int
    gamma: float
    clamped: bool
    gamma_n_required: float


def cm_tau(B: int, beta: float) -> int:
    return _ceil(math.log2(2.0 * B / beta))


def cm_params(
    n: int,
    B: int,
    k: int,
    eps: float,
    delta: float,
    beta: float,
    c_util: float = 1.0,
) -> CMChoice:
    """Rows, buckets and Bernoulli rate for the Count-Min protocol.

    ``gamma * n`` must reach ``90 k^2 tau^2 ln(2 tau k / delta) / eps^2`` for
    privacy and ``c_util * ln n`` for utility.  When that asks for more than
    one blanket message per cell, gamma is clamped to 1 and ``clamped`` is set.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if B < 2:
        raise ParameterError(f"B must be >= 2, got {B}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if not eps > 0 or not 0 < delta < 1 or not 0 < beta <= 1:
        raise ParameterError(f"invalid privacy parameters eps={eps}, delta={delta}, beta={beta}")
    tau = cm_tau(B, beta)
    s = 2 * k * n
    priv = 90.0 * k * k * tau * tau * math.log(2.0 * tau * k / delta) / eps**2
    need = max(c_util * math.log(n) if n > 1 else 0.0, priv)
    gamma = need / n
    clamped = gamma > 1.0
    return CMChoice(tau, s, min(1.0, gamma), clamped, need)


@dataclass
class SmoothnessReport:
    epsilon_bound: float
    delta_bound: float
    k: int
    delta_exact: float | None = None


def binomial_smoothness_bound(n: int, gamma: float, alpha: float, k: int) -> SmoothnessReport:
    """Closed-form smoothness guarantee for ``Bin(n, gamma)`` under shifts up to ``k``."""
    if not 0 <= gamma <= 0.5:
        raise ParameterError(f"gamma must be in [0, 1/2], got {gamma}")
    if not 0 <= alpha < 1:
        raise ParameterError(f"alpha must be in [0, 1), got {alpha}")
    if k > alpha * gamma * n / 2:
        raise ParameterError(f"precondition k <= alpha*gamma*n/2 fails: k={k}, bound {alpha * gamma * n / 2}")
    a2gn = alpha * alpha * gamma * n
    return SmoothnessReport(
        epsilon_bound=math.log((1 + alpha) / (1 - alpha)),
        delta_bound=math.exp(-a2gn / 8) + math.exp(-a2gn / (8 + 2 * alpha)),
        k=k,
    )


_RATIO_SLACK = 1e-12


def _log_ratio(y: np.ndarray, shift: np.ndarray, n: int, gamma: float) -> np.ndarray:
    # log pmf(y) - log pmf(y + shift), both inside the support
    lg = special.gammaln
    comb = lg(y + shift + 1) + lg(n - y - shift + 1) - lg(y + 1) - lg(n - y + 1)
    return comb + shift * (math.log1p(-gamma) - math.log(gamma))


def binomial_smoothness_exact(n: int, gamma: float, eps: float, k: int) -> float:
    """Exact worst-shift tail mass of the pmf ratio of ``Bin(n, gamma)``.

    Returns the max over shifts ``k'`` in ``[-k, k] \\ {0}`` of
    ``P[pmf(Y) / pmf(Y + k') >= exp(|k'| eps)]``.  A shift that leaves the
    support makes the ratio infinite and so counts.

    The log ratio is monotone in ``y`` (log-concavity of the binomial), so the
    event is a tail and each shift needs only a binary search plus one
    survival-function call, all in log space.
    """
    if not 0 < gamma < 1:
        raise ParameterError(f"gamma must be in (0, 1), got {gamma}")
    if k < 0:
        raise ParameterError(f"k must be >= 0, got {k}")
    k = int(k)
    if k == 0:
        return 0.0
    if k > n:
        return 1.0  # a shift past the whole support always leaves it
    dist = stats.binom(n, gamma)
    shifts = np.arange(1, k + 1, dtype=np.float64)
    thr = shifts * eps - _RATIO_SLACK

    # positive shifts: ratio increasing in y on [0, n - k']; above that it is infinite
    lo = np.zeros(k)
    hi = n - shifts + 1  # first y where the event certainly holds
    while True:
        active = lo < hi
        if not active.any():
            break
        mid = np.floor((lo + hi) / 2)
        ok = _log_ratio(np.minimum(mid, n - shifts), shifts, n, gamma) >= thr
        ok &= active
        hi = np.where(ok, mid, hi)
        lo = np.where(active & ~ok, mid + 1, lo)
    pos = dist.logsf(hi - 1)

    # negative shifts k' = -m: log pmf(y) - log pmf(y - m) decreasing in y on [m, n]; below m infinite
    lo = shifts - 1  # last y where the event certainly holds
    hi = np.full(k, float(n))
    while True:
        active = lo < hi
        if not active.any():
            break
        mid = np.ceil((lo + hi) / 2)
        y = np.maximum(mid, shifts)
        ok = _log_ratio(y - shifts, shifts, n, gamma) <= -thr
        ok &= active
        lo = np.where(ok, mid, lo)
        hi = np.where(active & ~ok, mid - 1, hi)
    neg = dist.logcdf(lo)

    return float(np.exp(max(pos.max(), neg.max())))


def _binomial_smoothness_bruteforce(n: int, gamma: float, eps: float, k: int) -> float:
    """Enumerate every (y, k') pair. Quadratic; meant as a cross-check for small n."""
    if k == 0:
        return 0.0
    y = np.arange(n + 1)
    logp = stats.binom.logpmf(y, n, gamma)
    best = 0.0
    for kk in range(-k, k + 1):
        if kk == 0:
            continue
        target = y + kk
        inside = (target >= 0) & (target <= n)
        ratio = np.full(n + 1, np.inf)
        ratio[inside] = logp[inside] - logp[target[inside]]
        hit = ratio >= abs(kk) * eps - _RATIO_SLACK
        best = max(best, float(np.exp(logp[hit]).sum()))
    return best


def check_smoothness(n: int, gamma: float, alpha: float, k: int) -> SmoothnessReport:
    """Bound report with ``delta_exact`` filled in at ``eps = epsilon_bound``."""
    rep = binomial_smoothness_bound(n, gamma, alpha, k)
    rep.delta_exact = binomial_smoothness_exact(n, gamma, rep.epsilon_bound, k)
    return rep


class NoiseLevel(NamedTuple):
    eps: float
    delta: float
    k: int


def noise_mechanism_params(sensitivity: int, incrementality: int, eps: float, delta: float) -> NoiseLevel:
    """Smoothness a noise law needs so that adding it to a function is (eps, delta)-DP.

    For a function with l1 sensitivity ``sensitivity`` that changes each
    coordinate by at most ``incrementality``, independent
    ``(eps/sensitivity, delta/sensitivity, incrementality)``-smooth noise per
    coordinate is enough.
    """
    if sensitivity < 1:
        raise ParameterError(f"sensitivity must be >= 1, got {sensitivity}")
    if incrementality < 1:
        raise ParameterError(f"incrementality must be >= 1, got {incrementality}")
    return NoiseLevel(eps / sensitivity, delta / sensitivity, int(incrementality))


def amplification_regime(n: int, delta: float) -> float:
    """Largest local epsilon for which the amplification bound applies."""
    return math.log(n / math.log(1 / delta)) / 2


def amplified_epsilon(eps_local: float, n: int, delta: float, c_amp: float = 1.0) -> float:
    """Shape of the shuffled epsilon for an eps_local-LDP single-message protocol.

    ``c_amp`` stands in for an unspecified absolute constant, so the value is a
    bound shape used to match baselines, not a certified privacy level.
    """
    if eps_local < 0:
        raise ParameterError(f"eps_local must be >= 0, got {eps_local}")
    if not 0 < delta < 1 or n < 1:
        raise ParameterError(f"invalid n={n} or delta={delta}")
    top = amplification_regime(n, delta)
    if eps_local > top + 1e-12:
        raise OutOfRegimeError(f"eps_local={eps_local} exceeds the regime limit {top:.4f}")
    return c_amp * eps_local * math.exp(eps_local) * math.sqrt(math.log(1 / delta) / n)


def local_epsilon_for(target_eps: float, n: int, delta: float, c_amp: float = 1.0, tol: float = 1e-12) -> float:
    """Invert :func:`amplified_epsilon` by bisection.

    Raises :class:`OutOfRegimeError` when no local epsilon inside the regime
    reaches ``target_eps``.
    """
    if not target_eps > 0:
        raise ParameterError(f"target epsilon must be positive, got {target_eps}")
    top = amplification_regime(n, delta)
    if top <= 0:
        raise OutOfRegimeError(f"n={n} too small for amplification at delta={delta}")
    if amplified_epsilon(top, n, delta, c_amp) < target_eps:
        raise OutOfRegimeError(f"target eps {target_eps} not reachable inside the regime (max local eps {top:.4f})")
    lo, hi = 0.0, top
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if amplified_epsilon(mid, n, delta, c_amp) < target_eps:
            lo = mid
        else:
            hi = mid
    return lo
