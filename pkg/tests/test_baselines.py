import math

import numpy as np
import pytest

from shuffledp.baselines import (
    LocalEps,
    analyze_rappor,
    analyze_rr,
    randomize_rappor,
    randomize_rr,
    rappor_flip_probability,
    rr_keep_probability,
    run_rappor,
    run_rr,
    simulate_rappor_column_sums,
)
from shuffledp.core import DomainError, FormatError, ParameterError, RandomStream
from shuffledp.privacy import OutOfRegimeError, amplified_epsilon, local_epsilon_for


def _keep_rate(B, eps, reps=20000, x=1):
    base = RandomStream(11)
    return np.mean([randomize_rr(x, B, eps, base.for_user(i)) == x for i in range(reps)])


def test_rr_keep_three_quarters():
    assert rr_keep_probability(2, math.log(3)) == pytest.approx(0.75)
    p = _keep_rate(2, math.log(3))
    assert abs(p - 0.75) < 4 * math.sqrt(0.75 * 0.25 / 20000)


def test_rr_large_eps_always_keeps():
    base = RandomStream(0)
    assert all(randomize_rr(3, 10, 50.0, base.for_user(i)) == 3 for i in range(2000))
    assert rr_keep_probability(10, 1e4) == 1.0


def test_rr_small_eps_near_uniform():
    B, reps = 4, 40000
    base = RandomStream(5)
    r = np.array([randomize_rr(2, B, 1e-9, base.for_user(i)) for i in range(reps)])
    freq = np.bincount(r - 1, minlength=B) / reps
    assert np.all(np.abs(freq - 1 / B) < 4 * math.sqrt(0.25 * 0.75 / reps))


def test_rr_other_branch_uniform_and_in_domain():
    B, reps = 5, 20000
    base = RandomStream(2)
    r = np.array([randomize_rr(3, B, 0.5, base.for_user(i)) for i in range(reps)])
    assert r.min() >= 1 and r.max() <= B
    others = np.bincount(r[r != 3] - 1, minlength=B)
    others = np.delete(others, 2)
    m = others.sum() / 4
    assert np.all(np.abs(others - m) < 4 * math.sqrt(m))


def test_rr_domain_and_format_errors():
    with pytest.raises(DomainError):
        randomize_rr(0, 4, 1.0, RandomStream(0))
    with pytest.raises(FormatError):
        analyze_rr([5], 4, 1.0)
    with pytest.raises(ParameterError):
        analyze_rr([1], 4, 0.0)
    with pytest.raises(ParameterError):
        LocalEps(0.0)


def test_rr_zero_users():
    assert np.all(analyze_rr([], 6, 1.0) == 0)


def test_rr_unbiased():
    # mean over independent runs, z-test per coordinate
    B, eps, R = 8, 1.0, 600
    x = np.array([1] * 40 + [2] * 30 + [5] * 30)
    truth = np.bincount(x - 1, minlength=B)
    est = np.array([run_rr(x, B, eps, s)[0] for s in range(R)])
    z = (est.mean(axis=0) - truth) / (est.std(axis=0, ddof=1) / math.sqrt(R))
    assert np.all(np.abs(z) < 4.5)


def test_rr_materialized_matches():
    x = np.array([1, 2, 3, 3, 4])
    a, _ = run_rr(x, 4, 1.0, 3)
    b, batch = run_rr(x, 4, 1.0, 3, materialize=True)
    assert np.allclose(a, b)
    assert batch.messages.shape[0] == 5


def test_rappor_flip_rate():
    eps, B, reps = 2.0, 16, 2000
    q = rappor_flip_probability(eps)
    assert q == pytest.approx(1 / (1 + math.e))
    base = RandomStream(1)
    bits = np.array([randomize_rappor(4, B, eps, base.for_user(i)) for i in range(reps)])
    off = np.delete(bits, 3, axis=1)
    assert abs(off.mean() - q) < 4 * math.sqrt(q * (1 - q) / off.size)
    assert abs(bits[:, 3].mean() - (1 - q)) < 4 * math.sqrt(q * (1 - q) / reps)


def test_rappor_errors():
    with pytest.raises(DomainError):
        randomize_rappor(9, 8, 1.0, RandomStream(0))
    with pytest.raises(FormatError):
        analyze_rappor(np.zeros((3, 5)), 8, 1.0)
    with pytest.raises(ParameterError):
        analyze_rappor(np.zeros((3, 8)), 8, 0)
    with pytest.raises(ParameterError):
        run_rappor([1], 1 << 21, 1.0, 0)


def test_rappor_unbiased_both_modes():
    B, eps, R = 8, 1.0, 600
    x = np.array([1] * 40 + [2] * 30 + [5] * 30)
    truth = np.bincount(x - 1, minlength=B)
    for mode in ("messages", "aggregate"):
        est = np.array([run_rappor(x, B, eps, s, mode=mode) for s in range(R)])
        z = (est.mean(axis=0) - truth) / (est.std(axis=0, ddof=1) / math.sqrt(R))
        assert np.all(np.abs(z) < 4.5), mode


def test_rappor_modes_same_variance():
    B, eps, R = 4, 1.5, 800
    x = np.array([1] * 10 + [3] * 20)
    va = np.array([run_rappor(x, B, eps, s, mode="messages") for s in range(R)]).var(axis=0)
    vb = np.array([run_rappor(x, B, eps, s, mode="aggregate") for s in range(R)]).var(axis=0)
    assert np.all(np.abs(va / vb - 1) < 0.3)


def test_rappor_analyzer_on_reports():
    x = [1, 2, 2]
    base = RandomStream(0)
    rep = np.array([randomize_rappor(v, 4, 40.0, base.for_user(i)) for i, v in enumerate(x)])
    assert np.allclose(analyze_rappor(rep, 4, 40.0), [1, 2, 0, 0], atol=1e-6)


def test_column_sum_simulator_range():
    hist = np.array([5, 0, 3])
    col = simulate_rappor_column_sums(hist, 1.0, RandomStream(0))
    assert np.all((col >= 0) & (col <= 8))


def test_local_epsilon_inverts_amplification():
    n, delta = 100000, 1e-6
    e = local_epsilon_for(1.0, n, delta)
    assert amplified_epsilon(e, n, delta) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(OutOfRegimeError):
        local_epsilon_for(1.0, 100, delta)
