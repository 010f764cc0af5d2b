"""End-to-end acceptance checks at desk scale.

Each test prints one PASS/FAIL line.  Tolerances are pinned as module
constants next to the check that uses them.
"""

import math
import time

import numpy as np
import pytest

from shuffledp.applications import (
    QuantileSpec,
    heavy_hitters,
    m_estimate_quantile_detail,
    quantile_objective,
    quantile_objective_min,
)
from shuffledp.baselines import run_rappor, run_rr
from shuffledp.core import Dataset, RandomStream, derive_seed, exact_histogram, shuffle
from shuffledp.countmin import CMParams, HashFamily, cm_error_bound, collision_free, query_cm_many, run_cm
from shuffledp.hadamard import (
    HadParams,
    analyze_had,
    analyze_had_fast,
    had_error_bound,
    randomize_had,
    run_had,
)
from shuffledp.harness import ExperimentConfig, generate_data, generate_values, run_experiment
from shuffledp.harness.datagen import planted_elements
from shuffledp.privacy import (
    PrivacyParams,
    _binomial_smoothness_bruteforce,
    binomial_smoothness_bound,
    binomial_smoothness_exact,
    had_rho,
)
from shuffledp.rangequery import (
    RangeQuery,
    column_support,
    count_ones,
    exact_range_counts,
    make_range_params,
    range_decomposition,
    range_decomposition_d,
    run_range,
    answer_queries,
)

EPS, DELTA, BETA = 1.0, 1e-6, 0.2
Z_UNBIASED = 4.0  # criterion 2: per-coordinate z limit
TRIALS_BOUND = 50  # criteria 3 and 4
SLACK = 3 * math.sqrt(BETA * (1 - BETA) / TRIALS_BOUND)
MIN_SUCCESS_OF_20 = 18  # criteria 8 and 9


@pytest.fixture
def verdict(capsys):
    def say(num: int, ok: bool, detail: str, elapsed: float):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {num}: {detail} [{elapsed:.1f}s]")
        assert ok, detail

    return say


def test_c01_noiseless_exact(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = []
    for inst in range(50):
        B = int(2 ** rng.integers(1, 11))
        n = int(rng.integers(1, 101))
        x = rng.integers(1, B + 1, n)
        ds = Dataset.from_elements(x, B)
        truth = exact_histogram(ds)
        hp = HadParams.noiseless(n, B)
        if not np.array_equal(run_had(ds, hp, inst).estimates, truth):
            bad.append(("had", inst))
        cp = CMParams(n, B, tau=8, s=2 * n, gamma=0.0)
        draw = 0
        while True:
            fam = HashFamily.from_seed(derive_seed(inst, draw), cp.tau, cp.s)
            if collision_free(ds.users, cp, fam):
                break
            draw += 1
        run = run_cm(ds, cp, fam, inst, mode="messages")
        if not np.array_equal(query_cm_many(run.sketch, np.arange(1, B + 1), cp, fam), truth):
            bad.append(("cm", inst))
    dt = time.perf_counter() - t0
    verdict(1, not bad and dt < 10, f"50 instances, mismatches={bad}, runtime<10s", dt)


def _z_ok(est: np.ndarray, truth: np.ndarray) -> tuple[bool, float]:
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
    dev = np.abs(mean - truth)
    exact = se == 0
    if np.any(exact & (dev > 1e-9)):
        return False, math.inf
    z = np.where(exact, 0.0, dev / np.where(exact, 1, se))
    return bool(z.max() < Z_UNBIASED), float(z.max())


def test_c02_unbiased(verdict):
    t0 = time.perf_counter()
    R, B = 10_000, 8
    x = np.array([1, 1, 1, 2, 3, 5, 5, 8])
    ds = Dataset.from_elements(x, B)
    truth = exact_histogram(ds).astype(float)
    n = len(x)
    hp = HadParams.for_privacy(n, B, 1, EPS, DELTA)
    had = np.array([run_had(ds, hp, s).estimates for s in range(R)])
    cp = CMParams.for_privacy(n, B, 1, EPS, DELTA, BETA)
    cm = np.array([
        query_cm_many(run_cm(ds, cp, HashFamily.from_seed(s, cp.tau, cp.s), s, mode="aggregate").sketch,
                      np.arange(1, B + 1), cp, HashFamily.from_seed(s, cp.tau, cp.s))
        for s in range(R)
    ])
    # n=8 is far below the amplification regime, so the baselines run at a fixed local epsilon
    rr = np.array([run_rr(x, B, EPS, s)[0] for s in range(R)])
    rap = np.array([run_rappor(x, B, EPS, s, mode="aggregate") for s in range(R)])
    res = {name: _z_ok(e, truth) for name, e in (("had", had), ("cm", cm), ("rr", rr), ("rappor", rap))}
    dt = time.perf_counter() - t0
    ok = all(v[0] for v in res.values()) and dt < 60
    detail = ", ".join(f"{k} max|z|={v[1]:.2f}" for k, v in res.items())
    verdict(2, ok, f"{detail} (limit {Z_UNBIASED}), runtime<60s", dt)


def test_c03_hadamard_bound(verdict):
    t0 = time.perf_counter()
    n, B = 2048, 1024
    hp = HadParams.for_privacy(n, B, 1, EPS, DELTA)
    assert hp.rho == had_rho(EPS, DELTA, 1) and hp.tau == 11
    bound = had_error_bound(B, BETA, hp.rho, 1)
    hits = 0
    errs = []
    for t in range(TRIALS_BOUND):
        ds = generate_data("zipf(1.1)", n, B, seed=t)
        est = run_had(ds, hp, derive_seed(7, t)).estimates
        e = float(np.abs(est - exact_histogram(ds)).max())
        errs.append(e)
        hits += e <= bound
    need = 1 - BETA - SLACK
    dt = time.perf_counter() - t0
    verdict(3, hits / TRIALS_BOUND >= need and dt < 300,
            f"{hits}/{TRIALS_BOUND} within {bound:.2f} (need {need:.3f}), median err {np.median(errs):.1f}", dt)


def test_c04_countmin_bound(verdict):
    t0 = time.perf_counter()
    n, B = 2048, 1024
    two = CMParams.for_privacy(n, B, 1, EPS, DELTA, BETA)
    one = CMParams.for_privacy(n, B, 1, EPS, DELTA, BETA, one_sided=True)
    bound = cm_error_bound(two, BETA)
    hits = under = 0
    for t in range(TRIALS_BOUND):
        ds = generate_data("zipf(1.1)", n, B, seed=t)
        truth = exact_histogram(ds)
        fam = HashFamily.from_seed(derive_seed(11, t), two.tau, two.s)
        js = np.arange(1, B + 1)
        est = query_cm_many(run_cm(ds, two, fam, derive_seed(12, t)).sketch, js, two, fam)
        hits += np.abs(est - truth).max() <= bound
        est1 = query_cm_many(run_cm(ds, one, fam, derive_seed(13, t)).sketch, js, one, fam)
        under += int(np.count_nonzero(est1 < truth))
    need = 1 - BETA - SLACK
    dt = time.perf_counter() - t0
    ok = hits / TRIALS_BOUND >= need and under == 0 and dt < 300
    verdict(4, ok, f"{hits}/{TRIALS_BOUND} within {bound:.2f} (need {need:.3f}, gamma={two.gamma:g}), "
            f"one-sided underestimates={under}", dt)


def test_c05_fast_analyzer(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    diffs = 0
    for inst in range(100):
        B = int(2 ** rng.integers(1, 7))
        n = int(rng.integers(1, 65))
        k = int(rng.integers(1, min(B, 4)))
        rho = int(rng.integers(0, 20))
        p = HadParams(n, B, int(rng.integers(1, 9)), rho, k)
        base = RandomStream(inst)
        sets = [rng.choice(B, size=int(rng.integers(0, k + 1)), replace=False) + 1 for _ in range(n)]
        batch = shuffle([randomize_had(s, p, base.for_user(i)) for i, s in enumerate(sets)],
                        RandomStream(inst, 0), width=p.tau)
        if not np.array_equal(analyze_had(batch, p), analyze_had_fast(batch, p)):
            diffs += 1
    verdict(5, diffs == 0, f"100 instances, mismatches={diffs}", time.perf_counter() - t0)


def _explicit_M(B: int) -> np.ndarray:
    L = B.bit_length() - 1
    j = np.arange(1, B + 1)
    t = np.array([(int(v) - 1).bit_length() for v in j])
    s = np.where(j == 1, 1, 2 * (j - 2 ** np.maximum(t - 1, 0)) - 1)
    x = np.arange(1, B + 1)
    width = 2 ** (L - t)
    return ((x[None, :] + width[:, None] - 1) // width[:, None] == s[:, None]).astype(np.int64)


def test_c06_range_algebra(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    fails = []
    for L in range(1, 11):
        B = 1 << L
        M = _explicit_M(B)
        if int(M.sum(axis=0).max()) != 1 + L:
            fails.append(("sensitivity", B))
        if any(len(column_support(x, B)) != M[:, x - 1].sum() for x in (1, B // 2 + 1, B)):
            fails.append(("support", B))
        for _ in range(200):
            z = rng.integers(-1000, 1001, B)
            j, jp = sorted(int(v) for v in rng.integers(1, B + 1, 2))
            dec = range_decomposition(j, jp, B)
            if dec.dot(M @ z) != z[j - 1 : jp].sum():
                fails.append(("sum", B, j, jp))
            if len(dec) > count_ones(j - 1) + count_ones(jp):
                fails.append(("size", B, j, jp))
    pts = rng.integers(1, 9, size=(200, 2))
    rp = make_range_params(len(pts), 8, 2, fo="exact")
    oracle = run_range(pts, rp, 0).oracle
    boxes = [RangeQuery((a, c), (b, d)) for a in range(1, 9) for b in range(a, 9) for c in range(1, 9) for d in range(c, 9)]
    brute = np.array([np.count_nonzero((pts[:, 0] >= q.lo[0]) & (pts[:, 0] <= q.hi[0]) &
                                       (pts[:, 1] >= q.lo[1]) & (pts[:, 1] <= q.hi[1])) for q in boxes])
    if not np.array_equal(answer_queries(oracle, boxes, rp), brute):
        fails.append(("d2", 8))
    if not np.array_equal(exact_range_counts(pts, boxes, 2), brute):
        fails.append(("d2-exact", 8))
    if max(len(range_decomposition_d(q, 8, 2)) for q in boxes) > (2 * 3) ** 2:
        fails.append(("d2-size", 8))
    dt = time.perf_counter() - t0
    verdict(6, not fails and dt < 30, f"B=2..1024 x 200 triples and {len(boxes)} boxes, failures={fails[:5]}", dt)


def test_c07_binomial_smoothness(verdict):
    t0 = time.perf_counter()
    fails = []
    cells = 0
    for n in (2000, 5000, 10_000, 50_000, 100_000):
        for gamma in (0.01, 0.05, 0.1, 0.25, 0.5):
            for alpha in (0.1, 0.3, 0.6):
                k = int(alpha * gamma * n / 2)
                if k < 1:
                    continue
                rep = binomial_smoothness_bound(n, gamma, alpha, k)
                exact = binomial_smoothness_exact(n, gamma, rep.epsilon_bound, k)
                if n == 2000 and k <= 50:
                    ref = _binomial_smoothness_bruteforce(n, gamma, rep.epsilon_bound, k)
                    if not math.isclose(exact, ref, rel_tol=1e-9, abs_tol=1e-300):
                        fails.append(("oracle", n, gamma, alpha))
                if exact > rep.delta_bound:
                    fails.append((n, gamma, alpha, exact, rep.delta_bound))
                cells += 1
    dt = time.perf_counter() - t0
    verdict(7, not fails and cells == 75 and dt < 30, f"{cells} grid cells, violations={fails[:3]}", dt)


def test_c08_heavy_hitters(verdict):
    t0 = time.perf_counter()
    n, B, threshold = 10_000, 1 << 16, 1920.0
    src = "planted(5,1950)"
    priv_ok = 0
    exp_ok = True
    for t in range(20):
        ds = generate_data(src, n, B, seed=t)
        planted = set(planted_elements(src, n, B, seed=t).tolist())
        assert np.all(exact_histogram(ds)[np.array(sorted(planted)) - 1] >= threshold)
        res = heavy_hitters(ds, threshold, PrivacyParams(EPS, DELTA, BETA), seed=derive_seed(21, t), strict=True)
        priv_ok += planted <= {j for j, _ in res.items}
        exp_ok &= res.nodes_expanded <= 2 * res.levels * 4 * n / threshold
    dt = time.perf_counter() - t0
    verdict(8, priv_ok >= MIN_SUCCESS_OF_20 and exp_ok,
            f"all 5 recovered in {priv_ok}/20 trials (need {MIN_SUCCESS_OF_20}), expansions within limit={exp_ok}", dt)


def test_c09_quantile(verdict):
    t0 = time.perf_counter()
    priv = PrivacyParams(EPS, DELTA, BETA)
    noiseless_bad = 0
    for t in range(10):
        vals = generate_values("zipf(1.3)" if t % 2 else "uniform", 500, 500, seed=t)
        for kq in ((1, 2), (1, 4), (3, 4)):
            p = kq[0] / kq[1]
            r = m_estimate_quantile_detail(QuantileSpec(kq[0], kq[1], tuple(vals)), priv, t, noiseless=True)
            ends = np.arange(0, r.B + 1) / r.B
            best = min(quantile_objective_min(vals, p), float(quantile_objective(vals, ends, p).min()))
            if float(quantile_objective(vals, r.value, p)[0]) > best + len(vals) / r.B:
                noiseless_bad += 1
    n = 10_000
    wins = 0
    for t in range(20):
        vals = generate_values("uniform", n, n, seed=100 + t)
        r = m_estimate_quantile_detail(QuantileSpec.median(vals), priv, derive_seed(31, t))
        rp = make_range_params(n, n, 1, EPS, DELTA, BETA, fo="cm")
        bound = cm_error_bound(rp.fo_params, BETA) * math.ceil(math.log2(n))
        gap = float(quantile_objective(vals, r.value)[0]) - quantile_objective_min(vals)
        wins += gap <= bound
    dt = time.perf_counter() - t0
    verdict(9, noiseless_bad == 0 and wins >= MIN_SUCCESS_OF_20,
            f"noiseless violations={noiseless_bad}/30, private within bound {wins}/20 (need {MIN_SUCCESS_OF_20})", dt)


@pytest.mark.slow
def test_c10_separation(verdict):
    t0 = time.perf_counter()
    n, B = 100_000, 1 << 16
    med = {}
    for proto in ("had", "cm", "rr", "rappor"):
        rep = run_experiment(ExperimentConfig(proto, n, B, eps=EPS, delta=DELTA, beta=BETA, trials=20, seed=41))
        med[proto] = rep.error_metrics["median_max_error"]
    ok = max(med["had"], med["cm"]) < min(med["rr"], med["rappor"])
    dt = time.perf_counter() - t0
    verdict(10, ok, "median max error " + ", ".join(f"{k}={v:.1f}" for k, v in med.items()), dt)
