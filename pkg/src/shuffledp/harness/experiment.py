"""Repeated trials of one protocol against exact answers."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import applications as apps
from ..baselines import run_rappor, run_rr
from ..core import ConfigError, Dataset, ShuffleDPError, derive_seed, exact_histogram, pad_domain
from ..countmin import CMParams, HashFamily, cm_error_bound, collision_free, dump_sketch, query_cm_many, run_cm
from ..hadamard import HadParams, dump_messages, had_error_bound, run_had
from ..privacy import PrivacyParams, local_epsilon_for
from ..rangequery import (
    RangeQuery,
    answer_queries,
    exact_range_counts,
    make_range_params,
    range_error_bound,
    read_queries,
    run_range,
    support_sets,
    write_answers_csv,
)
from .datagen import generate_data, generate_points, generate_values

PROTOCOLS = ("had", "cm", "rr", "rappor", "range", "hh", "quantile", "sq")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    n: int
    B: int
    d: int = 1
    k: int = 1
    eps: float = 1.0
    delta: float = 1e-6
    beta: float = 0.2
    seed: int = 0
    public_seed: int = 0
    data: str = "uniform"
    trials: int = 20
    one_sided: bool = False
    noiseless: bool = False
    strict_paper: bool = False
    fo: str = "cm"
    cm_mode: str = "auto"
    threshold: float | None = None
    quantile_k: int = 1
    quantile_q: int = 2
    queries: str | None = None
    num_queries: int = 100
    tolerance: float = 0.1
    c_amp: float = 1.0
    dump_messages: str | None = None
    per_query: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if self.n < 1 or self.B < 1 or self.d < 1 or self.k < 1:
            raise ConfigError(f"n, B, d, k must be positive (n={self.n}, B={self.B}, d={self.d}, k={self.k})")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.eps, self.delta, self.beta)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    public_seed: int
    max_error: float
    mean_error: float
    messages_per_user: float
    bits_per_user: float
    messages_total: int
    error_bound: float | None
    within_bound: bool | None
    wall_time_s: float
    extra: dict = field(default_factory=dict)


TRIAL_COLUMNS = tuple(f.name for f in fields(TrialRecord) if f.name != "extra")


@dataclass
class ExperimentReport:
    protocol: str
    config: dict
    params: dict
    trials: list[TrialRecord]
    output: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    @property
    def error_metrics(self) -> dict:
        mx = np.array([t.max_error for t in self.trials])
        within = [t.within_bound for t in self.trials if t.within_bound is not None]
        return {
            "trials": len(self.trials),
            "median_max_error": float(np.median(mx)),
            "mean_max_error": float(mx.mean()),
            "worst_max_error": float(mx.max()),
            "mean_error": float(np.mean([t.mean_error for t in self.trials])),
            "error_bound": self.trials[0].error_bound,
            "fraction_within_bound": float(np.mean(within)) if within else None,
            "messages_per_user": float(np.mean([t.messages_per_user for t in self.trials])),
            "bits_per_user": float(np.mean([t.bits_per_user for t in self.trials])),
        }

    def to_dict(self) -> dict:
        from .report import SCHEMA_VERSION

        out = {
            "schema_version": SCHEMA_VERSION,
            "protocol": self.protocol,
            "config": self.config,
            "params": self.params,
            "error_metrics": self.error_metrics,
            "trials": [asdict(t) for t in self.trials],
        }
        out.update(self.output)
        out["wall_time_s"] = self.wall_time_s
        return out


def _errors(est: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    if est.size == 0:
        return 0.0, 0.0
    e = np.abs(np.asarray(est, dtype=np.float64) - truth)
    return float(e.max()), float(e.mean())


def _bits_for(B: int) -> int:
    return max(1, (B - 1).bit_length())


def random_queries(B0: int, d: int, count: int, seed: int) -> list[RangeQuery]:
    g = np.random.default_rng(derive_seed(seed, 7))
    out = []
    for _ in range(count):
        a = g.integers(1, B0 + 1, size=(2, d))
        out.append(RangeQuery(tuple(int(v) for v in a.min(0)), tuple(int(v) for v in a.max(0))))
    return out


def _write_per_query(path: str, est: np.ndarray, truth: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("j,estimate,truth,abs_error\n")
        for j, (e, t) in enumerate(zip(est, truth), start=1):
            fh.write(f"{j},{float(e)!r},{int(t)},{abs(float(e) - float(t))!r}\n")


# setup: everything shared by all trials


def _setup(cfg: ExperimentConfig) -> tuple[dict, dict]:
    data_seed = derive_seed(cfg.seed, 0)
    pr = cfg.privacy
    ctx: dict = {}
    params: dict = {}
    if cfg.protocol == "had":
        Bp = max(pad_domain(cfg.B), 2)
        while Bp <= cfg.k:
            Bp *= 2
        ds = generate_data(cfg.data, cfg.n, cfg.B, seed=data_seed, k=cfg.k)
        ds = Dataset(ds.users, Bp, cfg.k)
        p = HadParams.noiseless(cfg.n, Bp, cfg.k) if cfg.noiseless else HadParams.for_privacy(cfg.n, Bp, cfg.k, cfg.eps, cfg.delta)
        bound = 0.0 if cfg.noiseless else had_error_bound(Bp, cfg.beta, p.rho, cfg.k)
        ctx.update(ds=ds, p=p, truth=exact_histogram(ds)[: cfg.B], bound=bound)
        params.update(
            B_padded=Bp, tau=p.tau, rho=p.rho, messages_per_user=p.messages_per_user,
            message_bits=p.message_bits, bits_per_user=p.bits_per_user, error_bound=bound,
        )
    elif cfg.protocol == "cm":
        B = max(cfg.B, 2)
        ds = generate_data(cfg.data, cfg.n, cfg.B, seed=data_seed, k=cfg.k)
        ds = Dataset(ds.users, B, cfg.k)
        c = CMParams.for_privacy(cfg.n, B, cfg.k, cfg.eps, cfg.delta, cfg.beta, one_sided=cfg.one_sided)
        p = CMParams(cfg.n, B, c.tau, c.s, 0.0, cfg.k, cfg.one_sided) if cfg.noiseless else c
        bound = cm_error_bound(p, cfg.beta)
        ctx.update(ds=ds, p=p, truth=exact_histogram(ds)[: cfg.B], bound=bound)
        params.update(
            tau=p.tau, s=p.s, gamma=p.gamma, gamma_clamped=p.clamped, one_sided=p.one_sided,
            expected_messages_per_user=p.expected_messages_per_user(), message_bits=p.message_bits,
            error_bound=bound,
        )
    elif cfg.protocol in ("rr", "rappor"):
        if cfg.k != 1:
            raise ConfigError(f"{cfg.protocol} takes one element per user, got k={cfg.k}")
        if cfg.noiseless:
            raise ConfigError(f"{cfg.protocol} has no noiseless mode")
        ds = generate_data(cfg.data, cfg.n, cfg.B, seed=data_seed)
        eps_l = local_epsilon_for(cfg.eps, cfg.n, cfg.delta, cfg.c_amp)
        bits = _bits_for(cfg.B) if cfg.protocol == "rr" else cfg.B
        ctx.update(el=ds.elements(), truth=exact_histogram(ds), eps_local=eps_l, bits=bits)
        params.update(eps_local=eps_l, c_amp=cfg.c_amp, messages_per_user=1, message_bits=bits)
    elif cfg.protocol == "range":
        pts = generate_points(cfg.data, cfg.n, cfg.B, cfg.d, data_seed)
        rp = make_range_params(
            cfg.n, cfg.B, cfg.d, cfg.eps, cfg.delta, cfg.beta,
            fo=cfg.fo, strict_paper=cfg.strict_paper, noiseless=cfg.noiseless, one_sided=cfg.one_sided,
        )
        qs = read_queries(cfg.queries) if cfg.queries else random_queries(cfg.B, cfg.d, cfg.num_queries, cfg.seed)
        truth = exact_range_counts(pts, qs, cfg.d)
        fp = rp.fo_params
        if cfg.noiseless or fp is None:
            alpha = 0.0
        elif rp.fo == "cm":
            alpha = cm_error_bound(fp, cfg.beta)
        else:
            alpha = had_error_bound(fp.B, cfg.beta, fp.rho, fp.k)
        bound = range_error_bound(alpha, rp)
        ctx.update(pts=pts, rp=rp, queries=qs, truth=truth, bound=bound)
        params.update(
            fo=rp.fo, B0_padded=rp.B0p, B_flat=rp.B, k=rp.k, per_query_fo_bound=alpha, error_bound=bound,
            message_bits=0 if fp is None else fp.message_bits,
        )
        if rp.fo == "cm":
            params.update(tau=fp.tau, s=fp.s, gamma=fp.gamma, gamma_clamped=fp.clamped)
        elif rp.fo == "had":
            params.update(tau=fp.tau, rho=fp.rho)
    elif cfg.protocol == "hh":
        ds = generate_data(cfg.data, cfg.n, cfg.B, seed=data_seed, k=cfg.k)
        levels = apps.heavy_hitter_levels(cfg.n, cfg.B, cfg.k, pr, one_sided=cfg.one_sided)
        floor = apps.heavy_hitter_error_floor(levels, cfg.beta)
        thr = cfg.threshold if cfg.threshold is not None else math.floor(2 * floor) + 1
        L = len(levels)
        ctx.update(ds=ds, truth=exact_histogram(ds), threshold=thr)
        params.update(
            levels=L, error_floor=floor, threshold=thr, survivor_cap=max(1, int(4 * cfg.n / thr)),
            expansion_limit=2 * L * 4 * cfg.n / thr, gamma_clamped=[lv.clamped for lv in levels],
        )
    elif cfg.protocol == "quantile":
        vals = generate_values(cfg.data, cfg.n, cfg.B, data_seed)
        spec = apps.QuantileSpec(cfg.quantile_k, cfg.quantile_q, tuple(float(v) for v in vals))
        rp = make_range_params(cfg.n, cfg.B, 1, cfg.eps, cfg.delta, cfg.beta, fo=cfg.fo)
        if cfg.noiseless:
            bound = cfg.n / cfg.B
        else:
            fp = rp.fo_params
            alpha = cm_error_bound(fp, cfg.beta) if rp.fo == "cm" else had_error_bound(fp.B, cfg.beta, fp.rho, fp.k)
            bound = alpha * max(1, math.ceil(math.log2(cfg.B)))
        ctx.update(spec=spec, min_obj=apps.quantile_objective_min(vals, spec.p), bound=bound)
        params.update(buckets=cfg.B, p=spec.p, min_objective=ctx["min_obj"], error_bound=bound)
    elif cfg.protocol == "sq":
        # predicate j is satisfied by sample x iff j is in a fixed random k-subset S(x)
        ds = generate_data(cfg.data, cfg.n, cfg.B, seed=data_seed)
        g = np.random.default_rng(derive_seed(cfg.public_seed, 0))
        S = np.array([np.sort(g.choice(cfg.B, size=min(cfg.k, cfg.B), replace=False)) + 1 for _ in range(cfg.B)])
        samples = ds.elements()
        sets = [S[x - 1].tolist() for x in samples]
        truth = np.bincount(np.concatenate([S[x - 1] for x in samples]) - 1, minlength=cfg.B) / cfg.n
        p = apps.sq_params(cfg.n, cfg.B, cfg.k, pr)
        ctx.update(sets=sets, truth=truth, p=p, bound=cfg.tolerance)
        params.update(
            queries=cfg.B, B_padded=p.B, tau=p.tau, rho=p.rho, messages_per_user=p.messages_per_user,
            message_bits=p.message_bits, sample_bound=apps.sq_sample_bound(cfg.B, cfg.k, cfg.tolerance, pr),
            error_bound=cfg.tolerance,
        )
    return ctx, params


# one trial


def _trial(cfg: ExperimentConfig, ctx: dict, t: int) -> tuple[TrialRecord, dict]:
    seed_t = derive_seed(cfg.seed, 1, t)
    pub_t = derive_seed(cfg.public_seed, 2, t)
    n = cfg.n
    extra: dict = {}
    out: dict = {}
    bound = ctx.get("bound")
    first = t == 0
    t0 = time.perf_counter()
    proto = cfg.protocol
    if proto == "had":
        p: HadParams = ctx["p"]
        dump = first and cfg.dump_messages
        run = run_had(ctx["ds"], p, seed_t, materialize=bool(dump))
        if dump:
            dump_messages(run.batch.messages, p.B, cfg.dump_messages)
        if not (run.user_counts == p.messages_per_user).all() or run.messages_analyzed != run.user_counts.sum():
            raise AssertionError("message accounting mismatch")
        est = run.estimates[: cfg.B]
        mx, mean = _errors(est, ctx["truth"])
        msgs = run.messages_analyzed
        mpu = float(run.user_counts.mean())
        bpu = mpu * p.message_bits
        within = mx <= bound if not cfg.noiseless else mx == 0
        if first and cfg.per_query:
            _write_per_query(cfg.per_query, est, ctx["truth"])
    elif proto == "cm":
        p: CMParams = ctx["p"]
        fam = HashFamily.from_seed(pub_t, p.tau, p.s)
        dump = first and cfg.dump_messages
        mode = "messages" if dump else cfg.cm_mode
        run = run_cm(ctx["ds"], p, fam, seed_t, mode=mode)
        if dump:
            dump_sketch(run.sketch, p, cfg.dump_messages)
        if run.user_counts is not None and run.user_counts.sum() != run.messages_analyzed:
            raise AssertionError("message accounting mismatch")
        est = query_cm_many(run.sketch, np.arange(1, cfg.B + 1), p, fam)
        mx, mean = _errors(est, ctx["truth"])
        msgs = run.messages_analyzed
        mpu = msgs / n
        bpu = mpu * p.message_bits
        within = mx <= bound
        extra.update(mode=run.mode, underestimates=int(np.count_nonzero(est < ctx["truth"])))
        if cfg.noiseless:
            extra["collision_free"] = collision_free(ctx["ds"].users, p, fam)
        if first and cfg.per_query:
            _write_per_query(cfg.per_query, est, ctx["truth"])
    elif proto in ("rr", "rappor"):
        if proto == "rr":
            est, _ = run_rr(ctx["el"], cfg.B, ctx["eps_local"], seed_t)
        else:
            est = run_rappor(ctx["el"], cfg.B, ctx["eps_local"], seed_t, mode=cfg.cm_mode)
        mx, mean = _errors(est, ctx["truth"])
        msgs, mpu, bpu, within = n, 1.0, float(ctx["bits"]), None
        if first and cfg.per_query:
            _write_per_query(cfg.per_query, est, ctx["truth"])
    elif proto == "range":
        rp = ctx["rp"]
        run = run_range(ctx["pts"], rp, seed_t, pub_t, cm_mode=cfg.cm_mode)
        est = answer_queries(run.oracle, ctx["queries"], rp)
        mx, mean = _errors(est, ctx["truth"])
        msgs = run.messages_analyzed
        if rp.fo == "exact":
            msgs = int(sum(len(s) for s in support_sets(ctx["pts"], rp)))
        mpu = msgs / n
        bpu = mpu * (rp.fo_params.message_bits if rp.fo_params is not None else 0)
        within = mx <= bound if not cfg.noiseless else mx == 0
        if first:
            out["answers"] = [
                {"query": str(q), "estimate": float(e), "truth": int(tr)}
                for q, e, tr in zip(ctx["queries"], est, ctx["truth"])
            ]
            if cfg.per_query:
                write_answers_csv(cfg.per_query, ctx["queries"], est, ctx["truth"])
    elif proto == "hh":
        thr = ctx["threshold"]
        res = apps.heavy_hitters(
            ctx["ds"], thr, cfg.privacy, seed_t, public_seed=pub_t, strict=cfg.strict_paper, one_sided=cfg.one_sided
        )
        truth = ctx["truth"]
        heavy = set((np.nonzero(truth >= thr)[0] + 1).tolist())
        found = {j for j, _ in res.items}
        errs = np.array([abs(e - truth[j - 1]) for j, e in res.items])
        mx, mean = (float(errs.max()), float(errs.mean())) if errs.size else (0.0, 0.0)
        msgs = res.messages_total
        mpu = msgs / n
        bpu = res.bits_total / n
        within = heavy <= found
        limit = 2 * res.levels * 4 * n / thr
        extra.update(
            recall=len(heavy & found) / len(heavy) if heavy else 1.0,
            missed=sorted(heavy - found),
            false_positives=len(found - heavy),
            nodes_expanded=res.nodes_expanded,
            expansions_within_limit=res.nodes_expanded <= limit,
        )
        bound = None
        if first:
            out["items"] = [{"element": j, "estimate": e, "truth": int(truth[j - 1])} for j, e in res.items]
    elif proto == "quantile":
        spec = ctx["spec"]
        res = apps.m_estimate_quantile_detail(
            spec, cfg.privacy, seed_t, fo=cfg.fo, noiseless=cfg.noiseless, public_seed=pub_t, B=cfg.B
        )
        gap = float(apps.quantile_objective(spec.values, res.value, spec.p)[0]) - ctx["min_obj"]
        mx = mean = max(gap, 0.0)
        msgs = res.messages_total
        mpu = msgs / n
        bpu = mpu * res.message_bits
        within = gap <= bound
        extra.update(value=res.value, bucket=res.bucket)
        if first:
            out["value"] = res.value
    elif proto == "sq":
        p = ctx["p"]
        preds = [None] * cfg.B  # only the count matters once the sets are given
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = apps.simulate_sq(preds, [0] * n, cfg.tolerance, cfg.privacy, seed_t, k=cfg.k, sets=ctx["sets"])
        mx, mean = _errors(est, ctx["truth"])
        msgs = n * p.messages_per_user
        mpu = float(p.messages_per_user)
        bpu = float(p.bits_per_user)
        within = mx <= bound
        if first:
            out["answers"] = [float(v) for v in est]
    else:  # pragma: no cover - guarded by the config
        raise ConfigError(proto)
    dt = time.perf_counter() - t0
    rec = TrialRecord(
        t, seed_t, pub_t, mx, mean, float(mpu), float(bpu), int(msgs),
        None if bound is None else float(bound), None if within is None else bool(within), dt, extra,
    )
    return rec, out


def _trial_star(args):
    return _trial(*args)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run ``cfg.trials`` independent replications and collect errors and message counts.

    The dataset is drawn once from ``seed``; trial ``t`` uses seeds derived
    from ``(seed, t)`` and ``(public_seed, t)``, so trials are independent and
    reproducible in any order.
    """
    t0 = time.perf_counter()
    try:
        ctx, params = _setup(cfg)
        jobs = [(cfg, ctx, t) for t in range(cfg.trials)]
        if cfg.workers > 1 and cfg.trials > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                results = list(ex.map(_trial_star, jobs))
        else:
            results = [_trial(*j) for j in jobs]
    except ShuffleDPError as e:
        raise type(e)(f"[{cfg.protocol} n={cfg.n} B={cfg.B} k={cfg.k} eps={cfg.eps}] {e}") from e
    trials = [r for r, _ in results]
    if len(trials) != cfg.trials:
        raise AssertionError("trial count mismatch")
    return ExperimentReport(cfg.protocol, cfg.to_dict(), params, trials, results[0][1], time.perf_counter() - t0)
