"""``sdp`` command line."""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..core import ShuffleDPError
from ..countmin import cm_error_bound
from ..privacy import CMChoice, amplification_regime, cm_params, had_rho, had_tau, local_epsilon_for
from ..hadamard import had_error_bound
from .experiment import PROTOCOLS, ExperimentConfig, run_experiment
from .report import emit_report


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, required=True, help="number of users")
    p.add_argument("--B", type=int, required=True, help="domain size (buckets for quantile, per-dimension for range)")
    p.add_argument("--d", type=int, default=1, help="dimensions (range)")
    p.add_argument("--k", type=int, default=1, help="max elements per user")
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0, help="private seed; SDP_SEED overrides")
    p.add_argument("--public-seed", type=int, default=0, help="seed of the public hash functions")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdp", description="Shuffled-model private counting experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    pp = sub.add_parser("params", help="print derived protocol parameters")
    _common(pp)
    for name in PROTOCOLS:
        p = sub.add_parser(name, help=f"run {name} trials")
        _common(p)
        p.add_argument("--data", default="uniform", help="uniform | zipf(a) | point-mass(j) | planted(m,c[,a]) | file:PATH")
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--out", default="-", help="report path, - for stdout")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--one-sided", action="store_true", help="Count-Min without noise subtraction")
        p.add_argument("--noiseless", action="store_true", help="no blanket noise")
        p.add_argument("--strict-paper", action="store_true", help="literal parameter choices and strict preconditions")
        p.add_argument("--dump-messages", default=None, metavar="PATH", help="write trial 0 messages (had) or sketch (cm)")
        p.add_argument("--per-query", default=None, metavar="PATH", help="CSV of trial 0 per-query estimates")
        p.add_argument("--workers", type=int, default=1, help="parallel trial processes")
        p.add_argument("--mode", dest="cm_mode", choices=("auto", "messages", "aggregate"), default="auto")
        p.add_argument("--c-amp", type=float, default=1.0, help="amplification constant for rr/rappor")
        if name in ("range", "quantile"):
            p.add_argument("--fo", choices=("cm", "had"), default="cm", help="frequency oracle over tree nodes")
        if name == "range":
            p.add_argument("--queries", default=None, metavar="PATH", help="one 'lo,hi;lo,hi' box per line")
            p.add_argument("--num-queries", type=int, default=100)
        if name == "hh":
            p.add_argument("--threshold", type=float, default=None)
        if name == "quantile":
            p.add_argument("--quantile", default="1/2", help="k/q, e.g. 1/2 for the median")
        if name == "sq":
            p.add_argument("--tolerance", type=float, default=0.1)
    return ap


def _params_report(a) -> dict:
    out: dict = {"n": a.n, "B": a.B, "k": a.k, "eps": a.eps, "delta": a.delta, "beta": a.beta}
    try:
        rho = had_rho(a.eps, a.delta, a.k)
        out["had"] = {
            "rho": rho, "tau": had_tau(a.n), "messages_per_user": a.k + rho,
            "error_bound": had_error_bound(max(a.B, 2), a.beta, rho, a.k),
        }
    except ShuffleDPError as e:
        out["had"] = {"error": str(e)}
    try:
        c: CMChoice = cm_params(a.n, max(a.B, 2), a.k, a.eps, a.delta, a.beta)
        from ..countmin import CMParams

        p = CMParams(a.n, max(a.B, 2), c.tau, c.s, c.gamma, a.k, False, c.clamped)
        out["cm"] = {
            "tau": c.tau, "s": c.s, "gamma": c.gamma, "gamma_clamped": c.clamped,
            "gamma_n_required": c.gamma_n_required, "error_bound": cm_error_bound(p, a.beta),
        }
    except ShuffleDPError as e:
        out["cm"] = {"error": str(e)}
    try:
        out["single_message"] = {
            "eps_local": local_epsilon_for(a.eps, a.n, a.delta),
            "regime_limit": amplification_regime(a.n, a.delta),
        }
    except ShuffleDPError as e:
        out["single_message"] = {"error": str(e)}
    return out


def main(argv: list[str] | None = None) -> int:
    a = _build_parser().parse_args(argv)
    env = os.environ.get("SDP_SEED")
    if env is not None and env != "":
        try:
            a.seed = int(env)
        except ValueError:
            print(f"sdp: SDP_SEED={env!r} is not an integer", file=sys.stderr)
            return 2
    try:
        if a.command == "params":
            print(json.dumps(_params_report(a), indent=2))
            return 0
        kw = dict(
            protocol=a.command, n=a.n, B=a.B, d=a.d, k=a.k, eps=a.eps, delta=a.delta, beta=a.beta,
            seed=a.seed, public_seed=a.public_seed, data=a.data, trials=a.trials,
            one_sided=a.one_sided, noiseless=a.noiseless, strict_paper=a.strict_paper,
            dump_messages=a.dump_messages, per_query=a.per_query, workers=a.workers,
            cm_mode=a.cm_mode, c_amp=a.c_amp,
        )
        for opt in ("fo", "queries", "num_queries", "threshold", "tolerance"):
            if hasattr(a, opt):
                kw[opt] = getattr(a, opt)
        if a.command == "quantile":
            try:
                qk, qq = (int(t) for t in a.quantile.split("/"))
            except ValueError:
                print(f"sdp: --quantile expects k/q, got {a.quantile!r}", file=sys.stderr)
                return 2
            kw.update(quantile_k=qk, quantile_q=qq)
        report = run_experiment(ExperimentConfig(**kw))
        emit_report(report, a.format, a.out)
    except ShuffleDPError as e:
        print(f"sdp: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"sdp: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
