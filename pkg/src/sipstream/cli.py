"""Experiment harness: estimation, synthesis, privatization, sweeps, audits.

Every command is deterministic under a fixed ``--seed`` and config.  A flat
JSON config file can preload any flag (keys use underscores); explicit flags
win.  CSV outputs carry a header row plus a leading ``#`` metadata comment
with the resolved configuration, and rows are flushed as they complete so an
interrupted run leaves only whole rows behind.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import audit as audit_mod
from . import example2 as example2_mod
from .belief import init_belief
from .mech import (
    PrivacyBudget,
    compose_advanced,
    compose_linear,
    policy_from_json,
    uniform_schedule,
)
from .model import (
    MarkovModel,
    estimate_markov,
    load_model,
    read_corpus,
    sample_sequence,
    save_model,
    write_corpus,
)
from .optimize import symbol_distance
from .stream import BatchedStreamPrivatizer, privatize_crr_stream, privatize_krr_stream

MECHANISMS = ("sip-inst", "sip-batch", "rr-ldp")
_UNSET = None


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from --config, then from hard defaults; flags win."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValueError("config file must hold a flat JSON object")
    for key, fallback in defaults.items():
        if getattr(args, key, _UNSET) is _UNSET:
            setattr(args, key, cfg.get(key, fallback))
    return args


def _resolved(args: argparse.Namespace, keys) -> str:
    return json.dumps({k: getattr(args, k) for k in sorted(keys)}, default=str)


def _schedule_for(args, length: int) -> list[float]:
    given = sum(x is not None for x in (args.epsilon_step, args.epsilon_total, args.schedule))
    if given != 1:
        raise ValueError("supply exactly one of --epsilon-step, --epsilon-total, --schedule")
    if args.epsilon_step is not None:
        return [float(args.epsilon_step)] * length
    if args.epsilon_total is not None:
        return uniform_schedule(float(args.epsilon_total), length)
    sched = [float(tok) for tok in str(args.schedule).split(",") if tok.strip()]
    if len(sched) != length:
        raise ValueError(f"schedule length {len(sched)} does not match horizon {length}")
    return sched


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    corpus = read_corpus(args.corpus)
    mapping_note = ""
    if args.top_k is not None:
        corpus, kept = _apply_top_k(corpus, int(args.top_k))
        mapping_note = f", top-{args.top_k} filter kept {kept} symbols + other-bucket"
    model = estimate_markov(
        corpus,
        smoothing=float(args.smoothing),
        alphabet_size=None if args.alphabet_size is None else int(args.alphabet_size),
    )
    save_model(model, args.out)
    lengths = [len(s) for s in corpus]
    print(
        f"estimated model: alphabet={model.alphabet_size}, sequences={len(corpus)}, "
        f"lengths {min(lengths)}..{max(lengths)}{mapping_note}"
    )
    return 0


def _apply_top_k(corpus, k: int):
    counts: dict[int, int] = {}
    for seq in corpus:
        for s in seq.tolist():
            counts[s] = counts.get(s, 0) + 1
    ranked = sorted(counts, key=lambda s: (-counts[s], s))[:k]
    remap = {s: i for i, s in enumerate(ranked)}
    other = len(remap)
    out = [np.asarray([remap.get(int(s), other) for s in seq], dtype=np.int64) for seq in corpus]
    return out, len(remap)


def cmd_synth(args) -> int:
    model = load_model(args.model)
    seqs = [
        sample_sequence(model, int(args.length), int(args.seed), stream=i)
        for i in range(int(args.count))
    ]
    write_corpus(args.out, seqs)
    print(f"wrote {len(seqs)} sequences of length {args.length} to {args.out}")
    return 0


def _load_or_estimate_model(args, corpus) -> MarkovModel:
    if getattr(args, "model", None):
        return load_model(args.model)
    return estimate_markov(corpus, smoothing=1.0)


def cmd_privatize(args) -> int:
    corpus = read_corpus(args.input)
    model = _load_or_estimate_model(args, corpus)
    delta = float(args.delta)
    released = []
    reports = []
    batch_priv = None
    for i, xs in enumerate(corpus):
        sched = _schedule_for(args, len(xs))
        if args.mechanism == "sip-inst":
            if len(set(sched)) != 1:
                raise ValueError("sip-inst stream path uses a constant per-step budget")
            ys = privatize_crr_stream(model, xs, sched[0], int(args.seed), stream=i)
            tail = None
        elif args.mechanism == "rr-ldp":
            if len(set(sched)) != 1:
                raise ValueError("rr-ldp stream path uses a constant per-step budget")
            ys = privatize_krr_stream(model.alphabet_size, xs, sched[0], int(args.seed), stream=i)
            tail = None
        elif args.mechanism == "sip-batch":
            w = int(args.batch_width)
            if len(set(sched)) != 1:
                raise ValueError("sip-batch uses a constant per-step budget")
            if batch_priv is None or batch_priv.epsilon != sched[0] * w:
                batch_priv = BatchedStreamPrivatizer(model, w, sched[0] * w)
            ys, tail = batch_priv.privatize(xs, int(args.seed), stream=i)
        else:
            raise ValueError(f"unknown mechanism {args.mechanism}")
        released.append(ys)
        budget = PrivacyBudget(epsilon=sum(sched), delta=delta, schedule=sched)
        entry = {
            "stream": i,
            "steps": len(xs),
            "per_step_epsilon": sched[0] if len(set(sched)) == 1 else sched,
            "linear_total": budget.linear_total(),
            "advanced_total": budget.advanced_total() if 0 < delta < 1 else None,
            "delta": delta,
        }
        if args.mechanism == "sip-batch":
            entry["batch_width"] = int(args.batch_width)
            entry["tail_batch_width"] = tail
        reports.append(entry)
    write_corpus(args.out, released)
    report_path = str(args.out) + ".report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"mechanism": args.mechanism, "streams": reports}, fh, indent=1)
    print(f"privatized {len(released)} streams -> {args.out} (report: {report_path})")
    return 0


def _sweep_mechanism(model, mechanism, eps, steps, streams, width, seed):
    n = model.alphabet_size
    D = symbol_distance("hamming", n)
    per_stream = np.empty(streams)
    length = steps // streams
    for i in range(streams):
        xs = sample_sequence(model, length, seed, stream=i)
        if mechanism == "sip-inst":
            ys = privatize_crr_stream(model, xs, eps, seed + 1, stream=i)
        elif mechanism == "rr-ldp":
            ys = privatize_krr_stream(n, xs, eps, seed + 1, stream=i)
        elif mechanism == "rr-ldp-2x":
            ys = privatize_krr_stream(n, xs, 2.0 * eps, seed + 1, stream=i)
        elif mechanism == "sip-batch":
            priv = _sweep_mechanism.batch_cache.get((id(model), width, eps))
            if priv is None:
                priv = BatchedStreamPrivatizer(model, width, eps * width)
                _sweep_mechanism.batch_cache[(id(model), width, eps)] = priv
            ys, _ = priv.privatize(xs, seed + 1, stream=i)
        else:
            raise ValueError(f"unknown mechanism {mechanism}")
        per_stream[i] = D[xs, ys].mean()
    mean = float(per_stream.mean())
    stderr = float(per_stream.std(ddof=1) / math.sqrt(streams)) if streams > 1 else math.inf
    return mean, stderr


_sweep_mechanism.batch_cache = {}


def _sweep_leakage(model, mechanism, eps, steps, width, seed, mc_samples):
    n = model.alphabet_size
    length = steps
    if mechanism in ("sip-inst", "rr-ldp", "rr-ldp-2x"):
        e = 2.0 * eps if mechanism == "rr-ldp-2x" else eps
        if n**length <= 4096:
            mech = (
                audit_mod.CrrMechanism(model, [e] * length)
                if mechanism == "sip-inst"
                else audit_mod.KrrMechanism(n, [e] * length)
            )
            return audit_mod.sil_exact(model, mech, length), "exact"
        mech = (
            audit_mod.CrrMechanism(model, [e] * length)
            if mechanism == "sip-inst"
            else audit_mod.KrrMechanism(n, [e] * length)
        )
        mx, _ = audit_mod.mc_realized_leakage(model, mech, length, samples=mc_samples, seed=seed)
        return mx, f"monte_carlo({mc_samples})"
    return math.nan, "skipped"  # batched leakage is certified per-batch by the solver


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    grid = [float(tok) for tok in str(args.grid).split(",") if tok.strip()]
    if not grid:
        raise ValueError("empty epsilon grid")
    mechanisms = [tok.strip() for tok in str(args.mechanisms).split(",") if tok.strip()]
    steps = int(args.steps)
    streams = int(args.streams)
    tasks = [(eps, mech) for eps in grid for mech in mechanisms]

    def run(task):
        eps, mech = task
        mean, stderr = _sweep_mechanism(
            model, mech, eps, steps, streams, int(args.batch_width), int(args.seed)
        )
        if args.leakage == "skip":
            leak, method = math.nan, "skipped"
        else:
            leak, method = _sweep_leakage(
                model, mech, eps, steps, int(args.batch_width), int(args.seed),
                int(args.audit_samples),
            )
        return (eps, mech, mean, stderr, leak, method)

    threads = int(args.threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    keys = ["grid", "mechanisms", "steps", "streams", "batch_width", "seed", "leakage"]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# config: {_resolved(args, keys)}\n")
        fh.write("epsilon,mechanism,distortion_mean,distortion_stderr,audited_leakage,leakage_method\n")
        for eps, mech, mean, stderr, leak, method in results:
            fh.write(f"{eps:.17g},{mech},{mean:.17g},{stderr:.17g},{leak:.17g},{method}\n")
            fh.flush()
    print(f"sweep: {len(results)} rows -> {args.out}")
    return 0


def cmd_audit(args) -> int:
    model = load_model(args.model)
    n = model.alphabet_size
    horizon = int(args.horizon)
    if args.policy:
        with open(args.policy, encoding="utf-8") as fh:
            policy = policy_from_json(fh.read())  # validation precedes any audit
        if policy.size != n:
            raise ValueError("policy size does not match model alphabet")
        mech = audit_mod.FixedKernelsMechanism([policy.kernel] * horizon)
        sched = [policy.epsilon] * horizon
        kind = policy.kind
    else:
        sched = _schedule_for(args, horizon)
        if args.mechanism == "sip-inst":
            mech = audit_mod.CrrMechanism(model, sched)
        elif args.mechanism == "rr-ldp":
            mech = audit_mod.KrrMechanism(n, sched)
        else:
            raise ValueError("audit supports sip-inst, rr-ldp, or --policy")
        kind = args.mechanism

    report = audit_mod.audit_report(
        model, mech, horizon, threads=int(args.threads),
        monte_carlo=int(args.monte_carlo), seed=int(args.seed),
    )
    out = dict(report.to_dict(), mechanism=kind, schedule=sched)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=1)
    csv_path = str(args.out) + ".csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config: {_resolved(args, ['model', 'horizon', 'seed'])}\n")
        fh.write("step,leakage\n")
        for step, leak in report.csv_rows():
            fh.write(f"{step},{leak:.17g}\n")

    failures = report.violated_bounds()
    if report.method == "exact":
        linear = compose_linear(sched)
        if report.sil > linear + 1e-9:
            failures.append(f"sil {report.sil} exceeds linear budget {linear}")
        for k, (leak, eps_k) in enumerate(zip(report.per_step_leakage, sched), start=1):
            if kind in ("sip-inst", "crr") and leak > eps_k + 1e-9:
                failures.append(f"step {k} leakage {leak} exceeds budget {eps_k}")
        if report.ldp_log_ratio > 2.0 * linear + 1e-9:
            failures.append(f"ldp ratio {report.ldp_log_ratio} exceeds 2x budget {2 * linear}")
    for line in failures:
        print(f"BOUND VIOLATED: {line}", file=sys.stderr)
    print(f"audit report -> {args.out} ({report.method}); bounds {'OK' if not failures else 'VIOLATED'}")
    return 1 if failures else 0


def cmd_example2(args) -> int:
    phis = np.linspace(0.0, 1.0, int(args.phi_points))
    rows = example2_mod.emit_curves(
        p1=float(args.p1),
        phis=phis,
        eps1=float(args.eps1),
        eps2=float(args.eps2),
        output_path=args.out,
        noise_cap=float(args.cap),
        resolution=int(args.resolution),
    )
    print(f"example2: {len(rows)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# wiring

_SHARED = {"seed": 0, "threads": 1, "config": None}


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--config", type=str)
    p.add_argument("--out", type=str)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sipstream", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit a Markov model from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--alphabet-size", type=int)
    p.add_argument("--top-k", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_estimate, defaults={**_SHARED, "smoothing": 0.0,
                                                "alphabet_size": None, "top_k": None})

    p = sub.add_parser("synth", help="sample sequences from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--length", type=int)
    p.add_argument("--count", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_synth, defaults={**_SHARED, "length": 100, "count": 10})

    p = sub.add_parser("privatize", help="release a corpus through a mechanism")
    p.add_argument("--model")
    p.add_argument("--input", required=True)
    p.add_argument("--mechanism", choices=MECHANISMS)
    p.add_argument("--epsilon-step", type=float)
    p.add_argument("--epsilon-total", type=float)
    p.add_argument("--schedule", type=str)
    p.add_argument("--delta", type=float)
    p.add_argument("--batch-width", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_privatize, defaults={
        **_SHARED, "model": None, "mechanism": "sip-inst", "epsilon_step": None,
        "epsilon_total": None, "schedule": None, "delta": 1e-6, "batch_width": 2,
    })

    p = sub.add_parser("sweep", help="utility-privacy tradeoff grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=str)
    p.add_argument("--mechanisms", type=str)
    p.add_argument("--steps", type=int)
    p.add_argument("--streams", type=int)
    p.add_argument("--batch-width", type=int)
    p.add_argument("--leakage", choices=("auto", "skip"))
    p.add_argument("--audit-samples", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_sweep, defaults={
        **_SHARED, "grid": "0.5,1,2", "mechanisms": "sip-inst,rr-ldp,rr-ldp-2x,sip-batch",
        "steps": 10000, "streams": 50, "batch_width": 2, "leakage": "auto",
        "audit_samples": 8,
    })

    p = sub.add_parser("audit", help="leakage report and regression gate")
    p.add_argument("--model", required=True)
    p.add_argument("--mechanism", choices=("sip-inst", "rr-ldp"))
    p.add_argument("--policy", type=str)
    p.add_argument("--epsilon-step", type=float)
    p.add_argument("--epsilon-total", type=float)
    p.add_argument("--schedule", type=str)
    p.add_argument("--horizon", type=int)
    p.add_argument("--monte-carlo", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_audit, defaults={
        **_SHARED, "mechanism": "sip-inst", "policy": None, "epsilon_step": None,
        "epsilon_total": None, "schedule": None, "horizon": 4, "monte_carlo": 0,
    })

    p = sub.add_parser("example2", help="two-step correlation curves as CSV")
    p.add_argument("--p1", type=float)
    p.add_argument("--eps1", type=float)
    p.add_argument("--eps2", type=float)
    p.add_argument("--cap", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--phi-points", type=int)
    _add_shared(p)
    p.set_defaults(func=cmd_example2, defaults={
        **_SHARED, "p1": 0.5, "eps1": 1.0, "eps2": 1.0, "cap": 0.25,
        "resolution": 1001, "phi_points": 101,
    })
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _merge_config(args, args.defaults)
        if getattr(args, "out", None) is None:
            raise ValueError("--out is required")
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entry()
