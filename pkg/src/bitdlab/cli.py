"""Command-line entry point: ``bitdlab {dp,train,sweep,stale-demo,lemma-check}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .exact import (apply_backward_operator, apply_bidirectional_operator,
                    apply_forward_operator, bidirectional_consistency,
                    iterate_fixpoint, solve_backward, solve_bidirectional, solve_forward,
                    ValueTable)
from .harness import (DEFAULT_LAMBDAS, ExperimentConfig, Problem, _fmt, emit_outputs,
                      run_single, run_sweep, seed_material, summarize)
from .mdp import Policy, backward_kernel, mdp_from_dict

log = logging.getLogger("bitdlab")


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise SystemExit(f"error: cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SystemExit(f"error: {path} is not valid JSON: {exc}") from exc


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _experiment(args) -> ExperimentConfig:
    blob = _read_json(args.config)
    cfg = ExperimentConfig.from_dict(blob)
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.master_seed is not None:
        overrides["master_seed"] = args.master_seed
    if args.out is not None:
        overrides["out"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


# -- subcommands -------------------------------------------------------------------

def cmd_dp(args) -> int:
    """Exact forward/backward/bidirectional values plus a contraction report."""
    blob = _read_json(args.config)
    env = blob.get("environment", blob if ("preset" in blob or "n_states" in blob)
                   else {"preset": "chain"})
    lambdas = blob.get("lambdas", list(DEFAULT_LAMBDAS) + [1.0])
    mdp = mdp_from_dict(env)
    policy = Policy.uniform(mdp)
    kernel = backward_kernel(mdp, policy)
    fwd = solve_forward(mdp, policy)
    value_rows, factor_rows = [], []
    _, rep = iterate_fixpoint(lambda v: apply_forward_operator(v, mdp, policy),
                              ValueTable("forward", np.zeros(mdp.n_states), 0.0, mdp.gamma))
    factor_rows.append(["forward", 0.0, mdp.gamma, rep.theoretical_factor,
                        rep.empirical_factor, rep.iterations, rep.final_residual])
    for lam in lambdas:
        back = solve_backward(kernel, lam, mdp.gamma)
        bi = solve_bidirectional(mdp, policy, kernel, lam)
        gap = bidirectional_consistency(fwd, back, bi)
        for s in range(mdp.n_states):
            value_rows.append([s, lam, fwd.values[s], back.values[s], bi.values[s],
                               bi.values[s] - fwd.values[s] - back.values[s]])
        print(f"lambda={_fmt(lam)}  max |v_bi - v_fwd - v_back| = {gap:.3e}")
        if lam > 0:
            _, rb = iterate_fixpoint(lambda v: apply_backward_operator(v, kernel, lam, mdp.gamma),
                                     ValueTable("backward", np.zeros(mdp.n_states), lam, mdp.gamma))
            factor_rows.append(["backward", lam, mdp.gamma, rb.theoretical_factor,
                                rb.empirical_factor, rb.iterations, rb.final_residual])
        _, rbi = iterate_fixpoint(
            lambda v: apply_bidirectional_operator(v, mdp, policy, kernel, lam),
            ValueTable("bidirectional", np.zeros(mdp.n_states), lam, mdp.gamma))
        factor_rows.append(["bidirectional", lam, mdp.gamma, rbi.theoretical_factor,
                            rbi.empirical_factor, rbi.iterations, rbi.final_residual])
    out = Path(args.out or "results")
    _write_rows(out / "values.csv",
                ["state", "lambda", "forward", "backward", "bidirectional", "additivity_gap"],
                value_rows)
    _write_rows(out / "contraction.csv",
                ["direction", "lambda", "gamma", "theoretical_factor", "empirical_factor",
                 "iterations", "final_residual"], factor_rows)
    for row in factor_rows:
        print(f"{row[0]:>13} lambda={_fmt(row[1]):<5} bound={row[3]:.6f} "
              f"empirical={row[4]:.6f} iterations={row[5]}")
    print(f"wrote {out / 'values.csv'} and {out / 'contraction.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    method = args.method or cfg.methods[0]
    alpha = args.alpha if args.alpha is not None else cfg.alphas[0]
    lam = args.lam if args.lam is not None else cfg.lambdas[0]
    seed = args.seed
    problem = Problem.build(cfg)
    lc = cfg.learner_config(method, alpha, lam)
    rec = run_single(cfg, method, alpha, lam, seed, problem)
    net0, _ = seed_material(cfg, problem, seed)
    out = Path(cfg.out)
    emit_outputs([rec], summarize([rec]), out, svg=args.svg)
    net = net0.with_params(rec.final_params).with_parameterization(lc.parameterization)
    (out / "net.json").write_text(net.to_json() + "\n")
    status = "diverged" if rec.diverged else f"final mstde={rec.mstde[-1]:.6g}"
    print(f"{lc.label} alpha={_fmt(alpha)} lambda={_fmt(lam)} seed={seed}: {status}, "
          f"auc={rec.auc:.6g} [{kernels.BACKEND} kernel, {rec.duration:.2f}s]")
    print(f"wrote {out}/curves.csv, summary.csv, net.json")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment(args)

    def progress(done, total):
        if done % 50 == 0 or done == total:
            log.info("%d/%d runs", done, total)

    records, summary = run_sweep(cfg, workers=args.workers, progress=progress)
    written = emit_outputs(records, summary, cfg.out, svg=args.svg)
    for c in summary:
        if c.best:
            print(f"best {c.method}: alpha={_fmt(c.alpha)} lambda={_fmt(c.lam)} "
                  f"auc={c.mean_auc:.6g} +/- {c.stderr_auc:.3g} "
                  f"(diverged {c.n_diverged}/{c.n_seeds})")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_stale_demo(args) -> int:
    from .diagnostics import find_stale_demo
    blob = _read_json(args.config)
    start = args.master_seed or 0
    n = args.seeds or blob.get("seeds", 10_000)
    kwargs = {k: blob[k] for k in ("alpha", "hidden", "init_scale", "bias_scale", "lam",
                                   "gamma") if k in blob}
    demo = find_stale_demo(range(start, start + n), **kwargs)
    if demo is None:
        print(f"no exhibiting initialization among seeds {start}..{start + n - 1}")
        return 1
    rec = demo.record
    print(f"seed {demo.seed} (alpha={_fmt(demo.alpha)}, lambda={_fmt(demo.lam)}, "
          f"gamma={_fmt(demo.gamma)})")
    for name, net in (("initial", demo.net0), ("after t=0", demo.net1)):
        print(f"  {name} weights: " + " ".join(f"{x:+.4f}" for x in net.params))
    print(f"  delta_0 = {demo.delta0:+.6f}   delta_1 = {demo.delta1:+.6f}")
    print(f"  stored gradient . current gradient at s0 = {rec.dot:+.6f} "
          f"(cosine {rec.cosine:+.4f}, obtuse={rec.obtuse})")
    print(f"  v(s0) change, stored trace    : {demo.dv_stale:+.6f}")
    print(f"  v(s0) change, refreshed trace : {demo.dv_fresh:+.6f}")
    out = Path(args.out or "results")
    rows = []
    for stage in ("t0", "t1", "stale", "fresh"):
        v0, v1 = demo.values[stage]
        rows.append([stage, v0, v1])
    _write_rows(out / "stale_demo.csv", ["stage", "v_s0", "v_s1"], rows)
    _write_rows(out / "stale_demo_summary.csv",
                ["seed", "alpha", "lambda", "gamma", "delta0", "delta1", "dot", "cosine",
                 "dv_stale", "dv_fresh"],
                [[demo.seed, demo.alpha, demo.lam, demo.gamma, demo.delta0, demo.delta1,
                  rec.dot, rec.cosine, demo.dv_stale, demo.dv_fresh]])
    (out / "stale_demo_net.json").write_text(demo.net0.to_json() + "\n")
    print(f"wrote {out / 'stale_demo.csv'}, {out / 'stale_demo_summary.csv'}, "
          f"{out / 'stale_demo_net.json'}")
    return 0


def cmd_lemma_check(args) -> int:
    from .lemma import value_sum_table
    blob = _read_json(args.config)
    env = blob.get("environment", {"preset": "chain", "n_nonterminal": 5,
                                   "reward_amplitude": 5.0, "gamma": 0.9})
    lam = blob.get("lambda", 0.5)
    max_t = blob.get("max_t", 5)
    tol = blob.get("tolerance", 1e-8)
    mdp = mdp_from_dict(env)
    policy = Policy.uniform(mdp)
    rows, worst, worst_ret = [], 0.0, 0.0
    for t in range(max_t + 1):
        for s, res in value_sum_table(mdp, policy, t, lam).items():
            rows.append([s, t, lam, res.probability, res.lhs, res.rhs, res.gap,
                         res.lhs_returns, res.gap_returns])
            worst = max(worst, res.gap)
            worst_ret = max(worst_ret, res.gap_returns)
    out = Path(args.out or "results")
    _write_rows(out / "lemma.csv", ["state", "t", "lambda", "probability", "lhs", "rhs", "gap",
                                    "lhs_returns", "gap_returns"], rows)
    print(f"{len(rows)} reachable (state, t) pairs, t <= {max_t}, lambda={_fmt(lam)}")
    print(f"  max gap, value form  : {worst:.3e}  ({'within' if worst < tol else 'exceeds'} "
          f"{tol:g})")
    print(f"  max gap, return form : {worst_ret:.3e}")
    print(f"wrote {out / 'lemma.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitdlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds_help="number of seeds"):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seeds", type=int, help=seeds_help)
        p.add_argument("--steps", type=int, help="environment steps per run")
        p.add_argument("--master-seed", type=int, help="master seed for seed splitting")
        p.add_argument("--svg", action="store_true", help="also write curves.svg")
        return p

    common(sub.add_parser("dp", help="exact values and contraction report")).set_defaults(
        func=cmd_dp)
    p = common(sub.add_parser("train", help="one training run"))
    p.add_argument("--method", help="TD0, TDLambda, RefreshedTDLambda, BiTD_FR, ...")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int, default=0, help="seed index under the master seed")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("sweep", help="grid of runs with AUC selection"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    common(sub.add_parser("stale-demo", help="search for a stale-trace exhibit"),
           "number of initialization seeds to search").set_defaults(func=cmd_stale_demo)
    common(sub.add_parser("lemma-check", help="enumerate the value-sum identity")).set_defaults(
        func=cmd_lemma_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
