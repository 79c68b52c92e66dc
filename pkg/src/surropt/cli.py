"""Command-line entry points: train, evaluate, baseline, metrics, landscape."""
import argparse
import ast

from .harness import (BASELINE_METHODS, POLICY_METHODS, ExperimentConfig,
                      _apply_overrides, _write_tsv, export_landscape,
                      recompute_metrics, run_experiment)
from .problems import make_problem


def _parse_overrides(items):
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"override {item!r} is not key=value")
        try:
            overrides[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            overrides[key] = value
    return overrides


def _add_run_args(p, methods, default_method=None):
    p.add_argument("--problem", required=True,
                   help="three_hump, rosenbrock, submanifold_hump or external")
    p.add_argument("--method", choices=methods, required=default_method is None,
                   default=default_method)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--episodes", type=int, default=None,
                   help="evaluation episodes per seed (default per problem)")
    p.add_argument("--x-mode", choices=["fixed", "parameterized"],
                   default="fixed")
    p.add_argument("--embedding-seed", type=int, default=0)
    p.add_argument("--problem-override", action="append", metavar="KEY=VALUE")
    p.add_argument("--ppo-override", action="append", metavar="KEY=VALUE")
    p.add_argument("--baseline-override", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=None, help="run directory")


def _config(args, mode):
    return ExperimentConfig(
        problem=args.problem,
        method=args.method,
        seeds=tuple(args.seeds),
        mode=mode,
        eval_episodes=args.episodes,
        train_iterations=getattr(args, "iterations", 30),
        x_mode=args.x_mode,
        embedding_seed=args.embedding_seed,
        problem_overrides=_parse_overrides(args.problem_override),
        ppo_overrides=_parse_overrides(args.ppo_override),
        baseline_overrides=_parse_overrides(args.baseline_override),
        checkpoint_dir=getattr(args, "checkpoint", None),
        output_dir=args.out,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="surropt",
        description="Surrogate-guided simulator optimization with a learned "
                    "call policy")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a call policy")
    _add_run_args(p, POLICY_METHODS)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--and-evaluate", action="store_true",
                   help="run evaluation episodes after training")

    p = sub.add_parser("evaluate", help="evaluation episodes for any method")
    _add_run_args(p, POLICY_METHODS + BASELINE_METHODS)
    p.add_argument("--checkpoint", default=None,
                   help="training run directory holding policy_seed{S}.npz")

    p = sub.add_parser("baseline", help="surrogate-descent baselines")
    _add_run_args(p, BASELINE_METHODS, default_method="lgso")

    p = sub.add_parser("metrics", help="recompute metrics from a run directory")
    p.add_argument("--run", required=True)

    p = sub.add_parser("landscape", help="export a Monte-Carlo objective grid")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True, help="output tsv path")
    p.add_argument("--lo", type=float, default=-3.0)
    p.add_argument("--hi", type=float, default=3.0)
    p.add_argument("--resolution", type=int, default=25)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--problem-override", action="append", metavar="KEY=VALUE")

    args = parser.parse_args(argv)

    if args.verb == "metrics":
        report = recompute_metrics(args.run)
        print(f"anc {report.anc:.4f} std {report.anc_std:.4f} "
              f"min {report.anc_min} max {report.anc_max} "
              f"episodes {report.episode_count}")
        for pt in report.amo:
            print(f"amo k={pt.k} value={pt.value:.4f} std={pt.std:.4f} "
                  f"contributors={pt.contributors}")
        return 0

    if args.verb == "landscape":
        problem = _apply_overrides(make_problem(args.problem),
                                   _parse_overrides(args.problem_override),
                                   "problem")
        rows = export_landscape(problem, lo=args.lo, hi=args.hi,
                                resolution=args.resolution,
                                n_samples=args.samples, seed=args.seed)
        _write_tsv(args.out, ("psi1", "psi2", "objective"),
                   [tuple(float(v) for v in row) for row in rows])
        print(f"wrote {len(rows)} grid nodes to {args.out}")
        return 0

    mode = {"train": "full" if getattr(args, "and_evaluate", False) else "train",
            "evaluate": "evaluate",
            "baseline": "evaluate"}[args.verb]
    run_dir = run_experiment(_config(args, mode))
    print(f"run written to {run_dir}")
    return 0
