"""Experiment orchestration: config resolution, seed fan-out, persistence.

A run directory is reproducible from its persisted snapshot alone, so every
default is inlined into ``config.json`` before anything executes. Layout:

    config.json            resolved config snapshot (no timestamps)
    manifest.json          per-seed status, fault records, wall time
    episodes/              one trace file per episode (call, objective)
    episodes.tsv           per-episode summary rows
    psi_final.tsv          optimized parameters per episode
    metrics.tsv            pooled ANC with dispersion
    amo_curve.tsv          AMO by call count with std and min/max bands
    anc_by_seed.tsv        per-seed ANC rows plus the pooled row
    training_log.tsv       per-iteration training quantities (policy methods)
    policy_seed{S}.npz     trained policy checkpoints (policy methods)

Seed fan-out: each entry of ``seeds`` is an independent replicate. Training
hands the integer straight to the trainer (which splits it into policy-init,
episode and global-buffer streams); evaluation episodes derive their seeds
from SeedSequence([seed, 1]) so they never overlap the training streams, and
baseline episode e uses SeedSequence([seed, 1, e]).

All tabular output is tab-separated with a header row; floats are written
with repr so files round-trip bit-exactly.
"""
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .baselines import BaselineConfig, default_psi_lr, run_baseline
from .metrics import metrics_report
from .policy import VARIANTS, load_policy, save_policy
from .problems import canonical_xdist, make_problem, oracle_expected_loss
from .rl import PPOConfig, evaluate_policy, train_policy

__all__ = ["ExperimentConfig", "resolve", "run_experiment", "load_run_records",
           "recompute_metrics", "export_landscape", "POLICY_METHODS",
           "BASELINE_METHODS"]

POLICY_METHODS = VARIANTS
BASELINE_METHODS = ("lgso", "lgso_e", "numdiff")
MODES = ("train", "evaluate", "full")

TRAIN_LOG_COLUMNS = ("iteration", "mean_calls", "min_calls", "max_calls",
                     "mean_return", "mean_call_prob", "critic_mse",
                     "actor_updates", "critic_updates", "kl_b", "kl_eps",
                     "terminated")


@dataclass
class ExperimentConfig:
    problem: str
    method: str
    seeds: tuple = (0, 1, 2)
    mode: str = "full"
    eval_episodes: int | None = None  # None: 32 benchmark / 20 external / 5 muon
    train_iterations: int = 30
    x_mode: str = "fixed"
    embedding_seed: int = 0
    problem_overrides: dict = field(default_factory=dict)
    ppo_overrides: dict = field(default_factory=dict)
    baseline_overrides: dict = field(default_factory=dict)
    checkpoint_dir: str | None = None  # policy source for mode="evaluate"
    output_dir: str | None = None


def default_eval_episodes(problem):
    if problem.kind != "external":
        return 32
    return 5 if problem.objective == "muon" else 20


def _apply_overrides(obj, overrides, label):
    valid = {f.name for f in fields(obj)}
    unknown = set(overrides) - valid
    if unknown:
        raise ValueError(f"unknown {label} overrides: {sorted(unknown)}")
    return replace(obj, **overrides)


def resolve(config):
    """Inline every default; returns (problem, ppo, baseline, snapshot dict)."""
    if config.method not in POLICY_METHODS + BASELINE_METHODS:
        raise ValueError(f"unknown method {config.method!r}")
    if config.mode not in MODES:
        raise ValueError(f"unknown mode {config.mode!r}")
    if config.method in BASELINE_METHODS and config.mode != "evaluate":
        raise ValueError(f"{config.method} has no training phase; "
                         "use mode='evaluate'")
    if (config.method in POLICY_METHODS and config.mode == "evaluate"
            and not config.checkpoint_dir):
        raise ValueError("evaluating a policy method needs checkpoint_dir "
                         "(a prior training run directory)")

    problem = make_problem(config.problem, x_mode=config.x_mode,
                           embedding_seed=config.embedding_seed)
    problem = _apply_overrides(problem, config.problem_overrides, "problem")

    ppo = _apply_overrides(PPOConfig(), config.ppo_overrides, "ppo")
    if ppo.psi_lr is None:
        ppo = replace(ppo, psi_lr=default_psi_lr(problem))
    baseline = _apply_overrides(BaselineConfig(kind=config.method),
                                config.baseline_overrides, "baseline")
    if baseline.epsilon is None:
        baseline = replace(baseline, epsilon=problem.epsilon_default)
    if baseline.psi_lr is None:
        baseline = replace(baseline, psi_lr=default_psi_lr(problem))

    eval_episodes = config.eval_episodes
    if eval_episodes is None:
        eval_episodes = default_eval_episodes(problem)

    snapshot = {
        "problem": config.problem,
        "method": config.method,
        "mode": config.mode,
        "seeds": list(config.seeds),
        "eval_episodes": eval_episodes,
        "train_iterations": config.train_iterations,
        "x_mode": config.x_mode,
        "embedding_seed": config.embedding_seed,
        "problem_overrides": dict(config.problem_overrides),
        "checkpoint_dir": config.checkpoint_dir,
        "ppo": asdict(ppo),
        "baseline": asdict(baseline),
    }
    return problem, ppo, baseline, eval_episodes, snapshot


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_tsv(path, columns, rows):
    lines = ["\t".join(columns)]
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_tsv(path):
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split("\t")
    return columns, [line.split("\t") for line in lines[1:]]


def _eval_seed(seed):
    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def _baseline_episode_seed(seed, episode):
    return int(np.random.SeedSequence([seed, 1, episode]).generate_state(1)[0])


def _persist_episodes(run_dir, per_seed_records):
    ep_dir = run_dir / "episodes"
    ep_dir.mkdir(exist_ok=True)
    summary, psi_rows = [], []
    for seed, records in per_seed_records:
        for i, rec in enumerate(records):
            trace_rows = [(c + 1, v)
                          for c, v in enumerate(rec.objective_trace_at_calls)]
            _write_tsv(ep_dir / f"seed{seed}_ep{i:03d}.tsv",
                       ("call", "objective"), trace_rows)
            final = (rec.objective_trace_at_calls[-1]
                     if rec.objective_trace_at_calls else float("nan"))
            summary.append((seed, i, rec.outcome, rec.total_calls,
                            rec.n_evaluations, rec.episode_return, final))
            if rec.psi_final is not None:
                psi_rows.append((seed, i) + tuple(float(p) for p in rec.psi_final))
    _write_tsv(run_dir / "episodes.tsv",
               ("seed", "episode", "outcome", "total_calls", "n_evaluations",
                "episode_return", "final_objective"), summary)
    if psi_rows:
        dim = len(psi_rows[0]) - 2
        _write_tsv(run_dir / "psi_final.tsv",
                   ("seed", "episode") + tuple(f"psi{d}" for d in range(dim)),
                   psi_rows)


def _persist_metrics(run_dir, per_seed_records):
    pooled = [rec for _, records in per_seed_records for rec in records]
    if not pooled:
        return None
    report = metrics_report(pooled)
    _write_tsv(run_dir / "metrics.tsv", ("metric", "value"),
               [("anc", report.anc), ("anc_std", report.anc_std),
                ("anc_min", report.anc_min), ("anc_max", report.anc_max),
                ("episode_count", report.episode_count)])
    _write_tsv(run_dir / "amo_curve.tsv",
               ("k", "amo", "std", "min", "max", "contributors"),
               [(p.k, p.value, p.std, p.vmin, p.vmax, p.contributors)
                for p in report.amo])
    anc_rows = []
    for seed, records in per_seed_records:
        if records:
            calls = [r.total_calls for r in records]
            anc_rows.append((seed, float(np.mean(calls)), float(np.std(calls)),
                             len(records)))
    anc_rows.append(("all", report.anc, report.anc_std, report.episode_count))
    _write_tsv(run_dir / "anc_by_seed.tsv", ("seed", "anc", "std", "episodes"),
               anc_rows)
    return report


def run_experiment(config):
    """Run per-seed work, persisting as it goes; faults are recorded in the
    manifest and the surviving seeds still produce metrics."""
    problem, ppo, baseline, eval_episodes, snapshot = resolve(config)
    run_dir = Path(config.output_dir
                   or f"runs/{config.problem}_{config.method}")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    is_policy = config.method in POLICY_METHODS
    per_seed_records, train_rows, seed_status = [], [], {}
    for seed in config.seeds:
        started = time.time()
        try:
            records = []
            if is_policy:
                if config.mode == "evaluate":
                    ac = load_policy(Path(config.checkpoint_dir)
                                     / f"policy_seed{seed}.npz")
                else:
                    ac, log = train_policy(problem, config.method, ppo,
                                           config.train_iterations, seed)
                    save_policy(run_dir / f"policy_seed{seed}.npz", ac)
                    train_rows += [(seed,) + tuple(row[c] for c in
                                                   TRAIN_LOG_COLUMNS)
                                   for row in log]
                if config.mode != "train":
                    records = evaluate_policy(ac, problem, ppo, eval_episodes,
                                              _eval_seed(seed))
            else:
                records = [run_baseline(problem, baseline,
                                        _baseline_episode_seed(seed, e))
                           for e in range(eval_episodes)]
            per_seed_records.append((seed, records))
            seed_status[str(seed)] = {"status": "ok", "episodes": len(records),
                                      "seconds": round(time.time() - started, 3)}
        except Exception as e:
            seed_status[str(seed)] = {"status": "fault",
                                      "error": f"{type(e).__name__}: {e}",
                                      "seconds": round(time.time() - started, 3)}

    if train_rows:
        _write_tsv(run_dir / "training_log.tsv", ("seed",) + TRAIN_LOG_COLUMNS,
                   train_rows)
    report = None
    if config.mode != "train":
        _persist_episodes(run_dir, per_seed_records)
        report = _persist_metrics(run_dir, per_seed_records)

    manifest = {
        "problem": config.problem,
        "method": config.method,
        "mode": config.mode,
        "seeds": seed_status,
        "faults": sum(s["status"] == "fault" for s in seed_status.values()),
        "episode_count": sum(len(r) for _, r in per_seed_records),
        "metrics_over_episodes": report.episode_count if report else 0,
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run_dir


def load_run_records(run_dir):
    """Rebuild metric-sufficient episode records from persisted files."""
    run_dir = Path(run_dir)
    _, rows = _read_tsv(run_dir / "episodes.tsv")
    records = []
    for seed, episode, outcome, calls, *_ in rows:
        _, trace_rows = _read_tsv(run_dir / "episodes"
                                  / f"seed{seed}_ep{int(episode):03d}.tsv")
        records.append(SimpleNamespace(
            seed=int(seed), outcome=outcome, total_calls=int(calls),
            objective_trace_at_calls=[float(v) for _, v in trace_rows]))
    return records


def recompute_metrics(run_dir):
    return metrics_report(load_run_records(run_dir))


def export_landscape(problem, lo=-3.0, hi=3.0, resolution=25, n_samples=100,
                     seed=0):
    """Monte-Carlo objective over a square grid for external surface plots.

    Returns an (resolution^2, 3) array of (psi1, psi2, objective), row-major
    over the grid.
    """
    if problem.psi_dim != 2:
        raise ValueError("landscape export needs a 2-dimensional parameter")
    rng = np.random.default_rng(seed)
    xdist = canonical_xdist(problem)
    axis = np.linspace(lo, hi, resolution)
    rows = np.empty((resolution * resolution, 3))
    i = 0
    for p1 in axis:
        for p2 in axis:
            value = oracle_expected_loss(problem, np.array([p1, p2]), xdist,
                                         rng, n=n_samples)
            rows[i] = (p1, p2, value)
            i += 1
    return rows
