"""Non-policy baselines sharing the episode machinery.

Three methods: local surrogate descent retrained at every step from a single
network, the same with a gradient-averaging ensemble, and plain
central-difference gradient descent on the Monte-Carlo objective.
"""

from dataclasses import dataclass

import numpy as np

from . import episodes
from .episodes import (EpisodeRecord, PsiOptimizer, Transition,
                       episode_streams, episode_xdist, reward,
                       termination_kind)
from .problems import objective_value, oracle_expected_loss, sample_x, simulate
from .surrogate import (HistoryBuffer, SurrogateEnsemble, TrustRegion,
                        acquire_data, filter_history,
                        surrogate_objective_gradient)


@dataclass
class BaselineConfig:
    kind: str = "lgso"            # {lgso, lgso_e, numdiff}
    epsilon: float | None = None  # None: problem default, for benchmark parity
    psi_lr: float | None = None   # None: per-problem default
    fd_step: float = 0.05         # numdiff only
    budget_calls: int = 50
    horizon: int = 1000
    n_grad: int = 512
    grad_mode: str = "mean_of_grads"
    buffer_max_calls: int | None = None


def default_psi_lr(problem):
    """Per-problem psi step sizes, set by a solve-rate sweep over seeds."""
    return 0.1 if problem.kind == "rosenbrock" else 0.3


def _check_budgets(config):
    if config.budget_calls < 1 or config.horizon < 1:
        raise ValueError("budgets must be at least 1")


def _resolve(problem, config):
    epsilon = problem.epsilon_default if config.epsilon is None else config.epsilon
    psi_lr = default_psi_lr(problem) if config.psi_lr is None else config.psi_lr
    return epsilon, psi_lr


def _run_surrogate_descent(problem, config, seed, n_members, member_seeds=None):
    _check_budgets(config)
    streams = episode_streams(seed, n_members)
    if member_seeds is None:
        member_seeds = streams.member_seeds
    xdist = episode_xdist(problem, streams.xdist)
    epsilon, psi_lr = _resolve(problem, config)

    buffer = HistoryBuffer(max_calls=config.buffer_max_calls)
    ensemble = SurrogateEnsemble(problem, member_seeds)
    opt = PsiOptimizer(problem.psi0, psi_lr)

    transitions = []
    trace = []
    calls = 0
    outcome = episodes.OUTCOME_TIMESTEP_BUDGET
    for t in range(1, config.horizon + 1):
        psi = opt.psi
        region = TrustRegion(center=psi, epsilon=epsilon)
        acquire_data(problem, region, xdist, buffer, streams.sim)
        calls += 1
        ensemble.reinit()
        ensemble.train(filter_history(buffer, region), streams.train)
        trace.append(oracle_expected_loss(problem, psi, xdist, streams.oracle))

        grad = surrogate_objective_gradient(ensemble, psi, xdist, problem,
                                            config.n_grad, streams.grad,
                                            mode=config.grad_mode)
        psi_new = opt.step(grad)

        done = termination_kind(problem, xdist, psi_new, calls, t,
                                config.budget_calls, config.horizon, streams.oracle)
        transitions.append(Transition(state=None, action=None,
                                      reward=reward(1, done, calls, config.budget_calls),
                                      done_kind=done))
        if done is not None:
            outcome = done
            break

    return EpisodeRecord(transitions=transitions, objective_trace_at_calls=trace,
                         outcome=outcome, total_calls=calls, xdist_used=xdist,
                         seed=seed, n_evaluations=calls * problem.M * problem.N,
                         psi_final=opt.psi)


def run_lgso(problem, config=None, seed=0):
    """Single surrogate, retrained from in-box history at every step."""
    config = config if config is not None else BaselineConfig(kind="lgso")
    return _run_surrogate_descent(problem, config, seed, n_members=1)


def run_lgso_ensemble(problem, config=None, seed=0, n_members=3):
    """As run_lgso with an ensemble, averaging member gradients."""
    config = config if config is not None else BaselineConfig(kind="lgso_e")
    return _run_surrogate_descent(problem, config, seed, n_members=n_members)


def central_difference(f, psi, fd_step):
    """Central-difference gradient of a scalar function of psi."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    psi = np.asarray(psi, dtype=np.float64)
    grad = np.empty_like(psi)
    for d in range(psi.size):
        step = np.zeros_like(psi)
        step[d] = fd_step
        grad[d] = (f(psi + step) - f(psi - step)) / (2.0 * fd_step)
    return grad


def run_numdiff(problem, config=None, seed=0):
    """Central differences on the Monte-Carlo objective, one estimate per step.

    One full gradient estimate counts as one simulator call so the metric
    x-axis lines up across methods; n_evaluations keeps the true count.
    """
    config = config if config is not None else BaselineConfig(kind="numdiff")
    _check_budgets(config)
    streams = episode_streams(seed, 0)
    xdist = episode_xdist(problem, streams.xdist)
    _, psi_lr = _resolve(problem, config)
    opt = PsiOptimizer(problem.psi0, psi_lr)

    def mc_objective(psi_pt):
        xs = sample_x(problem, xdist, problem.N, streams.sim)
        return objective_value(problem, simulate(problem, psi_pt, xs, streams.sim))

    transitions = []
    trace = []
    calls = 0
    n_eval = 0
    outcome = episodes.OUTCOME_TIMESTEP_BUDGET
    for t in range(1, config.horizon + 1):
        psi = opt.psi
        grad = central_difference(mc_objective, psi, config.fd_step)
        calls += 1
        n_eval += 2 * problem.psi_dim * problem.N
        trace.append(oracle_expected_loss(problem, psi, xdist, streams.oracle))
        psi_new = opt.step(grad)

        done = termination_kind(problem, xdist, psi_new, calls, t,
                                config.budget_calls, config.horizon, streams.oracle)
        transitions.append(Transition(state=None, action=None,
                                      reward=reward(1, done, calls, config.budget_calls),
                                      done_kind=done))
        if done is not None:
            outcome = done
            break

    return EpisodeRecord(transitions=transitions, objective_trace_at_calls=trace,
                         outcome=outcome, total_calls=calls, xdist_used=xdist,
                         seed=seed, n_evaluations=n_eval, psi_final=opt.psi)


def run_baseline(problem, config, seed=0):
    if config.kind == "lgso":
        return run_lgso(problem, config, seed)
    if config.kind == "lgso_e":
        return run_lgso_ensemble(problem, config, seed)
    if config.kind == "numdiff":
        return run_numdiff(problem, config, seed)
    raise ValueError(f"unknown baseline kind {config.kind!r}")
