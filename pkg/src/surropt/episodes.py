"""Shared episode bookkeeping: rewards, records, RNG fan-out, psi optimizer.

Baselines and policy rollouts must agree exactly on termination accounting
and metric extraction, so everything both sides touch lives here.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .nets import Adam
from .problems import (canonical_xdist, oracle_expected_loss,
                       sample_parameterized_bounds)

OUTCOME_TERMINATED = "terminated"
OUTCOME_TIMESTEP_BUDGET = "timestep_budget"
OUTCOME_CALL_BUDGET = "call_budget"
_OUTCOMES = (OUTCOME_TERMINATED, OUTCOME_TIMESTEP_BUDGET, OUTCOME_CALL_BUDGET)


def reward(b, done_kind, calls, budget_calls):
    """Per-step reward: -b, plus the end penalty when the episode ends here.

    Ending by objective threshold adds nothing; running out of timesteps adds
    -(budget - calls) - 1; running out of calls adds -1. Either budget ending
    makes the episode's reward sum exactly -(budget + 1).
    """
    if done_kind is not None and done_kind not in _OUTCOMES:
        raise ValueError(f"unknown done kind {done_kind!r}")
    r = -float(b)
    if done_kind == OUTCOME_TIMESTEP_BUDGET:
        r += -(budget_calls - calls) - 1.0
    elif done_kind == OUTCOME_CALL_BUDGET:
        r += -1.0
    return r


@dataclass
class Transition:
    state: object
    action: object
    reward: float
    value_estimate: float = 0.0
    done_kind: str | None = None


@dataclass
class EpisodeRecord:
    transitions: list
    objective_trace_at_calls: list
    outcome: str
    total_calls: int
    xdist_used: object
    seed: int
    n_evaluations: int = 0  # raw simulator record count, for honest comparisons
    psi_final: np.ndarray | None = None

    @property
    def episode_return(self):
        return sum(t.reward for t in self.transitions)


@dataclass
class EpisodeStreams:
    """Independent named RNG streams fanned out from one episode seed."""
    sim: np.random.Generator      # x draws and simulator noise
    train: np.random.Generator    # shuffles and z draws during retraining
    grad: np.random.Generator     # x/z draws for gradient estimates
    oracle: np.random.Generator   # termination checks and objective traces
    policy: np.random.Generator   # action sampling
    member_seeds: list = field(default_factory=list)
    xdist: np.random.Generator = None


def episode_streams(seed, n_members):
    """Fan one episode seed into the named streams above.

    The spawn order is fixed so each stream stays stable when unrelated
    consumers change; the member count only affects the member seed list.
    """
    root = np.random.SeedSequence(seed)
    sim_ss, train_ss, grad_ss, oracle_ss, policy_ss, members_ss, xdist_ss = root.spawn(7)
    member_seeds = [int(ss.generate_state(1)[0]) for ss in members_ss.spawn(n_members)]
    return EpisodeStreams(
        sim=np.random.default_rng(sim_ss),
        train=np.random.default_rng(train_ss),
        grad=np.random.default_rng(grad_ss),
        oracle=np.random.default_rng(oracle_ss),
        policy=np.random.default_rng(policy_ss),
        member_seeds=member_seeds,
        xdist=np.random.default_rng(xdist_ss),
    )


def termination_kind(problem, xdist, psi_new, calls, t, budget_calls, horizon,
                     oracle_rng):
    """Post-step ending check: objective threshold, then call and timestep budgets."""
    if oracle_expected_loss(problem, psi_new, xdist, oracle_rng) <= problem.tau:
        return OUTCOME_TERMINATED
    if calls >= budget_calls:
        return OUTCOME_CALL_BUDGET
    if t >= horizon:
        return OUTCOME_TIMESTEP_BUDGET
    return None


def episode_xdist(problem, rng):
    """The x-distribution this episode runs under (fresh draw if parameterized)."""
    if problem.x_mode == "parameterized":
        return sample_parameterized_bounds(problem, rng)
    return canonical_xdist(problem)


class PsiOptimizer:
    """Adam on the simulator parameters, fed externally computed gradients."""

    def __init__(self, psi0, lr):
        self._psi = Tensor(np.array(psi0, dtype=np.float64), requires_grad=True)
        self._adam = Adam([self._psi], lr=lr)

    @property
    def psi(self):
        return self._psi.data.copy()

    def step(self, grad):
        self._psi.grad = np.asarray(grad, dtype=np.float64).reshape(self._psi.data.shape)
        self._adam.step()
        if not np.all(np.isfinite(self._psi.data)):
            raise ValueError("non-finite psi: optimization diverged")
        return self.psi
