"""Episodic policy training: rollouts, GAE, PPO-clip updates, critic regression.

The environment loop mirrors the baselines exactly; the only new moving part
is the policy deciding when to spend a simulator call and (for the adaptive
variants) how wide to draw the trust region.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import episodes
from .autodiff import Tensor
from .baselines import default_psi_lr
from .episodes import (EpisodeRecord, PsiOptimizer, Transition,
                       episode_streams, episode_xdist, reward,
                       termination_kind)
from .nets import Adam
from .policy import (ActorCritic, PolicyState, actor_distributions,
                     critic_value, sample_action, state_features)
from .problems import oracle_expected_loss
from .surrogate import (HistoryBuffer, SurrogateEnsemble, TrustRegion,
                        acquire_data, filter_history,
                        surrogate_objective_gradient, uncertainty_sigma,
                        warm_start_dataset)

N_MEMBERS = 3


@dataclass
class PPOConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    discount: float = 1.0
    kl_threshold_b: float = 3e-3
    kl_threshold_eps: float = 1e-2
    max_actor_updates: int = 20
    actor_lr: float = 3e-4
    critic_lr: float = 1e-4
    critic_mse_target: float = 30.0
    max_critic_updates: int = 10
    episodes_per_iteration: int = 16
    horizon: int = 1000       # T
    budget_calls: int = 50    # L
    psi_lr: float | None = None
    n_grad: int = 512
    sigma_draws: int = 512
    grad_mode: str = "mean_of_grads"
    buffer_max_calls: int | None = None
    deterministic_eval: bool = False  # debugging only; evaluation samples


def default_episodes_per_iteration(problem):
    return 10 if problem.kind == "submanifold_hump" else 16


def compute_gae(rewards, values, bootstrap_value, gamma, lam):
    """Advantages by the exponentially weighted TD-error recursion, plus
    discounted reward suffix sums as critic targets."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ValueError("rewards and values must be equal-length vectors")
    n = len(rewards)
    advantages = np.empty(n)
    returns = np.empty(n)
    last_adv = 0.0
    next_value = bootstrap_value
    next_return = bootstrap_value
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        last_adv = delta + gamma * lam * last_adv
        advantages[t] = last_adv
        next_value = values[t]
        next_return = rewards[t] + gamma * next_return
        returns[t] = next_return
    return advantages, returns


def run_episode(ac, problem, config, seed, mode="train", ensemble=None,
                buffer=None, episode_index=0):
    """One rollout. A private ensemble and buffer are created unless the
    caller passes persistent ones (the globally warm-started variant)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    streams = episode_streams(seed, N_MEMBERS)
    xdist = episode_xdist(problem, streams.xdist)
    psi_lr = default_psi_lr(problem) if config.psi_lr is None else config.psi_lr
    if ensemble is None:
        ensemble = SurrogateEnsemble(problem, streams.member_seeds)
        buffer = HistoryBuffer(max_calls=config.buffer_max_calls)
    warm_start = ac.variant == "pi_AL_G_E"
    opt = PsiOptimizer(problem.psi0, psi_lr)
    deterministic = mode == "eval" and config.deterministic_eval

    transitions = []
    trace = []
    calls = 0
    outcome = episodes.OUTCOME_TIMESTEP_BUDGET
    for t in range(1, config.horizon + 1):
        psi = opt.psi
        sigma = uncertainty_sigma(ensemble, psi, xdist, config.sigma_draws,
                                  streams.grad)
        state = PolicyState(psi=psi, t=t, l=calls, sigma=sigma)
        action = sample_action(actor_distributions(ac, state), streams.policy,
                               deterministic)
        value = critic_value(ac, state)

        if action.b == 1:
            epsilon = action.epsilon if ac.has_eps_head else problem.epsilon_default
            region = TrustRegion(center=psi, epsilon=epsilon)
            acquire_data(problem, region, xdist, buffer, streams.sim,
                         episode_index=episode_index)
            calls += 1
            ensemble.reinit()
            if warm_start:
                dataset = warm_start_dataset(buffer, region,
                                             buffer.blocks[-1].call_index,
                                             streams.train)
            else:
                dataset = filter_history(buffer, region)
            ensemble.train(dataset, streams.train)
            trace.append(oracle_expected_loss(problem, psi, xdist, streams.oracle))

        grad = surrogate_objective_gradient(ensemble, psi, xdist, problem,
                                            config.n_grad, streams.grad,
                                            mode=config.grad_mode)
        psi_new = opt.step(grad)

        done = termination_kind(problem, xdist, psi_new, calls, t,
                                config.budget_calls, config.horizon,
                                streams.oracle)
        transitions.append(Transition(state=state, action=action,
                                      reward=reward(action.b, done, calls,
                                                    config.budget_calls),
                                      value_estimate=value, done_kind=done))
        if done is not None:
            outcome = done
            break

    return EpisodeRecord(transitions=transitions, objective_trace_at_calls=trace,
                         outcome=outcome, total_calls=calls, xdist_used=xdist,
                         seed=seed, n_evaluations=calls * problem.M * problem.N,
                         psi_final=opt.psi)


def _build_batch(records, ac, config):
    feats, b, eps_raw, old_lp_b, old_lp_e = [], [], [], [], []
    advantages, returns = [], []
    for rec in records:
        feats.extend(state_features(tr.state, ac.T, ac.L)[0]
                     for tr in rec.transitions)
        b.extend(tr.action.b for tr in rec.transitions)
        eps_raw.extend(tr.action.epsilon_raw if ac.has_eps_head else 1.0
                       for tr in rec.transitions)
        old_lp_b.extend(tr.action.log_prob_b for tr in rec.transitions)
        old_lp_e.extend(tr.action.log_prob_eps if ac.has_eps_head else 0.0
                        for tr in rec.transitions)
        adv, ret = compute_gae([tr.reward for tr in rec.transitions],
                               [tr.value_estimate for tr in rec.transitions],
                               0.0, config.discount, config.gae_lambda)
        advantages.append(adv)
        returns.append(ret)
    return {
        "features": np.array(feats),
        "b": np.array(b, dtype=np.float64),
        "eps_raw": np.array(eps_raw, dtype=np.float64),
        "old_lp_b": np.array(old_lp_b, dtype=np.float64),
        "old_lp_e": np.array(old_lp_e, dtype=np.float64),
        "advantages": np.concatenate(advantages),
        "returns": np.concatenate(returns),
    }


def _clip_objective(ratio, advantage, clip):
    """min(ratio * A, clip(ratio) * A) per transition, on the tape."""
    clipped = ratio.minimum(1.0 + clip).maximum(1.0 - clip)
    return (ratio * advantage).minimum(clipped * advantage)


def _actor_log_probs(ac, out, batch):
    """Tape log-probabilities of the batch's sampled actions under `out`.

    Columns are picked with constant selector matmuls so gradients route
    through the existing tape ops.
    """
    n_out = out.data.shape[1]
    sel = np.eye(n_out)
    logit = out @ sel[:, 0:1]
    b_col = batch["b"][:, None]
    lp_b = ((logit * -1.0).softplus() * b_col
            + logit.softplus() * (1.0 - b_col)) * -1.0
    if not ac.has_eps_head:
        return lp_b, None
    mu = out @ sel[:, 1:2] + math.log(ac.epsilon_default)
    s = (out @ sel[:, 2:3]).softplus()
    ln_v = np.log(batch["eps_raw"])[:, None]
    lp_e = ((mu - ln_v).square() / (s.square() * 2.0) + s.log()
            + (0.5 * math.log(2.0 * math.pi) + ln_v)) * -1.0
    return lp_b, lp_e


def ppo_actor_update(ac, batch, config, optimizer=None):
    """Clipped-surrogate ascent with per-head KL early stopping.

    Per update: one Adam step on the mean clipped objective (size head only
    on rows that called), then the empirical KL per head against the rollout
    policy; stop once either head's |KL| exceeds its threshold.
    """
    if optimizer is None:
        optimizer = Adam(ac.actor.params(), lr=config.actor_lr)
    adv = batch["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    adv_col = adv[:, None]
    call_mask = (batch["b"] == 1.0)[:, None].astype(np.float64)
    old_lp_b = batch["old_lp_b"][:, None]
    old_lp_e = batch["old_lp_e"][:, None] * call_mask
    feats = Tensor(batch["features"])

    updates = 0
    kl_b = kl_e = 0.0
    for _ in range(config.max_actor_updates):
        out = ac.actor.forward(feats)
        lp_b, lp_e = _actor_log_probs(ac, out, batch)
        ratio_b = (lp_b - old_lp_b).exp()
        if not np.all(np.isfinite(ratio_b.data)):
            raise ValueError("non-finite probability ratio: policy diverged")
        objective = _clip_objective(ratio_b, adv_col, config.clip)
        if lp_e is not None:
            ratio_e = ((lp_e - old_lp_e) * call_mask).exp()
            if not np.all(np.isfinite(ratio_e.data)):
                raise ValueError("non-finite probability ratio: policy diverged")
            objective = objective + _clip_objective(ratio_e, adv_col, config.clip) * call_mask
        loss = objective.mean() * -1.0
        ac.actor.zero_grad()
        loss.backward()
        optimizer.step()
        updates += 1

        out_new = ac.actor.forward(feats)
        lp_b_new, lp_e_new = _actor_log_probs(ac, out_new, batch)
        kl_b = float(np.mean(old_lp_b - lp_b_new.data))
        if lp_e_new is not None and call_mask.sum() > 0:
            kl_e = float(np.sum((old_lp_e - lp_e_new.data) * call_mask)
                         / call_mask.sum())
        if abs(kl_b) > config.kl_threshold_b or abs(kl_e) > config.kl_threshold_eps:
            break
    return updates, kl_b, kl_e


def critic_update(ac, batch, config, optimizer=None):
    """Regress horizon-scaled values onto returns until the MSE target or the
    update cap is hit; the target is checked before every update."""
    if optimizer is None:
        optimizer = Adam(ac.critic.params(), lr=config.critic_lr)
    feats = Tensor(batch["features"])
    targets = batch["returns"][:, None]
    updates = 0
    for _ in range(config.max_critic_updates):
        out = ac.critic.forward(feats)
        mse = float(np.mean((out.data * ac.T - targets) ** 2))
        if mse <= config.critic_mse_target:
            return updates, mse
        loss = (out * float(ac.T) - targets).square().mean()
        ac.critic.zero_grad()
        loss.backward()
        optimizer.step()
        updates += 1
    out = ac.critic.forward(feats)
    return updates, float(np.mean((out.data * ac.T - targets) ** 2))


def _mean_call_prob(ac, features):
    out = ac.actor.forward(Tensor(features)).data
    return float(np.mean(np.exp(-np.logaddexp(0.0, -out[:, 0]))))


def make_policy(problem, variant, config, rng):
    return ActorCritic(variant, problem.psi_dim, config.horizon,
                       config.budget_calls, problem.epsilon_default, rng)


def train_policy(problem, variant, config, iterations, seed):
    """PPO outer loop; returns the policy and one log record per iteration."""
    master = np.random.SeedSequence(seed)
    policy_ss, episode_ss, global_ss = master.spawn(3)
    ac = make_policy(problem, variant, config, np.random.default_rng(policy_ss))
    actor_opt = Adam(ac.actor.params(), lr=config.actor_lr)
    critic_opt = Adam(ac.critic.params(), lr=config.critic_lr)

    ensemble = buffer = None
    if variant == "pi_AL_G_E":
        seeds = [int(s.generate_state(1)[0]) for s in global_ss.spawn(N_MEMBERS)]
        ensemble = SurrogateEnsemble(problem, seeds)
        buffer = HistoryBuffer(max_calls=config.buffer_max_calls)

    log = []
    episode_counter = 0
    for iteration in range(iterations):
        records = []
        for ss in episode_ss.spawn(config.episodes_per_iteration):
            records.append(run_episode(ac, problem, config,
                                       seed=int(ss.generate_state(1)[0]),
                                       mode="train", ensemble=ensemble,
                                       buffer=buffer,
                                       episode_index=episode_counter))
            episode_counter += 1
        batch = _build_batch(records, ac, config)
        mean_call_prob = _mean_call_prob(ac, batch["features"])
        actor_updates, kl_b, kl_e = ppo_actor_update(ac, batch, config, actor_opt)
        critic_updates, critic_mse = critic_update(ac, batch, config, critic_opt)

        calls = [rec.total_calls for rec in records]
        log.append({
            "iteration": iteration,
            "mean_calls": float(np.mean(calls)),
            "min_calls": int(np.min(calls)),
            "max_calls": int(np.max(calls)),
            "mean_return": float(np.mean([rec.episode_return for rec in records])),
            "mean_call_prob": mean_call_prob,
            "critic_mse": critic_mse,
            "actor_updates": actor_updates,
            "critic_updates": critic_updates,
            "kl_b": kl_b,
            "kl_eps": kl_e,
            "terminated": sum(r.outcome == episodes.OUTCOME_TERMINATED
                              for r in records),
        })
    return ac, log


def evaluate_policy(ac, problem, config, n_episodes, seed):
    """Evaluation rollouts (actions sampled, no updates); the globally
    warm-started variant shares one fresh ensemble and buffer across them."""
    master = np.random.SeedSequence(seed)
    ensemble = buffer = None
    if ac.variant == "pi_AL_G_E":
        seeds = [int(s.generate_state(1)[0])
                 for s in master.spawn(1)[0].spawn(N_MEMBERS)]
        ensemble = SurrogateEnsemble(problem, seeds)
        buffer = HistoryBuffer(max_calls=config.buffer_max_calls)
    records = []
    for i, ss in enumerate(master.spawn(n_episodes)):
        records.append(run_episode(ac, problem, config,
                                   seed=int(ss.generate_state(1)[0]),
                                   mode="eval", ensemble=ensemble,
                                   buffer=buffer, episode_index=i))
    return records
