"""Policy heads: distributions, sampling, value scaling, checkpoints."""

import math

import numpy as np
import pytest
from scipy import stats

from surropt.policy import (EPS_MAX, EPS_MIN, Action, ActorCritic, PolicyState,
                            actor_distributions, critic_value, load_policy,
                            lognormal_log_pdf, sample_action, save_policy,
                            state_features)


def _ac(variant="pi_AL_E", psi_dim=2, seed=0):
    return ActorCritic(variant, psi_dim, T=1000, L=50, epsilon_default=0.5,
                       rng=np.random.default_rng(seed))


def _state(psi_dim=2):
    return PolicyState(psi=np.full(psi_dim, 0.3), t=10, l=2, sigma=0.07)


def _zero_last_layer(mlp):
    mlp.params()[-2].data[:] = 0.0
    mlp.params()[-1].data[:] = 0.0


def test_state_features_layout():
    st = PolicyState(psi=np.array([1.0, -2.0]), t=100, l=5, sigma=0.25)
    feats = state_features(st, T=1000, L=50)
    assert np.array_equal(feats, [[1.0, -2.0, 0.1, 0.1, 0.25]])


def test_state_validation():
    with pytest.raises(ValueError):
        PolicyState(psi=np.zeros(2), t=0, l=0, sigma=0.0)
    with pytest.raises(ValueError):
        PolicyState(psi=np.zeros(2), t=1, l=-1, sigma=0.0)
    with pytest.raises(ValueError):
        PolicyState(psi=np.zeros(2), t=1, l=0, sigma=-0.1)


def test_zero_final_layer_gives_half_probability_and_softplus_widths():
    ac = _ac()
    _zero_last_layer(ac.actor)
    p, (mu, s) = actor_distributions(ac, _state())
    assert p == 0.5
    assert mu == pytest.approx(math.log(0.5), abs=1e-12)
    assert s == pytest.approx(math.log(2.0), abs=1e-12)  # softplus(0)


def test_saturated_logit_gives_certain_call():
    ac = _ac()
    _zero_last_layer(ac.actor)
    ac.actor.params()[-1].data[0] = 50.0  # first output: call logit
    p, _ = actor_distributions(ac, _state())
    action = sample_action((p, None), np.random.default_rng(0))
    assert action.b == 1
    assert action.log_prob_b == 0.0


def test_actor_output_dims_per_variant():
    assert _ac("pi_E").actor.params()[-1].data.shape == (1,)
    assert _ac("pi_AL_E").actor.params()[-1].data.shape == (3,)
    with pytest.raises(ValueError):
        _ac("pi_X")


def test_pi_e_actions_have_no_epsilon():
    ac = _ac("pi_E")
    dists = actor_distributions(ac, _state())
    assert dists[1] is None
    action = sample_action(dists, np.random.default_rng(1))
    assert action.epsilon is None and action.log_prob_eps is None


def test_bernoulli_log_mass_sums_to_one():
    ac = _ac(seed=3)
    p, _ = actor_distributions(ac, _state())
    assert math.exp(math.log(p)) + math.exp(math.log1p(-p)) == pytest.approx(1.0, abs=1e-12)


def test_lognormal_log_prob_matches_reference_density():
    rng = np.random.default_rng(7)
    for _ in range(50):
        mu = rng.normal(scale=2.0)
        s = float(rng.uniform(0.1, 3.0))
        action = sample_action((0.5, (mu, s)), rng)
        assert action.epsilon_raw > 0.0
        ref = stats.lognorm.logpdf(action.epsilon_raw, s=s, scale=math.exp(mu))
        assert action.log_prob_eps == pytest.approx(ref, abs=1e-10)
        assert EPS_MIN <= action.epsilon <= EPS_MAX


def test_epsilon_clamped_but_density_at_raw_value():
    action = sample_action((0.5, (-20.0, 0.5)), np.random.default_rng(0))
    assert action.epsilon == EPS_MIN
    assert action.epsilon_raw < EPS_MIN
    assert action.log_prob_eps == pytest.approx(
        lognormal_log_pdf(action.epsilon_raw, -20.0, 0.5), abs=1e-12)


def test_sampling_is_deterministic_under_fixed_seed():
    ac = _ac(seed=5)
    dists = actor_distributions(ac, _state())
    a1 = sample_action(dists, np.random.default_rng(42))
    a2 = sample_action(dists, np.random.default_rng(42))
    assert a1 == a2


def test_deterministic_mode_takes_mode_and_median():
    action = sample_action((0.9, (math.log(0.3), 1.0)), np.random.default_rng(0),
                           deterministic=True)
    assert action.b == 1
    assert action.epsilon == pytest.approx(0.3)


def test_critic_value_scaling():
    ac = _ac()
    for p in ac.critic.params():
        p.data[:] = 0.0
    assert critic_value(ac, _state()) == 0.0
    ac.critic.params()[-1].data[:] = -1.0
    assert critic_value(ac, _state()) == -1000.0


def test_non_finite_actor_output_rejected():
    ac = _ac()
    ac.actor.params()[0].data[0, 0] = np.nan
    with pytest.raises(ValueError):
        actor_distributions(ac, _state())


def test_policy_checkpoint_round_trip(tmp_path):
    ac = _ac("pi_AL_G_E", psi_dim=10, seed=9)
    path = tmp_path / "policy.npz"
    save_policy(path, ac)
    back = load_policy(path)
    assert back.variant == "pi_AL_G_E"
    assert (back.psi_dim, back.T, back.L) == (10, 1000, 50)
    assert back.epsilon_default == ac.epsilon_default
    st = PolicyState(psi=np.linspace(-1, 1, 10), t=3, l=1, sigma=0.2)
    assert actor_distributions(back, st) == actor_distributions(ac, st)
    assert critic_value(back, st) == critic_value(ac, st)
