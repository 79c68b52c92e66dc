"""Actor-critic over the optimization state.

The actor reads (psi, t, l, sigma) and emits a Bernoulli probability for the
call decision, plus (for the adaptive variants) lognormal parameters for the
trust-region size. The critic estimates return, scaled by the horizon so its
raw output stays O(1).
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .nets import MLP, load_checkpoint, save_checkpoint

VARIANTS = ("pi_E", "pi_AL_E", "pi_AL_G_E")
EPS_MIN = 1e-3
EPS_MAX = 10.0
HIDDEN = 256


@dataclass
class PolicyState:
    psi: np.ndarray
    t: int
    l: int
    sigma: float

    def __post_init__(self):
        if self.t < 1 or self.l < 0:
            raise ValueError("need t >= 1 and l >= 0")
        if not (np.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValueError("sigma must be finite and non-negative")


@dataclass
class Action:
    b: int
    epsilon: float | None
    log_prob_b: float
    log_prob_eps: float | None
    epsilon_raw: float | None = None  # pre-clamp sample, where the density is evaluated


class ActorCritic:
    """Separate actor and critic MLPs with one 256-unit hidden layer each."""

    def __init__(self, variant, psi_dim, T, L, epsilon_default, rng):
        if variant not in VARIANTS:
            raise ValueError(f"unknown policy variant {variant!r}")
        in_dim = psi_dim + 3
        out_dim = 1 if variant == "pi_E" else 3
        self.variant = variant
        self.psi_dim = psi_dim
        self.T = T
        self.L = L
        self.epsilon_default = epsilon_default
        self.actor = MLP([in_dim, HIDDEN, out_dim], rng)
        self.critic = MLP([in_dim, HIDDEN, 1], rng)

    @property
    def has_eps_head(self):
        return self.variant != "pi_E"


def state_features(state, T, L):
    """Network input row: psi as-is, t/T, l/L, sigma as-is."""
    psi = np.asarray(state.psi, dtype=np.float64).ravel()
    return np.concatenate([psi, [state.t / T, state.l / L, state.sigma]])[None, :]


def lognormal_log_pdf(value, mu, s):
    return (-math.log(value) - math.log(s) - 0.5 * math.log(2.0 * math.pi)
            - (math.log(value) - mu) ** 2 / (2.0 * s * s))


def _softplus(v):
    return float(np.logaddexp(0.0, v))


def _sigmoid(v):
    return float(np.exp(-np.logaddexp(0.0, -v)))


def actor_distributions(ac, state):
    """Bernoulli call probability, plus (mu, s) of the lognormal size head.

    The mu head is offset by ln(epsilon_default) so an untrained policy starts
    near the problem's known-good trust-region size.
    """
    out = ac.actor.forward(Tensor(state_features(state, ac.T, ac.L))).data[0]
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite actor output")
    p = _sigmoid(out[0])
    if not ac.has_eps_head:
        return p, None
    mu = float(out[1]) + math.log(ac.epsilon_default)
    s = _softplus(out[2])
    return p, (mu, s)


def sample_action(dists, rng, deterministic=False):
    p, eps_params = dists
    if deterministic:
        b = int(p > 0.5)
    else:
        b = int(rng.random() < p)
    log_prob_b = float(np.log(p)) if b else float(np.log1p(-p))
    if eps_params is None:
        return Action(b=b, epsilon=None, log_prob_b=log_prob_b, log_prob_eps=None)
    mu, s = eps_params
    zeta = 0.0 if deterministic else rng.standard_normal()
    raw = float(np.exp(mu + s * zeta))
    return Action(b=b,
                  epsilon=float(np.clip(raw, EPS_MIN, EPS_MAX)),
                  log_prob_b=log_prob_b,
                  log_prob_eps=lognormal_log_pdf(raw, mu, s),
                  epsilon_raw=raw)


def critic_value(ac, state):
    raw = ac.critic.forward(Tensor(state_features(state, ac.T, ac.L))).data[0, 0]
    if not np.isfinite(raw):
        raise ValueError("non-finite critic output")
    return float(raw) * ac.T


def save_policy(path, ac):
    items = [(f"actor.{n}", a) for n, a in ac.actor.named_params()]
    items += [(f"critic.{n}", a) for n, a in ac.critic.named_params()]
    meta = np.array([float(VARIANTS.index(ac.variant)), float(ac.psi_dim),
                     float(ac.T), float(ac.L), ac.epsilon_default])
    items.append(("meta", meta))
    save_checkpoint(path, items)


def load_policy(path):
    items = dict(load_checkpoint(path))
    meta = items.pop("meta")
    ac = ActorCritic(VARIANTS[int(meta[0])], int(meta[1]), int(meta[2]),
                     int(meta[3]), float(meta[4]), np.random.default_rng(0))
    ac.actor.load_state([(n[len("actor."):], a) for n, a in items.items()
                         if n.startswith("actor.")])
    ac.critic.load_state([(n[len("critic."):], a) for n, a in items.items()
                          if n.startswith("critic.")])
    return ac
