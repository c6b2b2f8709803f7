"""Policy/instinct agent: Gaussian actor-critic plus a frozen instinct module.

The instinct network never changes during an agent's lifetime; it emits a
per-dimension suppression signal s in [0, 1] and an instinct action, and the
action applied to the world is the convex mix s * a_p + (1 - s) * a_i. The
reinforcement-learning update sees the raw sampled policy action a_p, not the
mixed action, so the policy is trained on what it actually proposed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .neural import LayerSpec, MlpNet

OBS_DIM = 10
ACTION_DIM = 2
ACTION_BOUND = 0.1
SIGMA_INIT = 0.05
LOG_SIGMA_FLOOR = math.log(1e-6)

ACTOR_LAYERS = (
    LayerSpec(OBS_DIM, 100, "tanh"),
    LayerSpec(100, 100, "tanh"),
    LayerSpec(100, ACTION_DIM, "scaled_tanh", ACTION_BOUND),
)
CRITIC_LAYERS = (
    LayerSpec(OBS_DIM, 100, "tanh"),
    LayerSpec(100, 100, "tanh"),
    LayerSpec(100, 1, "linear"),
)
INSTINCT_TRUNK_LAYERS = (
    LayerSpec(OBS_DIM, 100, "relu"),
    LayerSpec(100, 100, "relu"),
)
SUPPRESSION_HEAD_LAYERS = (LayerSpec(100, ACTION_DIM, "sigmoid"),)
INSTINCT_ACTION_HEAD_LAYERS = (LayerSpec(100, ACTION_DIM, "scaled_tanh", ACTION_BOUND),)

MODE_STOCHASTIC = "stochastic"
MODE_DETERMINISTIC = "deterministic"

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyParams:
    """Actor-critic networks plus per-dimension log action noise.

    log_sigma is trainable alongside the network weights; it is floored at
    log(1e-6) to keep densities finite (sigma_clamped records that this
    happened).
    """

    actor: MlpNet
    critic: MlpNet
    log_sigma: np.ndarray
    sigma_clamped: bool = field(default=False, compare=False)

    @classmethod
    def kaiming(cls, rng: np.random.Generator, sigma_init: float = SIGMA_INIT) -> "PolicyParams":
        return cls(
            actor=MlpNet.kaiming(ACTOR_LAYERS, rng),
            critic=MlpNet.kaiming(CRITIC_LAYERS, rng),
            log_sigma=np.full(ACTION_DIM, math.log(sigma_init)),
        )

    @property
    def parameter_count(self) -> int:
        return self.actor.parameter_count + self.critic.parameter_count + ACTION_DIM

    def sigma(self) -> np.ndarray:
        if (self.log_sigma < LOG_SIGMA_FLOOR).any():
            self.log_sigma = np.maximum(self.log_sigma, LOG_SIGMA_FLOOR)
            self.sigma_clamped = True
        return np.exp(self.log_sigma)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.actor.flatten(), self.critic.flatten(), self.log_sigma])

    def set_flat(self, flat: np.ndarray):
        na = self.actor.parameter_count
        nc = self.critic.parameter_count
        self.actor.set_flat(flat[:na])
        self.critic.set_flat(flat[na : na + nc])
        self.log_sigma = flat[na + nc :].copy()

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "PolicyParams":
        p = cls(
            actor=MlpNet.zeros(ACTOR_LAYERS),
            critic=MlpNet.zeros(CRITIC_LAYERS),
            log_sigma=np.zeros(ACTION_DIM),
        )
        p.set_flat(np.asarray(flat, dtype=np.float64))
        return p

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            actor=self.actor.copy(),
            critic=self.critic.copy(),
            log_sigma=self.log_sigma.copy(),
            sigma_clamped=self.sigma_clamped,
        )


@dataclass
class InstinctParams:
    """ReLU trunk with two parallel heads: suppression (sigmoid) and action."""

    trunk: MlpNet
    suppress_head: MlpNet
    action_head: MlpNet

    @classmethod
    def kaiming(cls, rng: np.random.Generator) -> "InstinctParams":
        return cls(
            trunk=MlpNet.kaiming(INSTINCT_TRUNK_LAYERS, rng),
            suppress_head=MlpNet.kaiming(SUPPRESSION_HEAD_LAYERS, rng),
            action_head=MlpNet.kaiming(INSTINCT_ACTION_HEAD_LAYERS, rng),
        )

    @property
    def parameter_count(self) -> int:
        return (
            self.trunk.parameter_count
            + self.suppress_head.parameter_count
            + self.action_head.parameter_count
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.trunk.flatten(), self.suppress_head.flatten(), self.action_head.flatten()]
        )

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "InstinctParams":
        flat = np.asarray(flat, dtype=np.float64)
        inst = cls(
            trunk=MlpNet.zeros(INSTINCT_TRUNK_LAYERS),
            suppress_head=MlpNet.zeros(SUPPRESSION_HEAD_LAYERS),
            action_head=MlpNet.zeros(INSTINCT_ACTION_HEAD_LAYERS),
        )
        nt = inst.trunk.parameter_count
        ns = inst.suppress_head.parameter_count
        inst.trunk.set_flat(flat[:nt])
        inst.suppress_head.set_flat(flat[nt : nt + ns])
        inst.action_head.set_flat(flat[nt + ns :])
        return inst

    def copy(self) -> "InstinctParams":
        return InstinctParams(
            trunk=self.trunk.copy(),
            suppress_head=self.suppress_head.copy(),
            action_head=self.action_head.copy(),
        )

    def forward_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Suppression signals (N, 2) in [0,1] and instinct actions (N, 2)."""
        h = self.trunk.forward_batch(X)
        return self.suppress_head.forward_batch(h), self.action_head.forward_batch(h)

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, a_i = self.forward_batch(np.asarray(obs, dtype=np.float64).reshape(1, -1))
        return s[0], a_i[0]

    def forward_with_cache(self, X: np.ndarray):
        _, trunk_cache = self.trunk.forward_batch(X, want_cache=True)
        h = trunk_cache[-1]
        s, s_cache = self.suppress_head.forward_batch(h, want_cache=True)
        a_i, a_cache = self.action_head.forward_batch(h, want_cache=True)
        return s, a_i, (trunk_cache, s_cache, a_cache)

    def backward_batch(self, cache, dS: np.ndarray, dAI: np.ndarray) -> np.ndarray:
        """Gradients of sum(s*dS) + sum(a_i*dAI), flattened in flatten() order."""
        trunk_cache, s_cache, a_cache = cache
        g_s, dh_s = self.suppress_head.backward_batch(s_cache, dS, return_dx=True)
        g_a, dh_a = self.action_head.backward_batch(a_cache, dAI, return_dx=True)
        g_t = self.trunk.backward_batch(trunk_cache, dh_s + dh_a)
        return np.concatenate([g_t, g_s, g_a])


@dataclass(frozen=True)
class ActionRecord:
    """One action decision: raw policy sample, modulation terms, applied action."""

    policy_mean: np.ndarray
    policy_action: np.ndarray  # a_p, the action the RL update is scored on
    suppression: np.ndarray | None
    instinct_action: np.ndarray | None
    final_action: np.ndarray  # a_f, the action the environment receives
    log_prob: float
    value: float


def gaussian_log_prob(actions: np.ndarray, means: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over the last axis."""
    z = (actions - means) * (1.0 / sigma)
    return -0.5 * (z * z).sum(axis=-1) - np.log(sigma).sum() - 0.5 * LOG_2PI * sigma.shape[-1]


def gaussian_entropy(sigma: np.ndarray) -> float:
    """Entropy of a diagonal Gaussian: sum of 0.5*log(2*pi*e*sigma^2)."""
    return float(0.5 * sigma.shape[-1] * (LOG_2PI + 1.0) + np.log(sigma).sum())


def modulate(a_p: np.ndarray, a_i: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Convex per-dimension mix of policy and instinct actions."""
    return s * a_p + (1.0 - s) * a_i


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("network produced non-finite output")


def act(
    policy: PolicyParams,
    instinct: InstinctParams,
    obs: np.ndarray,
    mode: str,
    rng: np.random.Generator | None,
) -> ActionRecord:
    """Full instinct-modulated action selection.

    1. instinct emits suppression s and instinct action a_i;
    2. the actor emits a mean, from which a_p is sampled (or taken directly
       in deterministic mode);
    3-5. a_f = s*a_p + (1-s)*a_i is what the environment will see.
    The log probability is that of a_p under the policy's Gaussian.
    """
    obs = np.asarray(obs, dtype=np.float64)
    mean = policy.actor.forward(obs)
    sigma = policy.sigma()
    if mode == MODE_STOCHASTIC:
        a_p = mean + sigma * rng.standard_normal(ACTION_DIM)
    elif mode == MODE_DETERMINISTIC:
        a_p = mean.copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    s, a_i = instinct.forward(obs)
    a_f = modulate(a_p, a_i, s)
    value = float(policy.critic.forward(obs)[0])
    _check_finite(mean, a_p, s, a_i, a_f, [value])
    log_prob = float(gaussian_log_prob(a_p, mean, sigma))
    return ActionRecord(
        policy_mean=mean,
        policy_action=a_p,
        suppression=s,
        instinct_action=a_i,
        final_action=a_f,
        log_prob=log_prob,
        value=value,
    )


def act_policy_only(
    policy: PolicyParams,
    obs: np.ndarray,
    mode: str,
    rng: np.random.Generator | None,
    output_scale: float = 1.0,
) -> ActionRecord:
    """Action selection without an instinct module: a_f = output_scale * a_p."""
    obs = np.asarray(obs, dtype=np.float64)
    mean = policy.actor.forward(obs)
    sigma = policy.sigma()
    if mode == MODE_STOCHASTIC:
        a_p = mean + sigma * rng.standard_normal(ACTION_DIM)
    elif mode == MODE_DETERMINISTIC:
        a_p = mean.copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a_f = output_scale * a_p
    value = float(policy.critic.forward(obs)[0])
    _check_finite(mean, a_p, a_f, [value])
    log_prob = float(gaussian_log_prob(a_p, mean, sigma))
    return ActionRecord(
        policy_mean=mean,
        policy_action=a_p,
        suppression=None,
        instinct_action=None,
        final_action=a_f,
        log_prob=log_prob,
        value=value,
    )


def log_prob_and_entropy(policy: PolicyParams, obs: np.ndarray, action: np.ndarray) -> tuple[float, float]:
    """Log density of a raw policy action and the policy entropy at obs."""
    obs = np.asarray(obs, dtype=np.float64)
    mean = policy.actor.forward(obs)
    sigma = policy.sigma()
    lp = float(gaussian_log_prob(np.asarray(action, dtype=np.float64), mean, sigma))
    return lp, gaussian_entropy(sigma)
