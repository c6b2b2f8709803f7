"""Inner-loop reinforcement learning: rollouts, advantage estimation, PPO.

The update trains the actor, the critic and the log action noise jointly with
one Adam optimizer, using the clipped surrogate objective on the raw policy
actions. Instinct parameters are never touched here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import agent as agent_mod
from .agent import (
    ACTION_DIM,
    MODE_DETERMINISTIC,
    MODE_STOCHASTIC,
    InstinctParams,
    PolicyParams,
    act,
    act_policy_only,
    gaussian_entropy,
    gaussian_log_prob,
)
from .envsim import DONE_GOAL, REASON_GOAL, LockstepEnvs, NavEnv, WorldConfig
from .errors import ConfigError, NumericError
from .neural import AdamState, adam_step


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    clip: float = 0.2
    epochs: int = 4
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.01
    gae_lambda: float = 0.95
    max_grad_norm: float | None = None
    normalize_advantages: bool = True
    minibatch_size: int | None = None
    updates_per_task: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if self.clip <= 0.0:
            raise ConfigError("clip must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must be in [0, 1]")
        if self.updates_per_task < 1:
            raise ConfigError("updates_per_task must be >= 1")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1 when set")


@dataclass
class RolloutBatch:
    """Fixed-budget batch of transitions with episode segmentation.

    bootstrap_values[e] is the value the tail of episode e bootstraps with:
    0 for goal-terminal episodes, the critic's estimate of the final state
    for horizon-hit or budget-cut episodes.
    """

    obs: np.ndarray
    policy_actions: np.ndarray
    final_actions: np.ndarray
    log_prob_old: np.ndarray
    value_old: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    violations: np.ndarray
    episode_bounds: np.ndarray  # (E, 2) start/end indices
    bootstrap_values: np.ndarray  # (E,)

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @property
    def episode_count(self) -> int:
        return self.episode_bounds.shape[0]

    @property
    def violation_count(self) -> int:
        return int(self.violations.sum())


def collect_rollout(
    env: NavEnv,
    policy: PolicyParams,
    instinct: InstinctParams | None,
    goal_index: int,
    budget: int,
    rng: np.random.Generator,
    policy_scale: float = 1.0,
    traj_log=None,
) -> RolloutBatch:
    """Run stochastic episodes until exactly `budget` transitions are stored.

    Episodes reset to the origin whenever they finish; the final episode is
    cut mid-flight if the budget lands inside it. With instinct=None the
    applied action is policy_scale * a_p.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    d = env.config.obs_dim
    obs_buf = np.empty((budget, d))
    ap_buf = np.empty((budget, ACTION_DIM))
    af_buf = np.empty((budget, ACTION_DIM))
    logp_buf = np.empty(budget)
    val_buf = np.empty(budget)
    rew_buf = np.empty(budget)
    done_buf = np.zeros(budget, dtype=bool)
    viol_buf = np.zeros(budget, dtype=bool)
    bounds: list[tuple[int, int]] = []
    boots: list[float] = []
    pending: list[tuple[int, np.ndarray]] = []  # (episode index, obs to bootstrap from)

    obs = env.reset(goal_index)
    ep_start = 0
    episode_id = 0
    step_in_ep = 0
    for t in range(budget):
        if instinct is not None:
            rec = act(policy, instinct, obs, MODE_STOCHASTIC, rng)
        else:
            rec = act_policy_only(policy, obs, MODE_STOCHASTIC, rng, policy_scale)
        out = env.step(rec.final_action)
        obs_buf[t] = obs
        ap_buf[t] = rec.policy_action
        af_buf[t] = rec.final_action
        logp_buf[t] = rec.log_prob
        val_buf[t] = rec.value
        rew_buf[t] = out.reward
        done_buf[t] = out.done
        viol_buf[t] = out.violation
        if traj_log is not None:
            traj_log.add(
                episode_id,
                step_in_ep,
                out.observation[0],
                out.observation[1],
                rec.final_action[0],
                rec.final_action[1],
                out.reward,
                out.violation,
                out.done_reason,
            )
        step_in_ep += 1
        if out.done:
            bounds.append((ep_start, t + 1))
            if out.done_reason == DONE_GOAL:
                boots.append(0.0)
            else:
                boots.append(math.nan)
                pending.append((len(bounds) - 1, out.observation))
            ep_start = t + 1
            episode_id += 1
            step_in_ep = 0
            if t + 1 < budget:
                obs = env.reset(goal_index)
        elif t + 1 == budget:
            bounds.append((ep_start, t + 1))
            boots.append(math.nan)
            pending.append((len(bounds) - 1, out.observation))
        else:
            obs = out.observation

    boots_arr = np.asarray(boots)
    if pending:
        stack = np.stack([o for _, o in pending])
        vals = policy.critic.forward_batch(stack)[:, 0]
        for (ep_idx, _), v in zip(pending, vals):
            boots_arr[ep_idx] = v
    return RolloutBatch(
        obs=obs_buf,
        policy_actions=ap_buf,
        final_actions=af_buf,
        log_prob_old=logp_buf,
        value_old=val_buf,
        rewards=rew_buf,
        dones=done_buf,
        violations=viol_buf,
        episode_bounds=np.asarray(bounds, dtype=np.int64),
        bootstrap_values=boots_arr,
    )


def collect_rollouts_lockstep(
    world: WorldConfig,
    policy: PolicyParams,
    instinct: InstinctParams | None,
    goal_indices,
    budget: int,
    rng: np.random.Generator,
    policy_scale: float = 1.0,
) -> list[RolloutBatch]:
    """Collect one rollout per goal simultaneously, sharing the same policy.

    All lanes use the policy as-is for the whole collection (it is not
    updated mid-rollout), so their network evaluations can be batched.
    Action noise is pre-drawn as (budget, lanes, 2) from the given rng.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    goal_indices = list(goal_indices)
    L = len(goal_indices)
    envs = LockstepEnvs(world, goal_indices)
    d = world.obs_dim
    sigma = policy.sigma()
    noise = rng.standard_normal((budget, L, ACTION_DIM))

    obs_buf = np.empty((budget, L, d))
    ap_buf = np.empty((budget, L, ACTION_DIM))
    af_buf = np.empty((budget, L, ACTION_DIM))
    logp_buf = np.empty((budget, L))
    val_buf = np.empty((budget, L))
    rew_buf = np.empty((budget, L))
    done_buf = np.zeros((budget, L), dtype=bool)
    viol_buf = np.zeros((budget, L), dtype=bool)
    bounds: list[list[tuple[int, int]]] = [[] for _ in range(L)]
    boots: list[list[float]] = [[] for _ in range(L)]
    pending: list[tuple[int, int, np.ndarray]] = []  # (lane, episode index, obs)
    ep_start = [0] * L

    actor = policy.actor
    critic = policy.critic
    # Same term grouping as gaussian_log_prob so stored log-probs are
    # bit-compatible with the PPO recomputation.
    inv_sigma = 1.0 / sigma
    log_sigma_sum = np.log(sigma).sum()
    half_log2pi_n = 0.5 * agent_mod.LOG_2PI * ACTION_DIM
    for t in range(budget):
        X = envs.current_obs
        mu = actor.forward_batch(X)
        a_p = mu + sigma * noise[t]
        if instinct is not None:
            s, a_i = instinct.forward_batch(X)
            a_f = s * a_p + (1.0 - s) * a_i
        else:
            a_f = policy_scale * a_p
        v = critic.forward_batch(X)[:, 0]
        post_obs, rewards, viols, dones, reasons = envs.step(a_f)

        obs_buf[t] = X
        ap_buf[t] = a_p
        af_buf[t] = a_f
        z = (a_p - mu) * inv_sigma
        logp_buf[t] = -0.5 * (z * z).sum(axis=1) - log_sigma_sum - half_log2pi_n
        val_buf[t] = v
        rew_buf[t] = rewards
        done_buf[t] = dones
        viol_buf[t] = viols

        last = t + 1 == budget
        if dones.any() or last:
            for lane in range(L):
                if dones[lane]:
                    bounds[lane].append((ep_start[lane], t + 1))
                    if reasons[lane] == REASON_GOAL:
                        boots[lane].append(0.0)
                    else:
                        boots[lane].append(math.nan)
                        pending.append((lane, len(bounds[lane]) - 1, post_obs[lane].copy()))
                    ep_start[lane] = t + 1
                elif last:
                    bounds[lane].append((ep_start[lane], t + 1))
                    boots[lane].append(math.nan)
                    pending.append((lane, len(bounds[lane]) - 1, post_obs[lane].copy()))

    # Checked once at the end: NaNs propagate harmlessly through the world
    # math, so a single sweep catches any numeric blow-up in the nets.
    if not (np.isfinite(af_buf).all() and np.isfinite(val_buf).all() and np.isfinite(logp_buf).all()):
        raise NumericError("non-finite network output during rollout")

    boot_arrs = [np.asarray(b) for b in boots]
    if pending:
        stack = np.stack([o for _, _, o in pending])
        vals = critic.forward_batch(stack)[:, 0]
        for (lane, ep_idx, _), bv in zip(pending, vals):
            boot_arrs[lane][ep_idx] = bv

    batches = []
    for lane in range(L):
        batches.append(
            RolloutBatch(
                obs=obs_buf[:, lane].copy(),
                policy_actions=ap_buf[:, lane].copy(),
                final_actions=af_buf[:, lane].copy(),
                log_prob_old=logp_buf[:, lane].copy(),
                value_old=val_buf[:, lane].copy(),
                rewards=rew_buf[:, lane].copy(),
                dones=done_buf[:, lane].copy(),
                violations=viol_buf[:, lane].copy(),
                episode_bounds=np.asarray(bounds[lane], dtype=np.int64),
                bootstrap_values=boot_arrs[lane],
            )
        )
    return batches


def compute_returns_advantages(
    batch: RolloutBatch, values: np.ndarray, config: PpoConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns and GAE advantages, per episode segment.

    Returns bootstrap with the episode's bootstrap value; advantages use the
    standard exponentially weighted TD-residual sum with the same tail value.
    Advantages are normalized to zero mean / unit variance over the batch
    when the config asks for it.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (batch.n,):
        raise ValueError(f"values must have shape ({batch.n},), got {values.shape}")
    gamma = config.gamma
    lam = config.gae_lambda
    rewards = batch.rewards
    returns = np.empty(batch.n)
    advantages = np.empty(batch.n)
    for (start, end), bootstrap in zip(batch.episode_bounds, batch.bootstrap_values):
        g = bootstrap
        a = 0.0
        v_next = bootstrap
        for t in range(end - 1, start - 1, -1):
            r = rewards[t]
            g = r + gamma * g
            delta = r + gamma * v_next - values[t]
            a = delta + gamma * lam * a
            returns[t] = g
            advantages[t] = a
            v_next = values[t]
    if config.normalize_advantages:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return returns, advantages


def _surrogate_loss_and_grads(
    policy: PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: PpoConfig,
) -> tuple[np.ndarray, dict]:
    """Clipped-PPO loss gradients w.r.t. (actor, critic, log_sigma), flattened.

    The total loss is actor + value_loss_coef * critic - entropy_coef * H.
    Samples whose ratio falls on the clipped branch contribute no actor
    gradient, exactly as the min() in the surrogate dictates.
    """
    n = obs.shape[0]
    mu, actor_cache = policy.actor.forward_batch(obs, want_cache=True)
    sigma = policy.sigma()
    inv_sigma = 1.0 / sigma
    diff = actions - mu
    z = diff * inv_sigma
    logp = -0.5 * (z * z).sum(axis=1) - np.log(sigma).sum() - 0.5 * agent_mod.LOG_2PI * ACTION_DIM
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * advantages
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * advantages
    actor_loss = -np.minimum(surr1, clipped).mean()

    # d(actor_loss)/d(logp): only samples on the unclipped branch respond.
    unclipped = surr1 <= clipped
    dlogp = np.where(unclipped, -ratio * advantages, 0.0) / n
    dmu = dlogp[:, None] * diff
    dmu *= inv_sigma * inv_sigma
    actor_grads = policy.actor.backward_batch(actor_cache, dmu)
    dlog_sigma = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)

    entropy = gaussian_entropy(sigma)
    dlog_sigma = dlog_sigma - config.entropy_coef  # dH/dlog_sigma = 1 per dimension

    v_out, critic_cache = policy.critic.forward_batch(obs, want_cache=True)
    v = v_out[:, 0]
    value_loss = float(((v - returns) ** 2).mean())
    dv = (config.value_loss_coef * 2.0 * (v - returns) / n)[:, None]
    critic_grads = policy.critic.backward_batch(critic_cache, dv)

    total_loss = actor_loss + config.value_loss_coef * value_loss - config.entropy_coef * entropy
    if not math.isfinite(total_loss):
        raise NumericError("non-finite PPO loss")
    grads = np.concatenate([actor_grads, critic_grads, dlog_sigma])
    diag = {
        "actor_loss": float(actor_loss),
        "value_loss": value_loss,
        "entropy": entropy,
        "mean_ratio": float(ratio.mean()),
    }
    return grads, diag


def ppo_update(
    policy: PolicyParams,
    batch: RolloutBatch,
    config: PpoConfig,
    opt_state: AdamState,
    lr: float,
    rng: np.random.Generator | None = None,
) -> list[dict]:
    """Run `epochs` clipped-PPO passes over the batch, updating policy in place.

    Advantages and returns are computed once from the collection-time values;
    log_prob_old stays frozen. Returns one diagnostics dict per epoch
    (losses measured before that epoch's parameter step).
    """
    returns, advantages = compute_returns_advantages(batch, batch.value_old, config)
    obs = batch.obs
    actions = batch.policy_actions
    logp_old = batch.log_prob_old
    diagnostics = []
    for epoch in range(config.epochs):
        if config.minibatch_size is None or config.minibatch_size >= batch.n:
            chunks = [slice(0, batch.n)]
        else:
            if rng is None:
                raise ValueError("minibatching requires an rng for shuffling")
            perm = rng.permutation(batch.n)
            chunks = [
                perm[i : i + config.minibatch_size]
                for i in range(0, batch.n, config.minibatch_size)
            ]
        epoch_diags = []
        for chunk in chunks:
            grads, diag = _surrogate_loss_and_grads(
                policy,
                obs[chunk],
                actions[chunk],
                logp_old[chunk],
                advantages[chunk],
                returns[chunk],
                config,
            )
            if config.max_grad_norm is not None:
                norm = float(np.linalg.norm(grads))
                if norm > config.max_grad_norm:
                    grads = grads * (config.max_grad_norm / norm)
            flat = policy.flatten()
            policy.set_flat(adam_step(flat, grads, opt_state, lr))
            epoch_diags.append(diag)
        diagnostics.append(
            {
                "epoch": epoch,
                "actor_loss": float(np.mean([d["actor_loss"] for d in epoch_diags])),
                "value_loss": float(np.mean([d["value_loss"] for d in epoch_diags])),
                "entropy": float(np.mean([d["entropy"] for d in epoch_diags])),
                "mean_ratio": float(np.mean([d["mean_ratio"] for d in epoch_diags])),
            }
        )
    return diagnostics


def deterministic_episode(
    env: NavEnv,
    policy: PolicyParams,
    instinct: InstinctParams | None,
    goal_index: int,
    policy_scale: float = 1.0,
    traj_log=None,
    episode_id: int = -1,
) -> tuple[float, int]:
    """One noise-free episode; returns (cumulative reward, violation count)."""
    obs = env.reset(goal_index)
    total = 0.0
    violations = 0
    step_in_ep = 0
    while True:
        if instinct is not None:
            rec = act(policy, instinct, obs, MODE_DETERMINISTIC, None)
        else:
            rec = act_policy_only(policy, obs, MODE_DETERMINISTIC, None, policy_scale)
        out = env.step(rec.final_action)
        total += out.reward
        violations += int(out.violation)
        if traj_log is not None:
            traj_log.add(
                episode_id,
                step_in_ep,
                out.observation[0],
                out.observation[1],
                rec.final_action[0],
                rec.final_action[1],
                out.reward,
                out.violation,
                out.done_reason,
            )
        step_in_ep += 1
        if out.done:
            return total, violations
        obs = out.observation
