"""Deterministic 2D navigation world with corner goals and rectangular hazard zones.

The agent lives on a bounded plane, starts every episode at the origin and is
rewarded with the negative Euclidean distance to the active goal, minus a flat
penalty for every step spent inside a hazard rectangle. Observations are the
agent position plus a ring of rangefinders that report proximity to the
nearest hazard along fixed world-aligned rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError

DONE_GOAL = "goal_reached"
DONE_HORIZON = "horizon_exceeded"

# Reason codes used by the vectorized lockstep runner (strings are too slow
# for the hot loop).
REASON_NONE = 0
REASON_GOAL = 1
REASON_HORIZON = 2
REASON_NAMES = {REASON_NONE: None, REASON_GOAL: DONE_GOAL, REASON_HORIZON: DONE_HORIZON}

DEFAULT_GOALS = ((0.45, 0.45), (0.45, -0.45), (-0.45, 0.45), (-0.45, -0.45))

# Four 0.2-side squares centered at (+-0.25, +-0.25); each blocks the straight
# line from the origin to one corner goal. Rectangles are (xmin, ymin, xmax, ymax).
DEFAULT_HAZARDS = (
    (0.15, 0.15, 0.35, 0.35),
    (0.15, -0.35, 0.35, -0.15),
    (-0.35, 0.15, -0.15, 0.35),
    (-0.35, -0.35, -0.15, -0.15),
)


@dataclass(frozen=True)
class WorldConfig:
    """World geometry and reward constants.

    Hazard rectangles are closed sets: a position exactly on an edge counts
    as inside, both for violations and for rangefinder readings.
    """

    goals: tuple = DEFAULT_GOALS
    goal_radius: float = 0.01
    horizon: int = 20
    hazard_zones: tuple = DEFAULT_HAZARDS
    hazard_penalty: float = -10.0
    rangefinder_count: int = 8
    rangefinder_range: float = 0.5
    position_bounds: tuple = (-1.0, 1.0)
    action_bound: float = 0.1

    def __post_init__(self):
        if len(self.goals) == 0:
            raise ConfigError("at least one goal is required")
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be > 0")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.rangefinder_count < 1:
            raise ConfigError("rangefinder_count must be >= 1")
        if self.rangefinder_range <= 0:
            raise ConfigError("rangefinder_range must be > 0")
        if self.action_bound <= 0:
            raise ConfigError("action_bound must be > 0")
        lo, hi = self.position_bounds
        if not lo < hi:
            raise ConfigError("position_bounds must be an increasing interval")
        for rect in self.hazard_zones:
            xmin, ymin, xmax, ymax = rect
            if not (xmin < xmax and ymin < ymax):
                raise ConfigError(f"hazard rectangle {rect} has non-positive area")
            if xmin < lo or ymin < lo or xmax > hi or ymax > hi:
                raise ConfigError(f"hazard rectangle {rect} exceeds position bounds")
        for gx, gy in self.goals:
            for xmin, ymin, xmax, ymax in self.hazard_zones:
                if xmin <= gx <= xmax and ymin <= gy <= ymax:
                    raise ConfigError(f"goal ({gx}, {gy}) lies inside a hazard rectangle")

    @cached_property
    def goal_array(self) -> np.ndarray:
        return np.asarray(self.goals, dtype=np.float64)

    @cached_property
    def hazard_array(self) -> np.ndarray:
        if not self.hazard_zones:
            return np.zeros((0, 4), dtype=np.float64)
        return np.asarray(self.hazard_zones, dtype=np.float64)

    @cached_property
    def ray_dirs(self) -> np.ndarray:
        """Unit ray directions at k*(360/count) degrees, k=0 along +x.

        Components that should be exactly zero (axis-aligned rays) are
        snapped so the slab intersection treats them as parallel.
        """
        k = np.arange(self.rangefinder_count)
        ang = 2.0 * math.pi * k / self.rangefinder_count
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        dirs[np.abs(dirs) < 1e-12] = 0.0
        return dirs

    @cached_property
    def _scan_consts(self):
        """Precomputed (1, count, K) slab constants for scan_points.

        Rays parallel to an axis get a huge finite inverse component, which
        makes the slab interval effectively (-inf, inf) or empty without any
        special-casing (and without 0 * inf NaNs).
        """
        rects = self.hazard_array
        dirs = self.ray_dirs
        huge = 1e300
        inv = np.where(dirs == 0.0, huge, np.divide(1.0, np.where(dirs == 0.0, 1.0, dirs)))
        return (
            inv[:, 0][None, :, None],
            inv[:, 1][None, :, None],
            rects[:, 0][None, None, :],
            rects[:, 1][None, None, :],
            rects[:, 2][None, None, :],
            rects[:, 3][None, None, :],
        )

    @property
    def obs_dim(self) -> int:
        return 2 + self.rangefinder_count


@dataclass
class EnvState:
    """Mutable per-episode state: agent position, step counter, active goal."""

    position: np.ndarray
    step_count: int
    active_goal: int


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: float
    violation: bool
    done: bool
    done_reason: str | None


def points_in_any_hazard(points: np.ndarray, config: WorldConfig) -> np.ndarray:
    """Closed-rectangle membership test for an (L, 2) array of points."""
    rects = config.hazard_array
    if rects.shape[0] == 0:
        return np.zeros(points.shape[0], dtype=bool)
    x = points[:, 0:1]
    y = points[:, 1:2]
    inside = (
        (x >= rects[:, 0]) & (x <= rects[:, 2]) & (y >= rects[:, 1]) & (y <= rects[:, 3])
    )
    return inside.any(axis=1)


def scan_points(points: np.ndarray, config: WorldConfig) -> np.ndarray:
    """Rangefinder readings for an (L, 2) array of positions, shape (L, count).

    Reading semantics: d is the distance along the ray to the hazard region
    (0 when the position is already inside a hazard); the reading is
    (R - d) / R clipped to [0, 1], so 1 means touching and 0 means nothing
    within range R.
    """
    L = points.shape[0]
    count = config.rangefinder_count
    if config.hazard_array.shape[0] == 0:
        return np.zeros((L, count), dtype=np.float64)
    inv_dx, inv_dy, xmin, ymin, xmax, ymax = config._scan_consts
    R = config.rangefinder_range

    px = points[:, 0][:, None, None]
    py = points[:, 1][:, None, None]

    tx1 = (xmin - px) * inv_dx
    tx2 = (xmax - px) * inv_dx
    ty1 = (ymin - py) * inv_dy
    ty2 = (ymax - py) * inv_dy

    # Distance along the ray to the (closed) rectangle: max(tnear, 0) when the
    # interval [tnear, tfar] meets [0, inf), which makes a start point inside
    # the rectangle read distance 0 with no separate membership test.
    tnear = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
    tfar = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
    np.maximum(tnear, 0.0, out=tnear)
    d = np.where(tfar >= tnear, tnear, np.inf).min(axis=2)

    np.subtract(R, d, out=d)
    d /= R
    np.clip(d, 0.0, 1.0, out=d)
    return d


def rangefinder_scan(position: Sequence[float], config: WorldConfig) -> np.ndarray:
    """Readings of all rangefinders from one position."""
    p = np.asarray(position, dtype=np.float64).reshape(1, 2)
    lo, hi = config.position_bounds
    if not (lo <= p[0, 0] <= hi and lo <= p[0, 1] <= hi):
        raise ValueError(f"position {position} outside position bounds")
    return scan_points(p, config)[0]


def observation_at(position: np.ndarray, config: WorldConfig) -> np.ndarray:
    """Observation vector: (x, y, rangefinders...)."""
    obs = np.empty(config.obs_dim, dtype=np.float64)
    obs[0:2] = position
    obs[2:] = scan_points(position.reshape(1, 2), config)[0]
    return obs


def cumulative_reward(rewards: Sequence[float]) -> float:
    """Undiscounted sum of per-step rewards over one episode."""
    if len(rewards) == 0:
        raise ValueError("cumulative_reward requires a non-empty sequence")
    return float(sum(rewards))


class NavEnv:
    """Single navigation episode driver around a WorldConfig.

    Instances hold only the small per-episode state and are safe to use
    concurrently as long as each instance is driven by one caller.
    """

    def __init__(self, config: WorldConfig):
        self.config = config
        self._state: EnvState | None = None
        self._done = True
        # Reset observation is constant: every episode starts at the origin.
        self._origin_obs = observation_at(np.zeros(2), config)

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise ValueError("environment has not been reset")
        return self._state

    def reset(self, goal_index: int) -> np.ndarray:
        if not 0 <= goal_index < len(self.config.goals):
            raise ConfigError(
                f"goal index {goal_index} out of range 0..{len(self.config.goals) - 1}"
            )
        self._state = EnvState(position=np.zeros(2), step_count=0, active_goal=goal_index)
        self._done = False
        return self._origin_obs.copy()

    def step(self, action: Sequence[float]) -> StepOutcome:
        if self._state is None:
            raise ValueError("step() before reset()")
        if self._done:
            raise ValueError("episode already finished; call reset()")
        cfg = self.config
        state = self._state

        a = np.clip(np.asarray(action, dtype=np.float64), -cfg.action_bound, cfg.action_bound)
        lo, hi = cfg.position_bounds
        pos = np.clip(state.position + a, lo, hi)

        goal = cfg.goal_array[state.active_goal]
        dist = math.sqrt((goal[0] - pos[0]) ** 2 + (goal[1] - pos[1]) ** 2)
        violation = bool(points_in_any_hazard(pos.reshape(1, 2), cfg)[0])
        reward = -dist + (cfg.hazard_penalty if violation else 0.0)

        state.position = pos
        state.step_count += 1
        if dist <= cfg.goal_radius:
            done, reason = True, DONE_GOAL
        elif state.step_count >= cfg.horizon:
            done, reason = True, DONE_HORIZON
        else:
            done, reason = False, None
        self._done = done
        return StepOutcome(
            observation=observation_at(pos, cfg),
            reward=reward,
            violation=violation,
            done=done,
            done_reason=reason,
        )


class LockstepEnvs:
    """L independent environments advanced one step at a time, vectorized.

    Episodes that finish are reset to the origin immediately; `current_obs`
    always holds the observation the next action should be computed from.
    Used by the evaluator to run several tasks' rollouts in lockstep.
    """

    def __init__(self, config: WorldConfig, goal_indices: Sequence[int]):
        for g in goal_indices:
            if not 0 <= g < len(config.goals):
                raise ConfigError(f"goal index {g} out of range")
        self.config = config
        self.lanes = len(goal_indices)
        self.goals = config.goal_array[np.asarray(goal_indices, dtype=np.intp)]
        self._origin_obs = observation_at(np.zeros(2), config)
        self.positions = np.zeros((self.lanes, 2))
        self.step_counts = np.zeros(self.lanes, dtype=np.int64)
        self.current_obs = np.tile(self._origin_obs, (self.lanes, 1))

    def step(self, actions: np.ndarray):
        """Apply one action per lane.

        Returns (post_obs, rewards, violations, dones, reasons); post_obs is
        the observation of the state each lane actually entered (before any
        auto-reset), needed for value bootstrapping on truncation.
        """
        cfg = self.config
        b = cfg.action_bound
        lo, hi = cfg.position_bounds
        pos = self.positions + np.clip(actions, -b, b)
        np.clip(pos, lo, hi, out=pos)

        diff = self.goals - pos
        dist = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)
        violations = points_in_any_hazard(pos, cfg)
        rewards = -dist
        rewards[violations] += cfg.hazard_penalty

        self.positions = pos
        self.step_counts += 1
        reached = dist <= cfg.goal_radius
        horizon_hit = self.step_counts >= cfg.horizon
        dones = reached | horizon_hit
        reasons = np.where(reached, REASON_GOAL, np.where(horizon_hit, REASON_HORIZON, REASON_NONE))

        post_obs = np.empty((self.lanes, cfg.obs_dim))
        post_obs[:, 0:2] = pos
        post_obs[:, 2:] = scan_points(pos, cfg)

        self.current_obs = post_obs.copy()
        if dones.any():
            idx = np.nonzero(dones)[0]
            self.positions[idx] = 0.0
            self.step_counts[idx] = 0
            self.current_obs[idx] = self._origin_obs
        return post_obs, rewards, violations, dones, reasons
