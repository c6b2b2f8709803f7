import math

import numpy as np
import pytest

from instinctnav.envsim import (
    DONE_GOAL,
    DONE_HORIZON,
    LockstepEnvs,
    NavEnv,
    WorldConfig,
    cumulative_reward,
    observation_at,
    points_in_any_hazard,
    rangefinder_scan,
    scan_points,
)
from instinctnav.errors import ConfigError

from oracles import marching_readings, random_hazard_world


class TestWorldConfig:
    def test_default_is_valid(self, world):
        assert len(world.goals) == 4
        assert world.obs_dim == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"goal_radius": 0.0},
            {"horizon": 0},
            {"rangefinder_range": 0.0},
            {"hazard_zones": ((0.2, 0.2, 0.2, 0.4),)},  # zero width
            {"hazard_zones": ((0.5, 0.5, 1.5, 0.9),)},  # exceeds bounds
            {"hazard_zones": ((0.4, 0.4, 0.5, 0.5),)},  # covers goal (0.45, 0.45)
            {"position_bounds": (1.0, -1.0)},
            {"action_bound": 0.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            WorldConfig(**kwargs)


class TestReset:
    def test_reset_at_origin(self, world):
        env = NavEnv(world)
        obs = env.reset(0)
        assert env.state.position.tolist() == [0.0, 0.0]
        assert env.state.step_count == 0
        assert obs.shape == (10,)
        assert obs[0] == 0.0 and obs[1] == 0.0

    def test_origin_scan_fourfold_symmetry(self, world):
        obs = NavEnv(world).reset(0)
        readings = obs[2:]
        # Axis-aligned rays miss the corner hazards; diagonal rays all see the
        # nearest hazard corner at the same distance.
        assert np.array_equal(readings[[0, 2, 4, 6]], np.zeros(4))
        assert len(set(readings[[1, 3, 5, 7]].tolist())) == 1
        assert readings[1] > 0

    @pytest.mark.parametrize("bad", [-1, 4, 5])
    def test_bad_goal_index(self, world, bad):
        with pytest.raises(ConfigError):
            NavEnv(world).reset(bad)


class TestStep:
    def test_zero_distance_goal_reached(self, world):
        env = NavEnv(world)
        env.reset(0)
        env.state.position = np.array([0.35, 0.45])
        out = env.step([0.1, 0.0])
        # 0.35 + 0.1 lands within one ulp of the goal; reward is -distance.
        assert out.reward == pytest.approx(0.0, abs=1e-12)
        assert out.done and out.done_reason == DONE_GOAL
        assert not out.violation

    def test_distance_reward_from_origin(self, world):
        env = NavEnv(world)
        env.reset(0)
        out = env.step([0.0, 0.0])
        assert out.reward == pytest.approx(-math.sqrt(0.405), abs=1e-15)
        assert not out.done

    def test_hazard_penalty_added(self, world):
        env = NavEnv(world)
        env.reset(0)
        env.step([0.1, 0.1])
        out = env.step([0.1, 0.1])  # lands at (0.2, 0.2), inside a hazard
        dist = math.dist((0.2, 0.2), (0.45, 0.45))
        assert out.violation
        assert out.reward == pytest.approx(-dist - 10.0, abs=1e-12)

    def test_action_clipped_silently(self, world):
        env = NavEnv(world)
        env.reset(0)
        out = env.step([0.5, -3.0])
        assert out.observation[0] == pytest.approx(0.1)
        assert out.observation[1] == pytest.approx(-0.1)

    def test_clipping_property(self, world, rng):
        env = NavEnv(world)
        env.reset(0)
        prev = env.state.position.copy()
        for _ in range(50):
            out = env.step(rng.uniform(-5, 5, 2))
            moved = np.abs(out.observation[:2] - prev)
            assert (moved <= 0.1 + 1e-15).all()
            prev = out.observation[:2].copy()
            if out.done:
                prev = env.reset(0)[:2].copy()

    def test_position_clamped_to_bounds(self, no_hazard_world):
        env = NavEnv(no_hazard_world)
        env.reset(0)
        for _ in range(15):
            out = env.step([0.1, 0.0])
            if out.done:
                break
        assert out.observation[0] <= 1.0

    def test_horizon_termination(self, world):
        env = NavEnv(world)
        env.reset(0)
        for t in range(20):
            out = env.step([0.0, 0.0])
        assert out.done and out.done_reason == DONE_HORIZON
        assert env.state.step_count == 20
        with pytest.raises(ValueError):
            env.step([0.0, 0.0])

    def test_step_before_reset(self, world):
        with pytest.raises(ValueError):
            NavEnv(world).step([0.0, 0.0])

    def test_goal_radius_termination(self, world):
        env = NavEnv(world)
        env.reset(0)
        env.state.position = np.array([0.45, 0.4405])
        out = env.step([0.0, 0.0])
        assert out.done and out.done_reason == DONE_GOAL

    def test_determinism_bit_identical(self, world, rng):
        actions = rng.uniform(-0.1, 0.1, (30, 2))
        results = []
        for _ in range(2):
            env = NavEnv(world)
            env.reset(1)
            rows = []
            for a in actions:
                out = env.step(a)
                rows.append((out.reward, out.violation, out.done, tuple(out.observation)))
                if out.done:
                    env.reset(1)
            results.append(rows)
        assert results[0] == results[1]

    def test_reward_decomposition(self, rng):
        world = random_hazard_world(rng)
        env = NavEnv(world)
        goal = np.asarray(world.goals[2])
        env.reset(2)
        for _ in range(2000):
            out = env.step(rng.uniform(-0.15, 0.15, 2))
            dist = math.dist(out.observation[:2], goal)
            assert out.reward + (10.0 if out.violation else 0.0) == pytest.approx(-dist, abs=1e-12)
            if out.done:
                env.reset(2)


class TestRangefinders:
    def test_empty_world_reads_zero(self, no_hazard_world, rng):
        for _ in range(10):
            p = rng.uniform(-1, 1, 2)
            assert np.array_equal(rangefinder_scan(p, no_hazard_world), np.zeros(8))

    def test_out_of_range_hazard_reads_zero(self):
        world = WorldConfig(
            goals=((0.0, 0.9),), hazard_zones=((0.7, 0.7, 0.8, 0.8),), rangefinder_range=0.5
        )
        assert np.array_equal(rangefinder_scan((-0.3, -0.3), world), np.zeros(8))

    def test_touching_edge_reads_one(self, world):
        readings = rangefinder_scan((0.15, 0.25), world)
        assert readings[0] == 1.0  # +x ray points into the hazard

    def test_inside_hazard_reads_one(self, world):
        assert np.array_equal(rangefinder_scan((0.25, 0.25), world), np.ones(8))

    def test_known_distance(self, world):
        # From the origin the 45-degree ray enters the (0.15, 0.15) corner at
        # t = 0.15 * sqrt(2).
        reading = rangefinder_scan((0.0, 0.0), world)[1]
        d = 0.15 * math.sqrt(2.0)
        assert reading == pytest.approx((0.5 - d) / 0.5, abs=1e-12)

    def test_matches_marching_oracle(self, rng):
        mismatches = []
        for _ in range(30):
            world = random_hazard_world(rng)
            positions = rng.uniform(-0.95, 0.95, (8, 2))
            readings = scan_points(positions, world)
            for k in range(8):
                got = readings[:, k]
                want = marching_readings(
                    positions,
                    np.tile(world.ray_dirs[k], (positions.shape[0], 1)),
                    world.hazard_array,
                    world.rangefinder_range,
                )
                mismatches.append(np.abs(got - want).max())
        assert max(mismatches) < 1e-6

    def test_reflection_symmetry(self, rng):
        # Mirroring position and hazards across the y axis permutes the rays
        # by angle -> 180deg - angle.
        perm = [4, 3, 2, 1, 0, 7, 6, 5]
        for _ in range(20):
            world = random_hazard_world(rng)
            mirrored = WorldConfig(
                goals=world.goals,
                hazard_zones=tuple((-xmax, ymin, -xmin, ymax) for xmin, ymin, xmax, ymax in world.hazard_zones),
            )
            p = rng.uniform(-0.9, 0.9, 2)
            a = rangefinder_scan(p, world)
            b = rangefinder_scan((-p[0], p[1]), mirrored)
            assert np.allclose(b, a[perm], atol=1e-12)

    def test_position_outside_bounds_rejected(self, world):
        with pytest.raises(ValueError):
            rangefinder_scan((1.5, 0.0), world)

    def test_observation_layout(self, world, rng):
        p = rng.uniform(-0.5, 0.5, 2)
        obs = observation_at(p, world)
        assert obs.shape == (10,)
        assert np.array_equal(obs[:2], p)
        assert ((obs[2:] >= 0) & (obs[2:] <= 1)).all()


class TestCumulativeReward:
    def test_zeros(self):
        assert cumulative_reward([0.0, 0.0, 0.0]) == 0.0

    def test_direct_sum(self):
        assert cumulative_reward([-1.0, -0.5, -10.5]) == -12.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cumulative_reward([])

    def test_full_episode_matches_fsum(self, rng):
        rewards = list(rng.uniform(-11, 0, 20))
        assert cumulative_reward(rewards) == pytest.approx(math.fsum(rewards), abs=1e-12)


class TestScriptedPolicies:
    def test_straight_line_reaches_goal_in_five_steps(self, no_hazard_world):
        env = NavEnv(no_hazard_world)
        env.reset(0)
        goal = np.array([0.45, 0.45])
        steps = 0
        done_reason = None
        for _ in range(20):
            to_goal = np.clip(goal - env.state.position, -0.1, 0.1)
            out = env.step(to_goal)
            steps += 1
            if out.done:
                done_reason = out.done_reason
                break
        assert steps == 5 and done_reason == DONE_GOAL

    def test_standing_still_horizon_reward(self, world):
        env = NavEnv(world)
        env.reset(0)
        total = 0.0
        for _ in range(20):
            total += env.step([0.0, 0.0]).reward
        assert total == pytest.approx(-20.0 * math.sqrt(0.405), rel=1e-12)


class TestLockstep:
    def test_matches_single_env(self, world, rng):
        goals = [0, 1, 2, 3]
        lock = LockstepEnvs(world, goals)
        singles = [NavEnv(world) for _ in goals]
        for env, g in zip(singles, goals):
            env.reset(g)
        for _ in range(200):
            actions = rng.uniform(-0.12, 0.12, (4, 2))
            post, rewards, viols, dones, reasons = lock.step(actions)
            for lane, (env, g) in enumerate(zip(singles, goals)):
                out = env.step(actions[lane])
                assert np.array_equal(out.observation, post[lane])
                assert out.reward == rewards[lane]
                assert out.violation == viols[lane]
                assert out.done == dones[lane]
                if out.done:
                    env.reset(g)
                    assert np.array_equal(lock.current_obs[lane], NavEnv(world).reset(g))

    def test_bad_goal_rejected(self, world):
        with pytest.raises(ConfigError):
            LockstepEnvs(world, [0, 9])


def test_points_in_any_hazard_closed_edges(world):
    pts = np.array([[0.15, 0.15], [0.35, 0.35], [0.14999, 0.25], [0.0, 0.0]])
    assert points_in_any_hazard(pts, world).tolist() == [True, True, False, False]
