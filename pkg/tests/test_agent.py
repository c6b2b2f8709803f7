import math

import numpy as np
import pytest
from scipy.stats import norm

from instinctnav.agent import (
    ACTION_DIM,
    LOG_SIGMA_FLOOR,
    InstinctParams,
    PolicyParams,
    act,
    act_policy_only,
    gaussian_entropy,
    gaussian_log_prob,
    log_prob_and_entropy,
    modulate,
)
from instinctnav.errors import NumericError

from oracles import central_difference, relative_error


@pytest.fixture
def policy(rng):
    return PolicyParams.kaiming(rng)


@pytest.fixture
def instinct(rng):
    return InstinctParams.kaiming(rng)


@pytest.fixture
def obs(rng):
    return rng.uniform(-0.5, 0.5, 10)


class TestModulation:
    def test_full_suppression_passes_policy_action(self, rng):
        a_p, a_i = rng.uniform(-0.1, 0.1, (2, 2))
        assert np.array_equal(modulate(a_p, a_i, np.ones(2)), a_p)

    def test_zero_suppression_passes_instinct_action(self, rng):
        a_p, a_i = rng.uniform(-0.1, 0.1, (2, 2))
        assert np.array_equal(modulate(a_p, a_i, np.zeros(2)), a_i)

    def test_symmetric_cancellation(self):
        a_f = modulate(np.array([0.1, -0.1]), np.array([-0.1, 0.1]), np.array([0.5, 0.5]))
        assert np.array_equal(a_f, np.zeros(2))

    def test_betweenness_property(self, rng):
        for _ in range(1000):
            a_p = rng.uniform(-0.1, 0.1, 2)
            a_i = rng.uniform(-0.1, 0.1, 2)
            s = rng.uniform(0, 1, 2)
            a_f = modulate(a_p, a_i, s)
            lo = np.minimum(a_p, a_i) - 1e-15
            hi = np.maximum(a_p, a_i) + 1e-15
            assert ((a_f >= lo) & (a_f <= hi)).all()
            assert (np.abs(a_f) <= 0.1 + 1e-15).all()


class TestAct:
    def test_record_identity(self, policy, instinct, obs, rng):
        rec = act(policy, instinct, obs, "stochastic", rng)
        want = rec.suppression * rec.policy_action + (1 - rec.suppression) * rec.instinct_action
        assert np.array_equal(rec.final_action, want)
        assert (rec.suppression >= 0).all() and (rec.suppression <= 1).all()
        assert (np.abs(rec.instinct_action) <= 0.1).all()

    def test_log_prob_is_of_policy_action_not_final(self, policy, instinct, obs, rng):
        rec = act(policy, instinct, obs, "stochastic", rng)
        lp = gaussian_log_prob(rec.policy_action, rec.policy_mean, policy.sigma())
        assert rec.log_prob == pytest.approx(float(lp), abs=1e-12)
        lp_final = gaussian_log_prob(rec.final_action, rec.policy_mean, policy.sigma())
        assert rec.log_prob != pytest.approx(float(lp_final), abs=1e-9)

    def test_deterministic_mode_is_mean_and_rng_free(self, policy, instinct, obs):
        a = act(policy, instinct, obs, "deterministic", None)
        b = act(policy, instinct, obs, "deterministic", None)
        assert np.array_equal(a.policy_action, a.policy_mean)
        assert np.array_equal(a.final_action, b.final_action)
        assert a.log_prob == b.log_prob

    def test_stochastic_reproducible_by_seed(self, policy, instinct, obs):
        a = act(policy, instinct, obs, "stochastic", np.random.default_rng(5))
        b = act(policy, instinct, obs, "stochastic", np.random.default_rng(5))
        assert np.array_equal(a.policy_action, b.policy_action)

    def test_zero_instinct_net_suppresses_half(self, policy, obs, rng):
        zero = InstinctParams.from_flat(np.zeros(InstinctParams.kaiming(rng).parameter_count))
        rec = act(policy, zero, obs, "deterministic", None)
        assert np.array_equal(rec.suppression, np.full(2, 0.5))
        assert np.array_equal(rec.instinct_action, np.zeros(2))
        assert np.allclose(rec.final_action, 0.5 * rec.policy_action, atol=1e-15)

    def test_value_is_critic_output(self, policy, instinct, obs):
        rec = act(policy, instinct, obs, "deterministic", None)
        assert rec.value == float(policy.critic.forward(obs)[0])

    def test_unknown_mode(self, policy, instinct, obs):
        with pytest.raises(ValueError):
            act(policy, instinct, obs, "greedy", None)

    def test_nonfinite_network_raises(self, policy, instinct, obs):
        policy.critic.weights[2][...] = 1e308
        policy.critic.weights[0][...] = 1e3
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(NumericError):
                act(policy, instinct, obs, "deterministic", None)

    def test_act_does_not_mutate_params(self, policy, instinct, obs, rng):
        before = (policy.flatten().tobytes(), instinct.flatten().tobytes())
        act(policy, instinct, obs, "stochastic", rng)
        after = (policy.flatten().tobytes(), instinct.flatten().tobytes())
        assert before == after


class TestActPolicyOnly:
    def test_scale_one_passthrough(self, policy, obs, rng):
        rec = act_policy_only(policy, obs, "stochastic", rng, 1.0)
        assert np.array_equal(rec.final_action, rec.policy_action)
        assert rec.suppression is None and rec.instinct_action is None

    def test_scale_half(self, policy, obs):
        rec = act_policy_only(policy, obs, "deterministic", None, 0.5)
        assert np.array_equal(rec.final_action, 0.5 * rec.policy_action)

    def test_deterministic_is_mean(self, policy, obs):
        rec = act_policy_only(policy, obs, "deterministic", None, 1.0)
        assert np.array_equal(rec.policy_action, rec.policy_mean)


class TestLogProbEntropy:
    def test_log_prob_at_mean_frozen_value(self, obs):
        # Independent oracle: scipy.stats.norm, sigma = 0.05 in both dims.
        policy = PolicyParams.kaiming(np.random.default_rng(0))
        mean = policy.actor.forward(obs)
        lp, _ = log_prob_and_entropy(policy, obs, mean)
        want = 2.0 * norm.logpdf(0.0, 0.0, 0.05)
        assert lp == pytest.approx(want, abs=1e-12)
        assert lp == pytest.approx(4.153587480698636, abs=1e-12)

    def test_entropy_frozen_value(self, policy, obs):
        _, ent = log_prob_and_entropy(policy, obs, np.zeros(2))
        want = 2.0 * (0.5 * math.log(2.0 * math.pi * math.e * 0.05**2))
        assert ent == pytest.approx(want, abs=1e-12)
        assert ent == pytest.approx(-3.1535874806986364, abs=1e-12)

    def test_doubling_sigma_adds_two_log_two(self):
        assert gaussian_entropy(np.array([0.1, 0.1])) - gaussian_entropy(
            np.array([0.05, 0.05])
        ) == pytest.approx(2.0 * math.log(2.0), abs=1e-12)

    def test_matches_scipy_on_random_inputs(self, rng):
        for _ in range(50):
            mean = rng.uniform(-0.1, 0.1, 2)
            sigma = rng.uniform(0.01, 0.3, 2)
            action = rng.normal(mean, sigma)
            got = float(gaussian_log_prob(action, mean, sigma))
            want = float(norm.logpdf(action, mean, sigma).sum())
            assert got == pytest.approx(want, abs=1e-10)

    def test_sigma_underflow_clamped_and_flagged(self, policy, obs):
        policy.log_sigma = np.array([-50.0, math.log(0.05)])
        lp, ent = log_prob_and_entropy(policy, obs, np.zeros(2))
        assert policy.sigma_clamped
        assert policy.log_sigma[0] == LOG_SIGMA_FLOOR
        assert math.isfinite(lp) and math.isfinite(ent)

    def test_log_prob_gradient_matches_fd(self, rng, obs):
        # Gradient of the log density w.r.t. actor parameters via the chain
        # rule through the mean, checked against central differences.
        policy = PolicyParams.kaiming(rng)
        action = rng.uniform(-0.1, 0.1, 2)
        sigma = policy.sigma()

        mean = policy.actor.forward(obs)
        z = (action - mean) / sigma
        want_ls = z * z - 1.0
        dmu = (action - mean) / (sigma * sigma)
        got = policy.actor.backward(obs, dmu).values

        flat0 = policy.actor.flatten()
        idx = rng.choice(policy.actor.parameter_count, size=60, replace=False)

        def f(flat):
            from instinctnav.neural import MlpNet
            from instinctnav.agent import ACTOR_LAYERS

            probe = MlpNet.from_flat(ACTOR_LAYERS, flat)
            m = probe.forward_batch(obs.reshape(1, -1))[0]
            return float(gaussian_log_prob(action, m, sigma))

        fd = central_difference(f, flat0, idx)
        assert relative_error(got[idx], fd).max() < 1e-4

        # log_sigma gradient: d logp / d log_sigma = z^2 - 1 per dimension.
        eps = 1e-6
        for dim in range(ACTION_DIM):
            p_hi = policy.copy()
            p_hi.log_sigma = policy.log_sigma.copy()
            p_hi.log_sigma[dim] += eps
            p_lo = policy.copy()
            p_lo.log_sigma = policy.log_sigma.copy()
            p_lo.log_sigma[dim] -= eps
            lp_hi, _ = log_prob_and_entropy(p_hi, obs, action)
            lp_lo, _ = log_prob_and_entropy(p_lo, obs, action)
            fd_ls = (lp_hi - lp_lo) / (2 * eps)
            assert fd_ls == pytest.approx(want_ls[dim], rel=1e-4, abs=1e-6)


class TestParameterBundles:
    def test_parameter_counts_match_topology(self, policy, instinct):
        actor = 10 * 100 + 100 + 100 * 100 + 100 + 100 * 2 + 2
        critic = 10 * 100 + 100 + 100 * 100 + 100 + 100 * 1 + 1
        trunk = 10 * 100 + 100 + 100 * 100 + 100
        head = 100 * 2 + 2
        assert policy.actor.parameter_count == actor == 11402
        assert policy.critic.parameter_count == critic == 11301
        assert policy.parameter_count == actor + critic + 2 == 22705
        assert instinct.parameter_count == trunk + 2 * head == 11604

    def test_policy_flat_round_trip(self, policy, obs):
        rec_a = act_policy_only(policy, obs, "deterministic", None)
        clone = PolicyParams.from_flat(policy.flatten())
        rec_b = act_policy_only(clone, obs, "deterministic", None)
        assert np.array_equal(rec_a.final_action, rec_b.final_action)
        assert rec_a.value == rec_b.value
        assert np.array_equal(clone.log_sigma, policy.log_sigma)

    def test_instinct_flat_round_trip(self, instinct, obs):
        s_a, i_a = instinct.forward(obs)
        clone = InstinctParams.from_flat(instinct.flatten())
        s_b, i_b = clone.forward(obs)
        assert np.array_equal(s_a, s_b) and np.array_equal(i_a, i_b)

    def test_instinct_backward_matches_fd(self, rng, obs):
        instinct = InstinctParams.kaiming(rng)
        dS = rng.standard_normal(2)
        dAI = rng.standard_normal(2)
        X = obs.reshape(1, -1)
        s, a_i, cache = instinct.forward_with_cache(X)
        got = instinct.backward_batch(cache, dS.reshape(1, -1), dAI.reshape(1, -1))

        flat0 = instinct.flatten()
        idx = rng.choice(instinct.parameter_count, size=80, replace=False)

        def f(flat):
            probe = InstinctParams.from_flat(flat)
            ps, pa = probe.forward_batch(X)
            return float(ps[0] @ dS + pa[0] @ dAI)

        fd = central_difference(f, flat0, idx)
        assert relative_error(got[idx], fd).max() < 1e-4
