"""Monte Carlo estimation: determinism, marginal correctness against exact
one-step probabilities, and convergence toward exact values."""

import numpy as np
import pytest

import mpglearn as m

from conftest import random_mdp, random_policy


def deterministic_line_mdp():
    """3 states in a line, 1 agent, 1 action, rewards 1/0.5/0."""
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    rewards = np.zeros((1, 3, 1))
    rewards[0, 0, 0] = 1.0
    rewards[0, 1, 0] = 0.5
    mu = np.array([1.0, 0.0, 0.0])
    return m.MultiAgentMDP((1,), rewards, P, 0.9, mu)


class TestSampleEpisode:
    def test_deterministic_rollout_is_the_unique_one(self):
        mdp = deterministic_line_mdp()
        pol = m.JointPolicy([np.ones((3, 1))])
        states, actions, rewards = m.sample_episode(mdp, pol, 4, seed=0)
        assert states.tolist() == [0, 1, 2, 2]
        assert rewards[:, 0].tolist() == [1.0, 0.5, 0.0, 0.0]

    def test_single_state_stays_put(self):
        mdp = m.MultiAgentMDP((2,), np.zeros((1, 1, 2)) + 0.5,
                              np.ones((1, 2, 1)), 0.9, np.ones(1))
        pol = m.JointPolicy([np.full((1, 2), 0.5)])
        states, _, _ = m.sample_episode(mdp, pol, 3, seed=1)
        assert states.tolist() == [0, 0, 0]

    def test_reproducible_per_episode_key(self):
        mdp = random_mdp(3, (2, 2), 0.9, seed=80)
        pol = random_policy(mdp, 81)
        a = m.sample_episode(mdp, pol, 10, seed=5, episode=3)
        b = m.sample_episode(mdp, pol, 10, seed=5, episode=3)
        c = m.sample_episode(mdp, pol, 10, seed=5, episode=4)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_one_step_marginal_matches_exact_distribution(self):
        # empirical distribution of s_1 vs sum_a pi(a|s0) P(.|s0, a)
        mdp = random_mdp(3, (2,), 0.9, seed=82)
        mdp = m.MultiAgentMDP(mdp.n_actions, mdp.rewards, mdp.transitions,
                              mdp.gamma, np.array([1.0, 0.0, 0.0]))
        pol = random_policy(mdp, 83)
        from mpglearn.sampling import _sample_batch
        states, _, _ = _sample_batch(mdp, pol, 2, seed=84, episode_offset=0,
                                     batch=100_000)
        counts = np.bincount(states[1], minlength=3) / states.shape[1]
        P = mdp.transitions.toarray().reshape(3, 2, 3)
        exact = np.einsum("a,ap->p", pol.probs[0][0], P[0])
        assert 0.5 * np.abs(counts - exact).sum() < 0.01


class TestEstimateEval:
    def test_zero_variance_case_matches_exact(self):
        mdp = deterministic_line_mdp()
        pol = m.JointPolicy([np.ones((3, 1))])
        cfg = m.SampleConfig(horizon=60, batch=3, seed=0)
        rep = m.estimate_eval(mdp, pol, cfg)
        exact = m.evaluate(mdp, pol)
        vis = rep.visited_states
        # gamma^60 truncation bias is ~1.8e-3 of the tail, all rewards past
        # the horizon are zero here, so estimates are exact
        assert np.abs(rep.v[:, vis] - exact.v[:, vis]).max() < 1e-9

    def test_zero_rewards_give_exact_zero(self):
        mdp = random_mdp(3, (2, 2), 0.9, seed=85)
        zero = m.MultiAgentMDP(mdp.n_actions, np.zeros_like(mdp.rewards),
                               mdp.transitions, mdp.gamma, mdp.mu)
        rep = m.estimate_eval(zero, random_policy(zero, 86),
                              m.SampleConfig(10, 50, seed=1))
        assert np.abs(rep.v).max() == 0.0
        for adv in rep.adv_marginal:
            assert np.abs(adv).max() == 0.0

    def test_large_batch_close_to_exact(self):
        mdp = random_mdp(2, (2,), 0.9, seed=87)
        pol = random_policy(mdp, 88)
        cfg = m.SampleConfig(horizon=150, batch=50_000, seed=2)
        rep = m.estimate_eval(mdp, pol, cfg)
        exact = m.evaluate(mdp, pol)
        assert np.abs(rep.v - exact.v).max() < 0.02
        assert np.abs(rep.visitation - exact.visitation).max() < 0.01

    def test_bit_identical_reports(self):
        mdp = random_mdp(3, (2, 2), 0.95, seed=89)
        pol = random_policy(mdp, 90)
        cfg = m.SampleConfig(horizon=20, batch=20, seed=3)
        a = m.estimate_eval(mdp, pol, cfg, episode_offset=40)
        b = m.estimate_eval(mdp, pol, cfg, episode_offset=40)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.visitation, b.visitation)
        for x, y in zip(a.adv_marginal, b.adv_marginal):
            assert np.array_equal(x, y)

    def test_unvisited_pairs_flagged_and_zero(self):
        mdp = deterministic_line_mdp()
        # two actions, the second never played
        P = np.zeros((3, 2, 3))
        P[:, 0] = mdp.transitions.toarray().reshape(3, 1, 3)[:, 0]
        P[:, 1] = P[:, 0]
        rewards = np.repeat(mdp.rewards, 2, axis=2)
        two = m.MultiAgentMDP((2,), rewards, P, 0.9, mdp.mu)
        pure = m.JointPolicy([np.tile([1.0, 0.0], (3, 1))])
        rep = m.estimate_eval(two, pure, m.SampleConfig(10, 5, seed=4))
        mask = rep.visited_pairs[0]
        assert not mask[:, 1].any()
        assert np.abs(rep.adv_marginal[0][:, 1]).max() == 0.0

    def test_unanimous_actions_give_exactly_zero_advantage(self):
        # when only one action is ever sampled at a state, its first-visit
        # Q and V coincide, so the advantage is exactly zero; this is what
        # lets sampled runs terminate
        mdp = deterministic_line_mdp()
        P = np.zeros((3, 2, 3))
        P[:, 0] = mdp.transitions.toarray().reshape(3, 1, 3)[:, 0]
        P[:, 1] = P[:, 0]
        rewards = np.repeat(mdp.rewards, 2, axis=2)
        two = m.MultiAgentMDP((2,), rewards, P, 0.9, mdp.mu)
        pure = m.JointPolicy([np.tile([1.0, 0.0], (3, 1))])
        rep = m.estimate_eval(two, pure, m.SampleConfig(10, 20, seed=5))
        assert np.abs(rep.adv_marginal[0]).max() == 0.0

    def test_every_visit_estimator_differs_but_agrees_in_limit(self):
        # every-visit attributes returns to all visits, so horizon truncation
        # bites harder (late visits see short remaining horizons); the bias
        # is roughly V / (T * (1 - gamma)) on a rapidly mixing chain
        mdp = random_mdp(2, (2,), 0.8, seed=91)
        pol = random_policy(mdp, 92)
        first = m.estimate_eval(mdp, pol,
                                m.SampleConfig(80, 10_000, 6, "first_visit"))
        every = m.estimate_eval(mdp, pol,
                                m.SampleConfig(80, 10_000, 6, "every_visit"))
        exact = m.evaluate(mdp, pol)
        assert np.abs(first.v - exact.v).max() < 0.05
        assert np.abs(every.v - exact.v).max() < 0.2
        assert not np.array_equal(first.v, every.v)

    def test_error_shrinks_with_batch_size(self):
        # averaged over 20 seeds, larger mini-batches estimate V better
        mdp = random_mdp(2, (2,), 0.9, seed=93)
        pol = random_policy(mdp, 94)
        exact = m.evaluate(mdp, pol)
        errs = []
        for batch in (8, 64, 512):
            total = 0.0
            for seed in range(20):
                rep = m.estimate_eval(mdp, pol,
                                      m.SampleConfig(60, batch, seed))
                total += float(np.abs(rep.v - exact.v).max())
            errs.append(total / 20)
        assert errs[0] > errs[1] > errs[2]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            m.SampleConfig(horizon=0, batch=1, seed=0).check()
        with pytest.raises(ValueError):
            m.SampleConfig(horizon=1, batch=0, seed=0).check()
        with pytest.raises(ValueError):
            m.SampleConfig(estimator="bogus").check()
