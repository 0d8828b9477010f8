"""Exact evaluation against independent oracles: truncated-horizon chain
sums, exhaustive enumeration, and closed-form special cases."""

import numpy as np
import pytest

import mpglearn as m
from mpglearn.exact import exclusion_table, joint_policy_table

from conftest import (chain_of, random_mdp, random_policy, truncated_values,
                      truncated_visitation)


class TestInducedChain:
    def test_deterministic_everything_gives_unit_rows(self):
        # 2 states, 1 agent, 2 actions, deterministic swap/stay transitions
        P = np.zeros((2, 2, 2))
        P[0, 0, 1] = P[0, 1, 0] = 1.0
        P[1, 0, 0] = P[1, 1, 1] = 1.0
        mdp = m.MultiAgentMDP((2,), np.zeros((1, 2, 2)), P, 0.9,
                              np.array([1.0, 0.0]))
        pol = m.JointPolicy([np.array([[1.0, 0.0], [0.0, 1.0]])])
        chain = m.induced_chain(mdp, pol)
        assert np.array_equal(chain.p_pi, np.array([[0.0, 1.0], [0.0, 1.0]]))

    def test_uniform_policy_averages_rows(self):
        P = np.zeros((2, 2, 2))
        P[0, 0] = (1.0, 0.0)
        P[0, 1] = (0.0, 1.0)
        P[1, 0] = P[1, 1] = (0.0, 1.0)
        mdp = m.MultiAgentMDP((2,), np.zeros((1, 2, 2)), P, 0.9,
                              np.array([1.0, 0.0]))
        pol = m.JointPolicy([np.array([[0.5, 0.5], [0.5, 0.5]])])
        chain = m.induced_chain(mdp, pol)
        assert np.allclose(chain.p_pi[0], [0.5, 0.5], atol=1e-15)

    def test_random_instance_matches_direct_summation(self):
        mdp = random_mdp(3, (2, 2), 0.9, seed=21)
        pol = random_policy(mdp, 22)
        chain = m.induced_chain(mdp, pol)
        p_ref, r_ref = chain_of(mdp, pol)
        assert np.abs(chain.p_pi - p_ref).max() < 1e-14
        assert np.abs(chain.r_pi - r_ref).max() < 1e-14


class TestValueFunctions:
    def test_single_state_geometric_series(self):
        mdp = m.MultiAgentMDP((1,), np.ones((1, 1, 1)), np.ones((1, 1, 1)),
                              0.99, np.ones(1))
        v = m.value_functions(mdp, m.JointPolicy([np.ones((1, 1))]))
        assert abs(v[0, 0] - 100.0) < 1e-10

    def test_zero_rewards_zero_values(self):
        mdp = random_mdp(4, (2,), 0.95, seed=23)
        zero = m.MultiAgentMDP(mdp.n_actions, np.zeros_like(mdp.rewards),
                               mdp.transitions, mdp.gamma, mdp.mu)
        v = m.value_functions(zero, random_policy(zero, 24))
        assert np.abs(v).max() == 0.0

    def test_random_instance_matches_truncated_sum(self):
        mdp = random_mdp(4, (2, 2), 0.9, seed=25)
        pol = random_policy(mdp, 26)
        v = m.value_functions(mdp, pol)
        v_ref = truncated_values(mdp, pol, horizon=2000)
        assert np.abs(v - v_ref).max() < 1e-6

    def test_bellman_consistency(self):
        mdp = random_mdp(5, (2, 3), 0.93, seed=27)
        pol = random_policy(mdp, 28)
        rep = m.evaluate(mdp, pol, want_q=True)
        jt = joint_policy_table(mdp, pol)
        for i in range(mdp.n_agents):
            resid = np.abs(rep.v[i] - (jt * rep.q[i]).sum(axis=1)).max()
            assert resid < 1e-10


class TestQAndAdvantage:
    def test_gamma_zero_q_equals_reward(self):
        mdp = random_mdp(3, (2, 2), 0.0, seed=29)
        pol = random_policy(mdp, 30)
        q, _ = m.q_and_advantage(mdp, pol, agent=0)
        assert np.abs(q - mdp.rewards[0]).max() < 1e-15

    def test_single_action_agents_have_zero_advantage(self):
        mdp = random_mdp(3, (1, 1), 0.9, seed=31)
        pol = m.JointPolicy([np.ones((3, 1)), np.ones((3, 1))])
        for i in range(2):
            _, adv = m.q_and_advantage(mdp, pol, agent=i)
            assert np.abs(adv).max() < 1e-12

    def test_advantage_zero_mean_identity(self):
        mdp = random_mdp(3, (2, 3), 0.9, seed=32)
        pol = random_policy(mdp, 33)
        rep = m.evaluate(mdp, pol)
        for i in range(mdp.n_agents):
            mean = (pol.probs[i] * rep.adv_marginal[i]).sum(axis=1)
            assert np.abs(mean).max() < 1e-10

    def test_marginal_q_matches_direct_expectation(self):
        mdp = random_mdp(2, (2, 2, 2), 0.8, seed=34)
        pol = random_policy(mdp, 35)
        rep = m.evaluate(mdp, pol, want_q=True)
        i = 1
        excl = exclusion_table(mdp, pol, i)
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions[i]):
                cols = np.flatnonzero(mdp.digits[:, i] == a)
                direct = (excl[s, cols] * rep.q[i][s, cols]).sum()
                assert abs(direct - rep.q_marginal[i][s, a]) < 1e-12


class TestVisitation:
    def test_single_state(self):
        mdp = m.MultiAgentMDP((1,), np.ones((1, 1, 1)), np.ones((1, 1, 1)),
                              0.99, np.ones(1))
        d = m.visitation(mdp, m.JointPolicy([np.ones((1, 1))]))
        assert abs(d[0] - 1.0) < 1e-12

    def test_gamma_zero_recovers_mu(self):
        mdp = random_mdp(4, (2,), 0.0, seed=36)
        d = m.visitation(mdp, random_policy(mdp, 37))
        assert np.abs(d - mdp.mu).max() < 1e-14

    def test_random_chain_matches_truncated_sum(self):
        mdp = random_mdp(5, (2,), 0.9, seed=38)
        pol = random_policy(mdp, 39)
        d = m.visitation(mdp, pol)
        d_ref = truncated_visitation(mdp, pol, horizon=2000)
        assert np.abs(d - d_ref).max() < 1e-6

    def test_visitation_floor_and_normalization(self):
        mdp = random_mdp(5, (2, 2), 0.95, seed=40)
        pol = random_policy(mdp, 41)
        rep = m.evaluate(mdp, pol)
        assert m.eval_report_violations(rep, pol, mdp) == []
        assert np.all(rep.visitation >= (1 - mdp.gamma) * mdp.mu - 1e-10)


class TestPotentialValue:
    def test_gamma_zero_single_state_is_stage_expectation(self):
        mdp = random_mdp(1, (2, 2), 0.0, seed=42)
        phi_table = np.random.Generator(
            np.random.Philox(key=np.uint64(43))).uniform(0, 1, (1, 4))
        env = m.Environment(mdp=mdp, stage_potential=phi_table, label="toy")
        pol = random_policy(mdp, 44)
        jt = joint_policy_table(mdp, pol)
        phi_s, phi_mu = m.potential_value(env, pol)
        assert abs(phi_s[0] - (jt * phi_table).sum()) < 1e-14
        assert abs(phi_mu - phi_s[0]) < 1e-14

    def test_single_agent_single_edge_costs_c_at_start(self):
        env = m.build_scg(m.parallel_dag([0.75]), n_agents=1, gamma=0.99)
        pol = m.JointPolicy([np.ones((env.mdp.n_states, 1))])
        phi_s, _ = m.potential_value(env, pol)
        start = env.mdp.state_labels.index(("s",))
        assert abs(phi_s[start] - 0.75) < 1e-12

    def test_one_shot_congestion_matches_rosenthal_enumeration(self):
        env = m.build_scg(m.parallel_dag([1.0, 0.6]), n_agents=2, gamma=0.0)
        mdp = env.mdp
        pol = random_policy(mdp, 45)
        start = mdp.state_labels.index(("s", "s"))
        c = {0: [1.0, 0.5], 1: [0.6, 0.3]}  # inverse_load tables
        expected = 0.0
        for a0 in range(2):
            for a1 in range(2):
                prob = pol.probs[0][start, a0] * pol.probs[1][start, a1]
                if a0 == a1:
                    rosenthal = c[a0][0] + c[a0][1]
                else:
                    rosenthal = c[a0][0] + c[a1][0]
                expected += prob * rosenthal
        phi_s, _ = m.potential_value(env, pol)
        assert abs(phi_s[start] - expected) < 1e-12

    def test_missing_potential_rejected(self):
        mdp = random_mdp(2, (2,), 0.9, seed=46)
        env = m.Environment(mdp=mdp, stage_potential=None, label="bare")
        with pytest.raises(ValueError, match="stage potential"):
            m.potential_value(env, random_policy(mdp, 47))


class TestPerformanceDifference:
    def test_unilateral_deviation_matches_value_change(self, scg3):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(48)))
        for trial in range(10):
            base = scg3.sample_base_profile(rng)
            i = int(rng.integers(scg3.mdp.n_agents))
            dev = rng.dirichlet(np.ones(scg3.mdp.n_actions[i]),
                                size=scg3.mdp.n_states)
            changed = base.replace_agent(i, dev)
            ra = m.evaluate(scg3, base, agents=[i])
            rb = m.evaluate(scg3, changed, agents=[i])
            gap = np.abs((rb.potential - ra.potential)
                         - (rb.v[i] - ra.v[i])).max()
            assert gap < 1e-9


class TestMismatchBound:
    def test_single_state(self):
        mdp = m.MultiAgentMDP((1,), np.ones((1, 1, 1)), np.ones((1, 1, 1)),
                              0.99, np.ones(1))
        b = m.mismatch_bound(mdp)
        assert abs(b.upper - 100.0) < 1e-12
        assert abs(b.enumerated_lower - 1.0) < 1e-12

    def test_gamma_zero_all_policies_share_mu(self):
        mdp = random_mdp(2, (2,), 0.0, seed=49)
        b = m.mismatch_bound(mdp)
        assert abs(b.enumerated_lower - 1.0) < 1e-12

    def test_two_state_enumeration_below_upper(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(50)))
        P = rng.dirichlet(np.ones(2), size=(2, 2))
        rewards = rng.uniform(0, 1, (1, 2, 2))
        mdp = m.MultiAgentMDP((2,), rewards, P, 0.9, np.array([0.5, 0.5]))
        b = m.mismatch_bound(mdp)
        assert b.upper == pytest.approx(1.0 / (0.1 * 0.5))
        assert b.enumerated_lower is not None
        assert b.enumerated_lower <= b.upper + 1e-12
        # the enumerated value is a genuine visitation ratio
        assert b.enumerated_lower >= 1.0

    def test_unavailable_when_reachable_state_has_zero_mass(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = 1.0
        P[1, 0, 1] = 1.0
        mdp = m.MultiAgentMDP((1,), np.zeros((1, 2, 1)), P, 0.9,
                              np.array([1.0, 0.0]))
        b = m.mismatch_bound(mdp)
        assert b.upper is None
        assert "mu = 0" in b.note


class TestGradientIdentityCooperative:
    def test_full_feedback_points_on_common_reward_game(self, coop):
        # common-reward games admit the potential for arbitrary policies,
        # so the gradient identity must hold at unrestricted random logits
        from mpglearn.verify import (finite_diff_grad, potential_gradients,
                                     value_gradients)
        mdp = coop.mdp
        rng = np.random.Generator(np.random.Philox(key=np.uint64(51)))
        for trial in range(3):
            theta = m.Logits([rng.normal(0, 1, (mdp.n_states, a))
                              for a in mdp.n_actions])
            rep = m.evaluate(coop, m.softmax_policy(theta))
            closed = value_gradients(mdp, theta, report=rep)
            closed_phi = potential_gradients(coop, theta, report=rep)

            def phi_of(lg):
                return m.evaluate(coop, m.softmax_policy(lg),
                                  agents=[]).potential_mu

            fd_phi = finite_diff_grad(phi_of, theta, h=1e-5)
            for i in range(mdp.n_agents):
                assert np.abs(fd_phi[i] - closed[i]).max() < 1e-6
                assert np.abs(fd_phi[i] - closed_phi[i]).max() < 1e-6
