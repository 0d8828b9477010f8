"""Shared fixtures and independent oracles for the test suite.

The oracles deliberately avoid the library's linear-algebra path: truncated
sums use forward chain multiplication, equilibria come from exhaustive
enumeration, and gradients from central differences.
"""

import numpy as np
import pytest

import mpglearn as m
from mpglearn.environments import CostDescriptor


def random_mdp(n_states, n_actions, gamma, seed, n_agents=None):
    """Dirichlet transition rows, uniform rewards in [0, 1], uniform mu."""
    if n_agents is None:
        n_agents = len(n_actions) if hasattr(n_actions, "__len__") else 1
    if not hasattr(n_actions, "__len__"):
        n_actions = (n_actions,) * n_agents
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    n_joint = int(np.prod(n_actions))
    rewards = rng.uniform(0, 1, size=(n_agents, n_states, n_joint))
    dense = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    mu = rng.dirichlet(np.ones(n_states))
    return m.MultiAgentMDP(n_actions, rewards, dense, gamma, mu)


def random_policy(mdp, seed):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    return m.random_product_policy(mdp, rng)


def chain_of(mdp, policy):
    """Dense (S, S) chain and (n, S) one-step rewards by direct summation."""
    S, A = mdp.n_states, mdp.n_joint
    P = mdp.transitions.toarray().reshape(S, A, S)
    jt = np.ones((S, A))
    for i in range(mdp.n_agents):
        jt *= policy.probs[i][:, mdp.digits[:, i]]
    p_pi = np.zeros((S, S))
    for s in range(S):
        for a in range(A):
            p_pi[s] += jt[s, a] * P[s, a]
    r_pi = np.einsum("isa,sa->is", mdp.rewards, jt)
    return p_pi, r_pi


def truncated_values(mdp, policy, horizon=2000):
    """V by forward chain multiplication of the truncated discounted sum."""
    p_pi, r_pi = chain_of(mdp, policy)
    dist = np.eye(mdp.n_states)      # row s = distribution after t steps from s
    v = np.zeros((mdp.n_agents, mdp.n_states))
    for t in range(horizon):
        v += mdp.gamma ** t * r_pi @ dist.T
        dist = dist @ p_pi
    return v


def truncated_visitation(mdp, policy, horizon=2000):
    """d by accumulating gamma^t * Pr(s_t = s) from mu."""
    p_pi, _ = chain_of(mdp, policy)
    dist = mdp.mu.copy()
    d = np.zeros(mdp.n_states)
    for t in range(horizon):
        d += mdp.gamma ** t * dist
        dist = dist @ p_pi
    return (1.0 - mdp.gamma) * d


def pure_profiles(mdp):
    """All deterministic single-state-game profiles (for 1-state MDPs)."""
    from itertools import product
    assert mdp.n_states >= 1
    return list(product(*[range(a) for a in mdp.n_actions]))


STEEP_COSTS = {
    ("s", "v0_0"): CostDescriptor(
        "table", (0.98, 0.978, 0.976, 0.974, 0.972, 0.97, 0.968, 0.966)),
    ("s", "v0_1"): CostDescriptor(
        "table", (0.03, 0.0295, 0.029, 0.0285, 0.028, 0.0275, 0.027, 0.0265)),
    ("v0_0", "v1_0"): CostDescriptor(
        "table", (0.96, 0.958, 0.956, 0.954, 0.952, 0.95, 0.948, 0.946)),
    ("v0_0", "v1_1"): CostDescriptor(
        "table", (0.02, 0.0195, 0.019, 0.0185, 0.018, 0.0175, 0.017, 0.0165)),
    ("v0_1", "v1_0"): CostDescriptor(
        "table", (0.5, 0.498, 0.496, 0.494, 0.492, 0.49, 0.488, 0.486)),
    ("v0_1", "v1_1"): CostDescriptor(
        "table", (0.02, 0.0195, 0.019, 0.0185, 0.018, 0.0175, 0.017, 0.0165)),
    ("v1_0", "t"): CostDescriptor(
        "table", (0.97, 0.968, 0.966, 0.964, 0.962, 0.96, 0.958, 0.956)),
    ("v1_1", "t"): CostDescriptor(
        "table", (0.04, 0.0395, 0.039, 0.0385, 0.038, 0.0375, 0.037, 0.0365)),
}


@pytest.fixture(scope="session")
def scg2():
    """Two agents on the six-vertex routing graph, full product state space."""
    return m.build_scg(m.layered_dag([2, 2]), n_agents=2, gamma=0.99)


@pytest.fixture(scope="session")
def scg2_uniform_mu():
    return m.build_scg(m.layered_dag([2, 2]), n_agents=2, gamma=0.5,
                       mu="uniform")


@pytest.fixture(scope="session")
def scg3():
    """Three agents on the six-vertex routing graph, reachable states only."""
    return m.build_scg(m.layered_dag([2, 2]), n_agents=3, gamma=0.99,
                       reachable_only=True)


@pytest.fixture(scope="session")
def stage2():
    """Two-agent anti-coordination stage game as a two-route network."""
    return m.build_scg(m.parallel_dag([1.0, 1.0]), n_agents=2, gamma=0.0,
                       mu="uniform", reachable_only=True)


@pytest.fixture(scope="session")
def parallel2():
    """Two parallel two-hop routes, choices only at the start state."""
    return m.build_scg(m.layered_dag([2]), n_agents=2, gamma=0.5,
                       mu="uniform", reachable_only=True)


@pytest.fixture(scope="session")
def distancing3():
    params = m.DistancingParams(n_agents=3, n_facilities=2,
                                weights=(0.1, 0.25), penalty=0.4,
                                spread_trigger=2, return_trigger=1,
                                gamma=0.9)
    return m.build_distancing(params, mu="uniform")


@pytest.fixture(scope="session")
def coop():
    return m.build_cooperative(2, 3, 2, gamma=0.9, seed=12)
