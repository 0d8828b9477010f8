"""Exact policy evaluation by linear algebra.

Values, Q-functions, marginal advantages, discounted visitation and the
potential value all come from solves against (I - gamma * P_pi).  One LU
factorization (dense, partial pivoting) is shared across agents and reused
transposed for the visitation solve, so results are bit-reproducible
regardless of how callers parallelize per-agent work.  Systems larger than
DENSE_SOLVE_MAX states go through a sparse factorization instead.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import linalg

from .core import EvalReport

DENSE_SOLVE_MAX = 4096
# dense intermediates (joint tables, weighted tensors) above this size fall
# back to sparse arithmetic
_DENSE_CHAIN_MAX = 1 << 22


@dataclass(frozen=True)
class InducedChain:
    """State chain and per-agent expected one-step rewards under a fixed policy."""
    p_pi: np.ndarray          # (S, S), row stochastic
    r_pi: np.ndarray          # (n_agents, S)


@dataclass(frozen=True)
class MismatchBound:
    """Bounds on the worst-case discounted-visitation ratio between policies.

    upper is the analytic bound 1 / ((1-gamma) * min positive mu), valid when
    every reachable state has positive initial mass; enumerated_lower comes
    from exhausting deterministic policy pairs on small instances and is a
    diagnostic only (no tightness claim).
    """
    upper: float | None
    enumerated_lower: float | None
    method: str
    note: str = ""


def _agent_gathers(mdp, policy):
    digits = mdp.digits
    for i, p in enumerate(policy.probs):
        if p.shape != (mdp.n_states, mdp.n_actions[i]):
            raise ValueError(f"agent {i}: policy table {p.shape} does not "
                             f"match ({mdp.n_states}, {mdp.n_actions[i]})")
    return [policy.probs[i][:, digits[:, i]] for i in range(mdp.n_agents)]


def joint_policy_table(mdp, policy):
    """(S, n_joint) table of joint action probabilities under a product policy."""
    gathers = _agent_gathers(mdp, policy)
    table = gathers[0].copy()
    for g in gathers[1:]:
        table *= g
    return table


def _exclusion_tables(mdp, gathers):
    """Per-agent products of everyone else's gathered probabilities."""
    n = mdp.n_agents
    ones = np.ones((mdp.n_states, mdp.n_joint))
    pre = [ones]
    for g in gathers[:-1]:
        pre.append(pre[-1] * g)
    suf = [ones]
    for g in reversed(gathers[1:]):
        suf.append(suf[-1] * g)
    suf.reverse()
    return [pre[i] * suf[i] for i in range(n)]


def exclusion_table(mdp, policy, agent):
    """(S, n_joint) product of all policies except `agent`'s."""
    return _exclusion_tables(mdp, _agent_gathers(mdp, policy))[agent]


def _marginalize(mdp, weighted, agent):
    """Sum a (S, n_joint) table over every agent's action axis except one."""
    shaped = weighted.reshape((mdp.n_states,) + mdp.n_actions)
    axes = tuple(1 + j for j in range(mdp.n_agents) if j != agent)
    return shaped.sum(axis=axes) if axes else shaped.reshape(
        mdp.n_states, mdp.n_actions[agent])


def _flat_transitions(mdp):
    """(S*A, S) dense transition matrix, cached, for fast Q back-ups."""
    cached = getattr(mdp, "_flat_dense", None)
    if cached is None:
        if mdp.n_states * mdp.n_joint * mdp.n_states <= _DENSE_CHAIN_MAX:
            cached = mdp.transitions.toarray()
        else:
            cached = False
        mdp._flat_dense = cached
    return None if cached is False else cached


def induced_chain(mdp, policy):
    """Average the transition tensor and rewards over the joint policy."""
    jt = joint_policy_table(mdp, policy)
    S, A = mdp.n_states, mdp.n_joint
    flat = _flat_transitions(mdp)
    if flat is not None:
        p_pi = (jt.reshape(S, 1, A) @ flat.reshape(S, A, S)).reshape(S, S)
    else:
        W = sp.csr_matrix((jt.ravel(), np.arange(S * A), np.arange(0, S * A + A, A)),
                          shape=(S, S * A))
        p_pi = np.asarray((W @ mdp.transitions).todense())
    r_pi = np.einsum("isa,sa->is", mdp.rewards, jt)
    return InducedChain(p_pi=p_pi, r_pi=r_pi)


class _Solver:
    """Factor (I - gamma * p_pi) once; solve for many right-hand sides."""

    def __init__(self, mdp, p_pi):
        self.gamma = mdp.gamma
        S = mdp.n_states
        if self.gamma == 0.0:
            self._lu = self._sparse = None
        elif S <= DENSE_SOLVE_MAX:
            A = np.eye(S) - self.gamma * p_pi
            self._lu = linalg.lu_factor(A, check_finite=False)
            self._sparse = None
        else:
            A = sp.identity(S, format="csc") - self.gamma * sp.csc_matrix(p_pi)
            self._sparse = spla.splu(A)
            self._lu = None

    def solve(self, b):
        if self.gamma == 0.0:
            return np.array(b)
        if self._lu is not None:
            return linalg.lu_solve(self._lu, b, check_finite=False)
        if b.ndim == 1:
            return self._sparse.solve(b)
        return np.stack([self._sparse.solve(b[:, k]) for k in range(b.shape[1])],
                        axis=1)

    def solve_transposed(self, b):
        if self.gamma == 0.0:
            return np.array(b)
        if self._lu is not None:
            return linalg.lu_solve(self._lu, b, trans=1, check_finite=False)
        return self._sparse.solve(b, trans="T")


def evaluate(target, policy, want_q=False, agents=None):
    """Full exact evaluation of a product policy.

    `target` may be a MultiAgentMDP or an Environment (in which case the
    stage potential and its marginal advantages are evaluated as well).
    `agents` restricts the per-agent work; unrequested pieces are None.
    """
    env = target if hasattr(target, "mdp") else None
    mdp = env.mdp if env is not None else target
    S, A, n = mdp.n_states, mdp.n_joint, mdp.n_agents
    active = list(range(n)) if agents is None else list(agents)

    gathers = _agent_gathers(mdp, policy)
    jt = gathers[0].copy()
    for g in gathers[1:]:
        jt *= g

    flat = _flat_transitions(mdp)
    if flat is not None:
        p_pi = (jt.reshape(S, 1, A) @ flat.reshape(S, A, S)).reshape(S, S)
    else:
        W = sp.csr_matrix((jt.ravel(), np.arange(S * A), np.arange(0, S * A + A, A)),
                          shape=(S, S * A))
        p_pi = np.asarray((W @ mdp.transitions).todense())
    solver = _Solver(mdp, p_pi)

    with_potential = env is not None and env.stage_potential is not None
    rhs_cols = [np.einsum("sa,sa->s", mdp.rewards[i], jt) for i in active]
    if with_potential:
        rhs_cols.append((jt * env.stage_potential).sum(axis=1))
    v = np.zeros((n, S))
    potential = potential_mu = None
    if rhs_cols:
        sol = solver.solve(np.stack(rhs_cols, axis=1))
        for k, i in enumerate(active):
            v[i] = sol[:, k]
        if with_potential:
            potential = sol[:, -1]
            potential_mu = float(mdp.mu @ potential)

    d = solver.solve_transposed((1.0 - mdp.gamma) * mdp.mu)

    adv = [np.zeros((S, a)) for a in mdp.n_actions]
    q_marg = [np.zeros((S, a)) for a in mdp.n_actions]
    adv_potential = None
    q_all = np.zeros((n, S, A)) if want_q else None
    if active or with_potential:
        excl = _exclusion_tables(mdp, gathers)
    if with_potential:
        if flat is not None:
            pphi = (flat @ potential).reshape(S, A)
        else:
            pphi = (mdp.transitions @ potential).reshape(S, A)
        q_phi = env.stage_potential + mdp.gamma * pphi
        adv_potential = [np.zeros((S, a)) for a in mdp.n_actions]
        for i in range(n):
            adv_potential[i] = (_marginalize(mdp, excl[i] * q_phi, i)
                                - potential[:, None])
    for i in active:
        if flat is not None:
            pv = (flat @ v[i]).reshape(S, A)
        else:
            pv = (mdp.transitions @ v[i]).reshape(S, A)
        q_i = mdp.rewards[i] + mdp.gamma * pv
        if want_q:
            q_all[i] = q_i
        q_marg[i] = _marginalize(mdp, excl[i] * q_i, i)
        adv[i] = q_marg[i] - v[i][:, None]

    return EvalReport(
        v=v, adv_marginal=tuple(adv), visitation=d, q=q_all,
        q_marginal=tuple(q_marg), potential=potential, potential_mu=potential_mu,
        adv_potential=tuple(adv_potential) if adv_potential is not None else None)


def value_functions(mdp, policy):
    """Per-agent value vectors V_i(s), solved as (I - gamma*P_pi) V = r_pi."""
    chain = induced_chain(mdp, policy)
    solver = _Solver(mdp, chain.p_pi)
    v = solver.solve(chain.r_pi.T).T
    residual = np.abs(chain.r_pi - (v - mdp.gamma * (v @ chain.p_pi.T))).max()
    if residual > 1e-8:
        raise ArithmeticError(f"value solve residual {residual}")
    return v


def q_and_advantage(mdp, policy, agent):
    """Joint-action Q table and marginal advantage for one agent."""
    report = evaluate(mdp, policy, want_q=True, agents=[agent])
    return report.q[agent], report.adv_marginal[agent]


def visitation(mdp, policy):
    """Discounted state visitation distribution from mu under the policy."""
    chain = induced_chain(mdp, policy)
    solver = _Solver(mdp, chain.p_pi)
    return solver.solve_transposed((1.0 - mdp.gamma) * mdp.mu)


def potential_value(env, policy):
    """Per-state potential and its mu-average for an environment with a stage potential."""
    if env.stage_potential is None:
        raise ValueError(f"environment {env.label!r} has no stage potential")
    report = evaluate(env, policy, agents=[])
    return report.potential, report.potential_mu


def reachable_states(mdp):
    """States reachable from the support of mu under some action sequence."""
    P = mdp.transitions
    seen = np.zeros(mdp.n_states, dtype=bool)
    frontier = list(np.flatnonzero(mdp.mu > 0))
    for s in frontier:
        seen[s] = True
    while frontier:
        s = frontier.pop()
        lo = P.indptr[s * mdp.n_joint]
        hi = P.indptr[(s + 1) * mdp.n_joint]
        for nxt in np.unique(P.indices[lo:hi]):
            if not seen[nxt]:
                seen[nxt] = True
                frontier.append(int(nxt))
    return np.flatnonzero(seen)


def _deterministic_policies(mdp):
    """Yield every deterministic product policy as a JointPolicy."""
    from itertools import product
    from .core import JointPolicy
    per_agent = []
    for a in mdp.n_actions:
        tables = []
        for assignment in product(range(a), repeat=mdp.n_states):
            t = np.zeros((mdp.n_states, a))
            t[np.arange(mdp.n_states), assignment] = 1.0
            tables.append(t)
        per_agent.append(tables)
    for combo in product(*per_agent):
        yield JointPolicy(list(combo), validate=False)


def deterministic_policy_count(mdp):
    count = 1
    for a in mdp.n_actions:
        count *= a ** mdp.n_states
    return count


def mismatch_bound(mdp, enumeration_budget=64, policy_budget=4096):
    """Analytic upper bound and (for tiny MDPs) an enumerated lower bound on
    the distribution mismatch coefficient.

    The upper bound uses d(s) >= (1-gamma)*mu(s) and d <= 1, hence requires
    mu(s) > 0 on every reachable state.  Enumeration runs when the
    state-action product fits `enumeration_budget` and the deterministic
    policy count fits `policy_budget`.
    """
    reach = reachable_states(mdp)
    positive = mdp.mu > 0
    upper = None
    note = ""
    if np.all(positive[reach]):
        upper = 1.0 / ((1.0 - mdp.gamma) * mdp.mu[positive].min())
        method = "analytic"
    else:
        bad = [int(s) for s in reach if not positive[s]][:5]
        note = (f"states {bad} are reachable but have mu = 0; the visitation "
                f"ratio may be unbounded, supply a bound manually")
        method = "unavailable"

    lower = None
    if (mdp.n_states * mdp.n_joint <= enumeration_budget
            and deterministic_policy_count(mdp) <= policy_budget):
        dists = [visitation(mdp, pi) for pi in _deterministic_policies(mdp)]
        lower = 0.0
        for da in dists:
            for db in dists:
                pos = da > 0
                if np.any(pos & (db <= 0)):
                    lower = np.inf
                    break
                ratio = np.max(da[pos] / db[pos]) if pos.any() else 1.0
                lower = max(lower, float(ratio))
            if lower == np.inf:
                break
        if upper is not None:
            method = "analytic+enumeration"
        else:
            method = "enumeration"
    return MismatchBound(upper=upper, enumerated_lower=lower, method=method,
                         note=note)
