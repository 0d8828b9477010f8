"""Monte Carlo policy evaluation from episodic mini-batches.

Randomness comes from counter-based Philox streams keyed by
(seed, episode, stream), where stream 0..n-1 drives each agent's action
draws and stream n drives the environment (initial state and transitions).
Episodes are therefore independent of each other and of execution order:
sampling a batch in parallel (or stepping all of its episodes in lockstep,
as the estimator does) is bit-identical to sampling episodes one at a time,
and identical (mdp, policy, config) inputs reproduce the same EvalReport.
"""

from dataclasses import dataclass

import numpy as np

from .core import EvalReport

_STREAM_BITS = 8
_MAX_STREAMS = 1 << _STREAM_BITS


@dataclass(frozen=True)
class SampleConfig:
    """Episodic estimation protocol: horizon, batch size, seed, estimator.

    Discounted returns are truncated at the horizon (matching the episodic
    update protocol; the truncation bias is deliberate and documented).
    estimator chooses how returns are attributed to states and
    (state, action) pairs: "first_visit" (default) or "every_visit".
    """
    horizon: int = 20
    batch: int = 20
    seed: int = 0
    estimator: str = "first_visit"

    def check(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.estimator not in ("first_visit", "every_visit"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


class _StreamBank:
    """One reusable Philox generator, re-keyed per (seed, episode, stream)."""

    def __init__(self, seed):
        self.seed = np.uint64(seed)
        self._bg = np.random.Philox(key=np.array([self.seed, 0],
                                                 dtype=np.uint64))
        self._gen = np.random.Generator(self._bg)

    def uniforms(self, episode, tag, count):
        st = self._bg.state
        st["state"]["key"][0] = self.seed
        st["state"]["key"][1] = np.uint64((int(episode) << _STREAM_BITS) | tag)
        st["state"]["counter"][:] = 0
        st["buffer_pos"] = 4
        self._bg.state = st
        return self._gen.random(count)


def _padded_cumsum(policy, n_actions):
    """(n, S, A_max) per-state cdf tables, padded by repeating the last column."""
    a_max = max(n_actions)
    n = len(policy.probs)
    S = policy.probs[0].shape[0]
    out = np.empty((n, S, a_max))
    for i, p in enumerate(policy.probs):
        c = np.cumsum(p, axis=1)
        out[i, :, :c.shape[1]] = c
        if c.shape[1] < a_max:
            out[i, :, c.shape[1]:] = c[:, -1:]
    return out


def _sample_batch(mdp, policy, horizon, seed, episode_offset, batch,
                  cum_all=None):
    """Step `batch` episodes in lockstep; returns (states, actions, rewards)
    with shapes (T, B), (T, B, n), (T, B, n)."""
    if mdp.n_agents + 1 > _MAX_STREAMS:
        raise ValueError("too many agents for the stream layout")
    n, T, B = mdp.n_agents, horizon, batch
    bank = _StreamBank(seed)
    agent_u = np.empty((T, B, n))
    env_u = np.empty((T + 1, B))
    for b in range(B):
        ep = episode_offset + b
        for i in range(n):
            agent_u[:, b, i] = bank.uniforms(ep, i, T)
        env_u[:, b] = bank.uniforms(ep, n, T + 1)

    if cum_all is None:
        cum_all = _padded_cumsum(policy, mdp.n_actions)
    mu_cdf = np.cumsum(mdp.mu)
    s = np.searchsorted(mu_cdf, env_u[0] * mu_cdf[-1], side="right")
    s = np.minimum(s, mdp.n_states - 1).astype(np.int64)

    next_det = mdp.deterministic_next()
    P = mdp.transitions
    row_cdf = None
    if next_det is None:
        from .exact import _flat_transitions
        flat_dense = _flat_transitions(mdp)
        if flat_dense is not None:
            row_cdf = getattr(mdp, "_flat_cdf", None)
            if row_cdf is None:
                row_cdf = np.cumsum(flat_dense, axis=1)
                mdp._flat_cdf = row_cdf
    weights = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        weights[i] = weights[i + 1] * mdp.n_actions[i + 1]

    states = np.empty((T, B), dtype=np.int64)
    actions = np.empty((T, B, n), dtype=np.int64)
    rewards = np.empty((T, B, n))
    for t in range(T):
        states[t] = s
        rows = cum_all[:, s, :]                       # (n, B, A_max)
        target = agent_u[t].T * rows[:, :, -1]        # (n, B)
        acts = (rows <= target[:, :, None]).sum(axis=2)
        actions[t] = acts.T
        joint = actions[t] @ weights                  # (B,)
        rewards[t] = mdp.rewards[:, s, joint].T
        flat = s * mdp.n_joint + joint
        if next_det is not None:
            s = next_det[flat]
        elif row_cdf is not None:
            # counting entries <= target over the dense cdf matches the
            # sparse searchsorted draw exactly (zero columns repeat the
            # previous cdf value and are skipped by construction)
            cdfs = row_cdf[flat]
            tgt = env_u[t + 1] * cdfs[:, -1]
            s = (cdfs <= tgt[:, None]).sum(axis=1)
        else:
            nxt = np.empty(B, dtype=np.int64)
            for b in range(B):
                lo, hi = P.indptr[flat[b]], P.indptr[flat[b] + 1]
                cdf = np.cumsum(P.data[lo:hi])
                k = np.searchsorted(cdf, env_u[t + 1, b] * cdf[-1],
                                    side="right")
                nxt[b] = P.indices[lo + min(k, hi - lo - 1)]
            s = nxt
    return states, actions, rewards


def sample_episode(mdp, policy, horizon, seed, episode=0):
    """Roll one episode of fixed length.

    Returns (states, actions, rewards) with shapes (T,), (T, n), (T, n).
    The initial state follows mu, each agent draws from its own policy row
    independently, and the next state follows the joint transition row.
    Deterministic given (seed, episode), and identical to the corresponding
    episode of any batch containing it.
    """
    states, actions, rewards = _sample_batch(mdp, policy, horizon, seed,
                                             episode, 1)
    return states[:, 0], actions[:, 0], rewards[:, 0]


def estimate_eval(mdp, policy, cfg, episode_offset=0):
    """Estimate values, marginal advantages and visitation from a mini-batch.

    V(s) averages discounted returns from visits to s (first or every visit
    per cfg.estimator); the marginal Q of agent i at (s, a) averages returns
    from visits where the agent played a.  Advantages are Q - V where both
    were visited and 0 (flagged in visited_pairs) otherwise, so a state whose
    batch actions were unanimous contributes an exactly-zero advantage.
    Visitation is the normalized discounted state count.  Episode k of the
    batch uses stream index episode_offset + k, letting callers draw fresh
    episodes across iterations from one seed.
    """
    cfg.check()
    n, S = mdp.n_agents, mdp.n_states
    T, B = cfg.horizon, cfg.batch
    gamma = mdp.gamma
    first = cfg.estimator == "first_visit"

    states, actions, rewards = _sample_batch(mdp, policy, T, cfg.seed,
                                             episode_offset, B)
    returns = np.empty((T, B, n))
    acc = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        acc *= gamma
        acc += rewards[t]
        returns[t] = acc

    disc = gamma ** np.arange(T)
    d_acc = np.bincount(states.ravel(),
                        weights=np.broadcast_to(disc[:, None], (T, B)).ravel(),
                        minlength=S)

    # column-major ravel puts each episode's steps in time order, so
    # np.unique(..., return_index) lands on first visits
    ep_state = states + S * np.arange(B)[None, :]
    flat_F = ep_state.ravel(order="F")
    if first:
        keys, idx = np.unique(flat_F, return_index=True)
        t_idx, b_idx = idx % T, idx // T
        s_part = keys % S
        v_cnt = np.bincount(s_part, minlength=S).astype(float)
        v_sum = np.zeros((n, S))
        for i in range(n):
            v_sum[i] = np.bincount(s_part, weights=returns[t_idx, b_idx, i],
                                   minlength=S)
    else:
        s_part = flat_F % S
        v_cnt = np.bincount(s_part, minlength=S).astype(float)
        v_sum = np.zeros((n, S))
        for i in range(n):
            v_sum[i] = np.bincount(s_part,
                                   weights=returns[:, :, i].ravel(order="F"),
                                   minlength=S)

    visited_states = v_cnt > 0
    v = np.zeros((n, S))
    v[:, visited_states] = v_sum[:, visited_states] / v_cnt[visited_states]

    q_marg, adv, visited_pairs = [], [], []
    for i in range(n):
        a_i = mdp.n_actions[i]
        pair = ep_state * a_i + actions[:, :, i]
        pair_F = pair.ravel(order="F")
        if first:
            keys, idx = np.unique(pair_F, return_index=True)
            local = keys % (S * a_i)
            cnt = np.bincount(local, minlength=S * a_i).astype(float)
            qs = np.bincount(local, weights=returns[idx % T, idx // T, i],
                             minlength=S * a_i)
        else:
            local = pair_F % (S * a_i)
            cnt = np.bincount(local, minlength=S * a_i).astype(float)
            qs = np.bincount(local, weights=returns[:, :, i].ravel(order="F"),
                             minlength=S * a_i)
        cnt = cnt.reshape(S, a_i)
        qs = qs.reshape(S, a_i)
        mask = cnt > 0
        qm = np.zeros((S, a_i))
        qm[mask] = qs[mask] / cnt[mask]
        ad = np.zeros((S, a_i))
        ad[mask] = qm[mask] - np.broadcast_to(v[i][:, None], (S, a_i))[mask]
        q_marg.append(qm)
        adv.append(ad)
        visited_pairs.append(mask)

    total = d_acc.sum()
    visitation = d_acc / total if total > 0 else d_acc
    return EvalReport(v=v, adv_marginal=tuple(adv), visitation=visitation,
                      q=None, q_marginal=tuple(q_marg),
                      visited_states=visited_states,
                      visited_pairs=tuple(visited_pairs))
