"""Tabular multi-agent MDPs, product policies, softmax logits.

All container types freeze their arrays after construction, so instances are
immutable value objects and safe to share across threads.  Joint actions are
encoded in mixed radix with agent 0 as the most significant digit: the joint
index of per-agent actions (a_0, ..., a_{n-1}) is

    a_0 * |A_1|*...*|A_{n-1}| + a_1 * |A_2|*...*|A_{n-1}| + ... + a_{n-1}

which matches numpy's C-order ravel_multi_index.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

PROB_TOL = 1e-12

# dense (S, A, S) transition tensors are only materialized below this size
DENSE_TRANSITION_MAX = 1 << 22


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, order="C", copy=True)
    a.flags.writeable = False
    return a


class MultiAgentMDP:
    """A finite n-agent MDP with joint-action reward and transition tables.

    rewards      float array (n_agents, n_states, n_joint), entries in [0, 1]
    transitions  CSR matrix (n_states * n_joint, n_states); row s*n_joint + a
                 holds the distribution over successor states of (s, a).  A
                 dense (S, A, S) array is also accepted and converted.
    gamma        discount factor in [0, 1)
    mu           initial state distribution, length n_states

    Episodic problems are modeled with an absorbing zero-reward terminal
    state; rewards outside [0, 1] are rejected rather than clamped.
    """

    def __init__(self, n_actions, rewards, transitions, gamma, mu,
                 state_labels=None, validate=True):
        self.n_actions = tuple(int(a) for a in n_actions)
        if not self.n_actions or any(a < 1 for a in self.n_actions):
            raise ValueError("need at least one action per agent")
        self.n_agents = len(self.n_actions)
        self.n_joint = int(np.prod(self.n_actions))
        self.gamma = float(gamma)
        self.mu = _frozen(mu)
        self.n_states = self.mu.shape[0]
        self.rewards = _frozen(rewards)
        if self.rewards.shape != (self.n_agents, self.n_states, self.n_joint):
            raise ValueError(
                f"rewards shape {self.rewards.shape} != "
                f"{(self.n_agents, self.n_states, self.n_joint)}")
        if isinstance(transitions, np.ndarray):
            if transitions.shape != (self.n_states, self.n_joint, self.n_states):
                raise ValueError(f"transition tensor shape {transitions.shape}")
            transitions = sp.csr_matrix(
                transitions.reshape(self.n_states * self.n_joint, self.n_states))
        self.transitions = transitions.tocsr()
        if self.transitions.shape != (self.n_states * self.n_joint, self.n_states):
            raise ValueError(f"transition matrix shape {self.transitions.shape}")
        self.state_labels = tuple(state_labels) if state_labels is not None else None
        if self.state_labels is not None and len(self.state_labels) != self.n_states:
            raise ValueError("state_labels length mismatch")
        self._digits = None
        self._dense = None
        self._next_state = None
        if validate:
            problems = validate_mdp(self)
            if problems:
                raise ValueError("invalid MDP:\n" + "\n".join(problems))

    @property
    def digits(self):
        """(n_joint, n_agents) table decoding each joint index into per-agent actions."""
        if self._digits is None:
            d = np.stack(np.unravel_index(np.arange(self.n_joint), self.n_actions),
                         axis=1)
            self._digits = _frozen(d, dtype=np.int64)
        return self._digits

    def joint_index(self, actions):
        return int(np.ravel_multi_index(tuple(actions), self.n_actions))

    def split_joint(self, joint):
        return tuple(int(x) for x in np.unravel_index(int(joint), self.n_actions))

    def dense_transitions(self):
        """Transition tensor (S, A, S); only built for small MDPs."""
        if self._dense is None:
            size = self.n_states * self.n_joint * self.n_states
            if size > DENSE_TRANSITION_MAX:
                raise ValueError(f"dense transition tensor too large ({size} entries)")
            self._dense = _frozen(self.transitions.toarray().reshape(
                self.n_states, self.n_joint, self.n_states))
        return self._dense

    def deterministic_next(self):
        """(S*A,) successor index array when all transitions are deterministic, else None."""
        if self._next_state is None:
            P = self.transitions
            nnz = np.diff(P.indptr)
            if np.all(nnz == 1):
                self._next_state = _frozen(P.indices.copy(), dtype=np.int64)
            else:
                self._next_state = False
        return None if self._next_state is False else self._next_state

    def a_max(self):
        return max(self.n_actions)

    def label_of(self, s):
        return self.state_labels[s] if self.state_labels is not None else s

    def __repr__(self):
        return (f"MultiAgentMDP(n_agents={self.n_agents}, n_states={self.n_states}, "
                f"n_actions={self.n_actions}, gamma={self.gamma})")


def validate_mdp(mdp):
    """Collect invariant violations of an MDP as human-readable strings.

    Returns an empty list iff every transition row is a distribution (within
    1e-12), every reward lies in [0, 1], mu is a distribution, and gamma < 1.
    Each violation names the offending index and the magnitude of the defect.
    """
    problems = []
    if not (0.0 <= mdp.gamma < 1.0):
        problems.append(f"gamma = {mdp.gamma} is not in [0, 1)")
    P = mdp.transitions
    if P.nnz and P.data.min() < 0:
        k = int(np.argmin(P.data))
        row = int(np.searchsorted(P.indptr, k, side="right") - 1)
        s, a = divmod(row, mdp.n_joint)
        problems.append(f"negative transition probability {P.data[k]} at "
                        f"(state {s}, joint action {a})")
    row_sums = np.asarray(P.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > PROB_TOL)
    for row in bad[:20]:
        s, a = divmod(int(row), mdp.n_joint)
        problems.append(f"transition row (state {s}, joint action {a}) sums to "
                        f"{row_sums[row]!r}")
    if len(bad) > 20:
        problems.append(f"... and {len(bad) - 20} more transition rows")
    lo, hi = mdp.rewards.min(initial=0.0), mdp.rewards.max(initial=0.0)
    if lo < 0.0 or hi > 1.0:
        idx = np.unravel_index(
            int(np.argmin(mdp.rewards)) if lo < 0.0 else int(np.argmax(mdp.rewards)),
            mdp.rewards.shape)
        val = mdp.rewards[idx]
        problems.append(f"reward {val!r} outside [0, 1] at (agent {idx[0]}, "
                        f"state {idx[1]}, joint action {idx[2]})")
    mu_sum = mdp.mu.sum()
    if abs(mu_sum - 1.0) > PROB_TOL:
        problems.append(f"mu sums to {mu_sum!r}")
    if mdp.mu.min(initial=0.0) < 0:
        problems.append(f"mu has negative entry at state {int(np.argmin(mdp.mu))}")
    return problems


class JointPolicy:
    """A product policy: one (n_states, A_i) row-stochastic table per agent."""

    def __init__(self, probs, validate=True):
        self.probs = tuple(_frozen(p) for p in probs)
        self.n_agents = len(self.probs)
        if validate:
            for i, p in enumerate(self.probs):
                if p.ndim != 2:
                    raise ValueError(f"agent {i}: policy table must be 2-d")
                if p.min(initial=0.0) < 0:
                    s, a = np.unravel_index(int(np.argmin(p)), p.shape)
                    raise ValueError(
                        f"agent {i}: negative probability {p[s, a]!r} at "
                        f"(state {s}, action {a})")
                sums = p.sum(axis=1)
                bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL)
                if bad.size:
                    raise ValueError(
                        f"agent {i}: row for state {bad[0]} sums to {sums[bad[0]]!r}")

    @property
    def n_states(self):
        return self.probs[0].shape[0]

    def is_interior(self, eps=0.0):
        return all(p.min() > eps for p in self.probs)

    def per_agent_l1(self, other):
        """Per-agent L1 distance between whole policy tables (summed over states)."""
        return np.array([np.abs(p - q).sum()
                         for p, q in zip(self.probs, other.probs)])

    def replace_agent(self, agent, table):
        probs = list(self.probs)
        probs[agent] = table
        return JointPolicy(probs)

    def __repr__(self):
        shapes = ", ".join(str(p.shape) for p in self.probs)
        return f"JointPolicy({shapes})"


class Logits:
    """Softmax preimages of a product policy: one (n_states, A_i) table per agent."""

    def __init__(self, theta, validate=True):
        self.theta = tuple(_frozen(t) for t in theta)
        self.n_agents = len(self.theta)
        if validate:
            for i, t in enumerate(self.theta):
                if not np.all(np.isfinite(t)):
                    s, a = np.unravel_index(
                        int(np.argmin(np.isfinite(t))), t.shape)
                    raise ValueError(f"agent {i}: non-finite logit at "
                                     f"(state {s}, action {a})")

    @property
    def n_states(self):
        return self.theta[0].shape[0]

    def flat(self):
        return np.concatenate([t.ravel() for t in self.theta])

    def max_abs_diff(self, other):
        return max(np.abs(t - u).max()
                   for t, u in zip(self.theta, other.theta))

    def __repr__(self):
        shapes = ", ".join(str(t.shape) for t in self.theta)
        return f"Logits({shapes})"


def softmax_policy(logits):
    """Row-wise softmax of each agent's logit table, with max subtraction.

    Rejects non-finite logits, naming the offending index.
    """
    if not isinstance(logits, Logits):
        logits = Logits(logits)
    tables = []
    for t in logits.theta:
        z = t - t.max(axis=1, keepdims=True)
        e = np.exp(z)
        tables.append(e / e.sum(axis=1, keepdims=True))
    return JointPolicy(tables, validate=False)


def uniform_logits(mdp):
    return Logits([np.zeros((mdp.n_states, a)) for a in mdp.n_actions],
                  validate=False)


def random_logits(mdp, seed, scale=1.0):
    """Gaussian logits from a counter-based stream keyed by `seed`."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    return Logits([scale * rng.standard_normal((mdp.n_states, a))
                   for a in mdp.n_actions], validate=False)


def l1_accuracy(policy, reference):
    """Average over agents of the L1 distance between whole policy tables.

        (1/N) * sum_i sum_s sum_a |pi_i(a|s) - ref_i(a|s)|

    The average is over agents only, not states.
    """
    if policy.n_agents != reference.n_agents:
        raise ValueError("policies have different agent counts")
    for i, (p, q) in enumerate(zip(policy.probs, reference.probs)):
        if p.shape != q.shape:
            raise ValueError(f"agent {i}: shape {p.shape} != {q.shape}")
    return float(policy.per_agent_l1(reference).sum() / policy.n_agents)


@dataclass(frozen=True)
class EvalReport:
    """Evaluation of a joint policy: values, advantages, visitation, potential.

    Exact reports satisfy (and tests assert):
      * visitation sums to 1 and every entry is >= (1-gamma)*mu(s) - 1e-10,
      * the marginal advantage of each agent is zero-mean under its own policy.
    Sampled reports carry visited_* masks; unvisited entries are zero-filled.
    """
    v: np.ndarray                       # (n_agents, n_states)
    adv_marginal: tuple                 # per agent (n_states, A_i)
    visitation: np.ndarray              # (n_states,)
    q: np.ndarray | None = None         # (n_agents, n_states, n_joint)
    q_marginal: tuple | None = None     # per agent (n_states, A_i)
    potential: np.ndarray | None = None # (n_states,)
    potential_mu: float | None = None
    adv_potential: tuple | None = None  # per agent (n_states, A_i)
    visited_states: np.ndarray | None = None
    visited_pairs: tuple | None = None

    @property
    def n_agents(self):
        return self.v.shape[0]


def eval_report_violations(report, policy, mdp, tol=1e-10):
    """Invariant check for exact EvalReports; returns a list of violations."""
    problems = []
    total = report.visitation.sum()
    if abs(total - 1.0) > tol:
        problems.append(f"visitation sums to {total!r}")
    floor = (1.0 - mdp.gamma) * mdp.mu - tol
    bad = np.flatnonzero(report.visitation < floor)
    for s in bad[:5]:
        problems.append(f"visitation({s}) = {report.visitation[s]!r} below "
                        f"(1-gamma)*mu = {(1 - mdp.gamma) * mdp.mu[s]!r}")
    for i, (adv, p) in enumerate(zip(report.adv_marginal, policy.probs)):
        mean = np.abs((adv * p).sum(axis=1)).max()
        if mean > tol:
            problems.append(f"agent {i}: advantage mean {mean!r} not zero")
    return problems


# --- structured-text serialization ------------------------------------------
#
# Sections appear in the fixed order [states], [agents], [rewards],
# [transitions], [gamma], [mu].  Numbers are written with repr(), so a
# write -> read -> write cycle reproduces the bytes exactly.

def write_mdp(mdp, path):
    lines = ["[states]", f"count = {mdp.n_states}"]
    if mdp.state_labels is not None:
        for s, lab in enumerate(mdp.state_labels):
            lines.append(f"label {s} = {lab}")
    lines.append("[agents]")
    lines.append(f"count = {mdp.n_agents}")
    lines.append("actions = " + " ".join(str(a) for a in mdp.n_actions))
    lines.append("[rewards]")
    r = mdp.rewards
    for i, s, a in zip(*np.nonzero(r)):
        lines.append(f"{i} {s} {a} {float(r[i, s, a])!r}")
    lines.append("[transitions]")
    P = mdp.transitions.tocoo()
    order = np.lexsort((P.col, P.row))
    for k in order:
        s, a = divmod(int(P.row[k]), mdp.n_joint)
        lines.append(f"{s} {a} {int(P.col[k])} {float(P.data[k])!r}")
    lines.append("[gamma]")
    lines.append(repr(mdp.gamma))
    lines.append("[mu]")
    for s in np.nonzero(mdp.mu)[0]:
        lines.append(f"{int(s)} {float(mdp.mu[s])!r}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return text


class MDPFormatError(ValueError):
    pass


def read_mdp(path, validate=True):
    """Parse the structured-text MDP format written by write_mdp."""
    with open(path) as f:
        raw = f.readlines()
    section = None
    n_states = n_agents = None
    n_actions = None
    labels = {}
    gamma = None
    rewards_entries, transition_entries, mu_entries = [], [], []

    def fail(no, msg):
        raise MDPFormatError(f"{path}: line {no}: {msg}")

    for no, line in enumerate(raw, start=1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("[") and text.endswith("]"):
            section = text[1:-1]
            if section not in ("states", "agents", "rewards", "transitions",
                               "gamma", "mu"):
                fail(no, f"unknown section [{section}]")
            continue
        if section is None:
            fail(no, "content before first section header")
        try:
            if section == "states":
                if text.startswith("count"):
                    n_states = int(text.split("=", 1)[1])
                elif text.startswith("label"):
                    head, lab = text.split("=", 1)
                    labels[int(head.split()[1])] = lab.strip()
                else:
                    fail(no, f"unexpected [states] entry: {text}")
            elif section == "agents":
                if text.startswith("count"):
                    n_agents = int(text.split("=", 1)[1])
                elif text.startswith("actions"):
                    n_actions = tuple(int(x) for x in text.split("=", 1)[1].split())
                else:
                    fail(no, f"unexpected [agents] entry: {text}")
            elif section == "rewards":
                i, s, a, val = text.split()
                rewards_entries.append((int(i), int(s), int(a), float(val)))
            elif section == "transitions":
                s, a, sp_, val = text.split()
                transition_entries.append((int(s), int(a), int(sp_), float(val)))
            elif section == "gamma":
                gamma = float(text)
            elif section == "mu":
                s, val = text.split()
                mu_entries.append((int(s), float(val)))
        except MDPFormatError:
            raise
        except ValueError as exc:
            fail(no, f"cannot parse entry ({exc})")

    if n_states is None:
        raise MDPFormatError(f"{path}: missing [states] count")
    if n_agents is None or n_actions is None:
        raise MDPFormatError(f"{path}: missing [agents] count or actions")
    if len(n_actions) != n_agents:
        raise MDPFormatError(f"{path}: actions list length != agent count")
    if gamma is None:
        raise MDPFormatError(f"{path}: missing [gamma]")
    n_joint = int(np.prod(n_actions))
    rewards = np.zeros((n_agents, n_states, n_joint))
    for i, s, a, val in rewards_entries:
        rewards[i, s, a] = val
    rows = [s * n_joint + a for s, a, _, _ in transition_entries]
    cols = [sp_ for _, _, sp_, _ in transition_entries]
    vals = [v for _, _, _, v in transition_entries]
    transitions = sp.csr_matrix((vals, (rows, cols)),
                                shape=(n_states * n_joint, n_states))
    mu = np.zeros(n_states)
    for s, val in mu_entries:
        mu[s] = val
    state_labels = None
    if labels:
        state_labels = tuple(labels.get(s, str(s)) for s in range(n_states))
    return MultiAgentMDP(n_actions, rewards, transitions, gamma, mu,
                         state_labels=state_labels, validate=validate)


def write_policy(policy, path):
    """Plain-text policy tables; floats use repr() for exact round-trips."""
    lines = [f"agents = {policy.n_agents}"]
    for i, p in enumerate(policy.probs):
        lines.append(f"[agent {i}]")
        lines.append(f"shape = {p.shape[0]} {p.shape[1]}")
        for s in range(p.shape[0]):
            lines.append(" ".join(repr(float(x)) for x in p[s]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_policy(path):
    with open(path) as f:
        raw = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not raw or not raw[0].startswith("agents"):
        raise MDPFormatError(f"{path}: expected 'agents = N' header")
    tables, current, shape = [], None, None
    for line in raw[1:]:
        if line.startswith("[agent"):
            if current is not None:
                tables.append(np.array(current))
            current, shape = [], None
        elif line.startswith("shape"):
            shape = tuple(int(x) for x in line.split("=", 1)[1].split())
        else:
            current.append([float(x) for x in line.split()])
    if current is not None:
        tables.append(np.array(current))
    return JointPolicy(tables)
