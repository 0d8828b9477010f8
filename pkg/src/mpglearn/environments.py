"""Benchmark Markov potential game environments.

Builders for the routing (stochastic congestion) game on a DAG, the two-state
distancing game, and randomly generated common-reward (cooperative) games.
Each environment bundles its MDP with a stage potential table.

A note on what the stage potential certifies.  The bundled potentials satisfy
the value-difference identity

    Phi^(pi_i', pi_-i)(s) - Phi^(pi)(s) = V_i^(pi_i', pi_-i)(s) - V_i^(pi)(s)

exactly, for every state and every deviation of a single agent i, provided
the remaining agents' strategies do not react to agent i: in the routing game
the others must condition only on their own vertex, and in the distancing
game they must play the same distribution in both states.  (The deviating
agent is unrestricted.)  If some other agent's policy reads the deviator's
coordinates, its realized play shifts when the deviator's policy shifts, the
Rosenthal cancellation breaks, and the identity picks up an error of the
order of the costs involved; demos/01_potential_identity.py shows a concrete
failure.  Common-reward games satisfy the identity for arbitrary product
policies.  Environment.sample_base_profile draws from the certified class,
which is what the potential checker uses.
"""

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import JointPolicy, MultiAgentMDP, _frozen


@dataclass(frozen=True)
class Environment:
    """An MDP plus an optional stage potential table (n_states, n_joint)."""
    mdp: MultiAgentMDP
    stage_potential: np.ndarray | None
    label: str
    base_profile_sampler: object = field(default=None, repr=False, compare=False)

    def sample_base_profile(self, rng):
        """A random profile from the class certified by the stage potential."""
        if self.base_profile_sampler is not None:
            return self.base_profile_sampler(rng)
        return random_product_policy(self.mdp, rng)


def random_product_policy(mdp, rng):
    """Dirichlet(1,...,1) rows for every agent and state."""
    return JointPolicy(
        [rng.dirichlet(np.ones(a), size=mdp.n_states) for a in mdp.n_actions],
        validate=False)


# --- cost descriptors and DAG specs ------------------------------------------

class DagSpecError(ValueError):
    pass


@dataclass(frozen=True)
class CostDescriptor:
    """Per-edge reward as a function of the edge load.

    kinds: inverse_load(base) -> base / load
           linear(a, b)       -> a - b * (load - 1)
           table(v1, ..., vk) -> v_load
    """
    kind: str
    params: tuple

    def cost(self, load):
        if self.kind == "inverse_load":
            return self.params[0] / load
        if self.kind == "linear":
            return self.params[0] - self.params[1] * (load - 1)
        if self.kind == "table":
            if load > len(self.params):
                raise ValueError(f"table cost has no entry for load {load}")
            return self.params[load - 1]
        raise ValueError(f"unknown cost kind {self.kind!r}")

    def table(self, n_agents):
        """Rewards for loads 0..n_agents (index 0 unused, set to 0)."""
        t = np.zeros(n_agents + 1)
        for l in range(1, n_agents + 1):
            t[l] = self.cost(l)
        return t

    def __str__(self):
        inner = ",".join(repr(p) for p in self.params)
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class DagEdge:
    frm: str
    to: str
    cost: CostDescriptor


@dataclass(frozen=True)
class DagSpec:
    """A routing network: DAG with a designated source and sink.

    Parallel edges between the same pair of vertices are allowed; each edge
    is a separate congestible resource.
    """
    vertices: tuple
    source: str
    sink: str
    edges: tuple
    n_agents: int | None = None

    def out_edges(self):
        """Edge indices grouped by tail vertex, in declaration order."""
        out = {v: [] for v in self.vertices}
        for k, e in enumerate(self.edges):
            out[e.frm].append(k)
        return out

    def validate(self):
        problems = []
        index = {v: i for i, v in enumerate(self.vertices)}
        for e in self.edges:
            if e.frm not in index or e.to not in index:
                problems.append(f"edge {e.frm} -> {e.to} references unknown vertex")
        if self.source not in index:
            problems.append(f"source {self.source!r} is not a vertex")
        if self.sink not in index:
            problems.append(f"sink {self.sink!r} is not a vertex")
        if problems:
            raise DagSpecError("; ".join(problems))
        # cycle detection by depth-first search, reporting one back edge
        color = {v: 0 for v in self.vertices}
        out = self.out_edges()
        stack = []

        def visit(v):
            color[v] = 1
            stack.append(v)
            for k in out[v]:
                w = self.edges[k].to
                if color[w] == 1:
                    raise DagSpecError(
                        f"cycle through back edge {self.edges[k].frm} -> {w}")
                if color[w] == 0:
                    visit(w)
            stack.pop()
            color[v] = 2

        for v in self.vertices:
            if color[v] == 0:
                visit(v)
        forward = {self.source}
        changed = True
        while changed:
            changed = False
            for e in self.edges:
                if e.frm in forward and e.to not in forward:
                    forward.add(e.to)
                    changed = True
        backward = {self.sink}
        changed = True
        while changed:
            changed = False
            for e in self.edges:
                if e.to in backward and e.frm not in backward:
                    backward.add(e.frm)
                    changed = True
        for v in self.vertices:
            if v not in forward or v not in backward:
                problems.append(f"vertex {v} is not on any {self.source} -> "
                                f"{self.sink} path")
        for v in self.vertices:
            if v != self.sink and not out[v]:
                problems.append(f"non-sink vertex {v} has no outgoing edge")
        if problems:
            raise DagSpecError("; ".join(problems))


_EDGE_RE = re.compile(
    r"^(\S+)\s*->\s*(\S+)\s+cost\s*=\s*([A-Za-z_]\w*)\(([^)]*)\)$")
_HEADER_RE = re.compile(r"^(source|sink|agents)\s*=\s*(\S+)$")


def parse_dag_spec(text, name="<dag>"):
    """Parse the line-oriented DAG format.

    Header lines: source=NAME, sink=NAME, agents=N (agents optional).
    Edge lines:   FROM -> TO cost=<kind>(<comma separated params>)
    Lines starting with '#' and blank lines are ignored.  Diagnostics carry
    1-based line numbers.
    """
    source = sink = None
    n_agents = None
    vertices = []
    seen = set()
    edges = []

    def add_vertex(v):
        if v not in seen:
            seen.add(v)
            vertices.append(v)

    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _HEADER_RE.match(line)
        if m:
            key, val = m.group(1), m.group(2)
            if key == "source":
                source = val
            elif key == "sink":
                sink = val
            else:
                try:
                    n_agents = int(val)
                except ValueError:
                    raise DagSpecError(f"{name}: line {no}: agents must be an "
                                       f"integer, got {val!r}")
            continue
        m = _EDGE_RE.match(line)
        if m:
            frm, to, kind, raw_params = m.groups()
            if kind not in ("inverse_load", "linear", "table"):
                raise DagSpecError(f"{name}: line {no}: unknown cost kind "
                                   f"{kind!r}")
            try:
                params = tuple(float(p) for p in raw_params.split(",") if p.strip())
            except ValueError:
                raise DagSpecError(f"{name}: line {no}: cannot parse cost "
                                   f"parameters {raw_params!r}")
            if not params:
                raise DagSpecError(f"{name}: line {no}: cost needs parameters")
            add_vertex(frm)
            add_vertex(to)
            edges.append(DagEdge(frm, to, CostDescriptor(kind, params)))
            continue
        raise DagSpecError(f"{name}: line {no}: cannot parse {line!r}")

    if source is None or sink is None:
        raise DagSpecError(f"{name}: missing source= or sink= header")
    spec = DagSpec(vertices=tuple(vertices), source=source, sink=sink,
                   edges=tuple(edges), n_agents=n_agents)
    try:
        spec.validate()
    except DagSpecError as exc:
        raise DagSpecError(f"{name}: {exc}")
    return spec


def layered_dag(layer_sizes, costs=None, default_base=1.0):
    """Fully connected layered DAG: source, hidden layers, sink.

    `costs` optionally maps (from_name, to_name) to a CostDescriptor; other
    edges get inverse_load(default_base).
    """
    names = [["s"]]
    for li, size in enumerate(layer_sizes):
        names.append([f"v{li}_{j}" for j in range(size)])
    names.append(["t"])
    edges = []
    for a, b in zip(names[:-1], names[1:]):
        for u in a:
            for w in b:
                cd = None if costs is None else costs.get((u, w))
                if cd is None:
                    cd = CostDescriptor("inverse_load", (default_base,))
                edges.append(DagEdge(u, w, cd))
    vertices = tuple(v for layer in names for v in layer)
    spec = DagSpec(vertices=vertices, source="s", sink="t", edges=tuple(edges))
    spec.validate()
    return spec


def parallel_dag(bases, kind="inverse_load"):
    """Source and sink joined by parallel edges, one per entry of `bases`."""
    edges = tuple(DagEdge("s", "t", CostDescriptor(kind, (b,) if kind != "table"
                                                   else tuple(b)))
                  for b in bases)
    spec = DagSpec(vertices=("s", "t"), source="s", sink="t", edges=edges)
    spec.validate()
    return spec


# --- stochastic congestion game ----------------------------------------------

def build_scg(spec, n_agents=None, gamma=0.99, reachable_only=False,
              mu="start", goal="absorb", return_reward=0.0,
              state_budget=300_000):
    """Markov congestion game: states are joint vertex configurations.

    Each agent's action chooses an outgoing edge of its current vertex
    (indices past the out-degree are clamped to the last edge, so every agent
    has the same action count A = max out-degree).  An agent on an edge with
    load l receives that edge's cost at l; agents at the sink take a
    zero-reward no-op.  With goal="absorb" the all-at-sink configuration
    moves to an absorbing terminal state; goal="return" instead sends agents
    at the sink back to the source along a constant-reward edge.  The stage
    potential is the Rosenthal sum over this step's edge loads.

    reachable_only=True enumerates only configurations reachable from the
    start instead of all |V|^n tuples; sampled-mode learning traces are
    unaffected because unvisited states never update.
    """
    spec.validate()
    if n_agents is None:
        n_agents = spec.n_agents
    if n_agents is None:
        raise ValueError("number of agents not given by spec or argument")
    n = int(n_agents)
    V = len(spec.vertices)
    vindex = {v: i for i, v in enumerate(spec.vertices)}
    source = vindex[spec.source]
    sink = vindex[spec.sink]

    edges = list(spec.edges)
    if goal == "return":
        if not (0.0 <= return_reward <= 1.0):
            raise ValueError("return_reward must lie in [0, 1]")
        edges.append(DagEdge(spec.sink, spec.source,
                             CostDescriptor("table", (return_reward,) * n)))
    elif goal != "absorb":
        raise ValueError(f"unknown goal behavior {goal!r}")
    n_edges = len(edges)
    edge_to = np.array([vindex[e.to] for e in edges], dtype=np.int64)

    cost_table = np.zeros((n_edges, n + 1))
    for k, e in enumerate(edges):
        t = e.cost.table(n)
        if t[1:].min() < 0.0 or t[1:].max() > 1.0:
            bad = 1 + int(np.argmax((t[1:] < 0) | (t[1:] > 1)))
            raise ValueError(f"edge {e.frm} -> {e.to}: cost {e.cost} gives "
                             f"{t[bad]!r} at load {bad}, outside [0, 1]")
        cost_table[k] = t
    rosenthal = np.cumsum(cost_table, axis=1)  # (n_edges, n+1)

    out = spec.out_edges()
    if goal == "return":
        out[spec.sink] = [n_edges - 1]
    n_act = max(len(out[v]) for v in spec.vertices if out[v])
    # action k at vertex v follows its k-th outgoing edge, clamped; -1 = no-op
    act_edge = np.full((V, n_act), -1, dtype=np.int64)
    for v, ks in out.items():
        if ks:
            vi = vindex[v]
            for a in range(n_act):
                act_edge[vi, a] = ks[min(a, len(ks) - 1)]

    n_actions = (n_act,) * n
    n_joint = n_act ** n
    digits = np.stack(np.unravel_index(np.arange(n_joint), n_actions), axis=1)
    radix = V ** np.arange(n - 1, -1, -1, dtype=np.int64)
    terminal_needed = goal == "absorb"

    def config_code(verts):
        return int(np.dot(verts, radix))

    start = np.full(n, source, dtype=np.int64)
    all_sink_code = config_code(np.full(n, sink, dtype=np.int64))

    if reachable_only:
        codes = [config_code(start)]
        code_index = {codes[0]: 0}
        queue = [0]
        configs = [start.copy()]
        while queue:
            idx = queue.pop(0)
            verts = configs[idx]
            if terminal_needed and code_index.get(all_sink_code) == idx:
                continue
            E = act_edge[verts[None, :].repeat(n_joint, axis=0), digits]
            nxt = np.where(E >= 0, edge_to[E], verts[None, :])
            next_codes = nxt @ radix
            for c in sorted(set(int(x) for x in next_codes)):
                if c not in code_index:
                    if len(codes) + 1 > state_budget:
                        raise ValueError(f"state budget {state_budget} exceeded")
                    code_index[c] = len(codes)
                    codes.append(c)
                    configs.append(np.array(np.unravel_index(c, (V,) * n),
                                            dtype=np.int64))
                    queue.append(code_index[c])
        n_configs = len(codes)
    else:
        n_configs = V ** n
        if n_configs + 1 > state_budget:
            raise ValueError(f"state budget {state_budget} exceeded: "
                             f"|V|^n = {n_configs}")
        code_index = None  # config code is the state index
        configs = None

    S = n_configs + (1 if terminal_needed else 0)
    terminal = n_configs if terminal_needed else None

    rewards = np.zeros((n, S, n_joint))
    potential = np.zeros((S, n_joint))
    next_idx = np.empty((S, n_joint), dtype=np.int64)
    labels = []
    rows_rep = np.repeat(np.arange(n_joint), n)

    for s in range(n_configs):
        verts = (configs[s] if reachable_only else
                 np.array(np.unravel_index(s, (V,) * n), dtype=np.int64))
        labels.append(tuple(spec.vertices[v] for v in verts))
        code = codes[s] if reachable_only else s
        if terminal_needed and code == all_sink_code:
            next_idx[s, :] = terminal
            continue
        E = act_edge[verts[None, :].repeat(n_joint, axis=0), digits]
        loads = np.zeros((n_joint, n_edges + 1), dtype=np.int64)
        np.add.at(loads, (rows_rep, E.ravel() + 1), 1)
        loads = loads[:, 1:]
        for i in range(n):
            e = E[:, i]
            moving = e >= 0
            li = loads[np.arange(n_joint), np.where(moving, e, 0)]
            rewards[i, s] = np.where(moving, cost_table[e, li], 0.0)
        potential[s] = rosenthal[np.arange(n_edges)[None, :], loads].sum(axis=1)
        nxt = np.where(E >= 0, edge_to[E], verts[None, :])
        next_codes = nxt @ radix
        if reachable_only:
            next_idx[s] = [code_index[int(c)] for c in next_codes]
        else:
            next_idx[s] = next_codes

    if terminal_needed:
        labels.append("terminal")
        next_idx[terminal, :] = terminal

    data = np.ones(S * n_joint)
    transitions = sp.csr_matrix(
        (data, next_idx.ravel(), np.arange(0, S * n_joint + 1)),
        shape=(S * n_joint, S))

    mu_vec = np.zeros(S)
    start_idx = code_index[config_code(start)] if reachable_only \
        else config_code(start)
    if mu == "start":
        mu_vec[start_idx] = 1.0
    elif mu == "uniform":
        mu_vec[:] = 1.0 / S
    else:
        raise ValueError(f"unknown mu mode {mu!r}")

    mdp = MultiAgentMDP(n_actions, rewards, transitions, gamma, mu_vec,
                        state_labels=labels)

    vertex_of_agent = np.empty((S, n), dtype=np.int64)
    for s in range(n_configs):
        verts = (configs[s] if reachable_only else
                 np.array(np.unravel_index(s, (V,) * n), dtype=np.int64))
        vertex_of_agent[s] = verts
    if terminal_needed:
        vertex_of_agent[terminal] = sink

    def sample_own_vertex_profile(rng, _vmap=vertex_of_agent, _n_act=n_act,
                                  _V=V, _n=n):
        tables = []
        for i in range(_n):
            per_vertex = rng.dirichlet(np.ones(_n_act), size=_V)
            tables.append(per_vertex[_vmap[:, i]])
        return JointPolicy(tables, validate=False)

    name = f"scg(n={n}, |V|={V}, gamma={gamma})"
    return Environment(mdp=mdp, stage_potential=_frozen(potential), label=name,
                       base_profile_sampler=sample_own_vertex_profile)


# --- distancing game ----------------------------------------------------------

@dataclass(frozen=True)
class DistancingParams:
    """Two-state facility game: a safe state and a penalized spread state.

    Reward for picking facility k is weight_k times the head count at k,
    minus a constant penalty in the spread state, affinely rescaled into
    [0, 1].  The safe state switches to spread when any facility holds more
    than spread_trigger agents; spread returns to safe only when every
    facility holds at most return_trigger agents.
    """
    n_agents: int = 8
    n_facilities: int = 4
    weights: tuple | None = None
    penalty: float = 0.5
    spread_trigger: int = 4
    return_trigger: int = 2
    gamma: float = 0.99

    def resolved_weights(self):
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
        else:
            w = tuple(0.1 * (k + 1) / self.n_agents
                      for k in range(self.n_facilities))
        if len(w) != self.n_facilities:
            raise ValueError("need one weight per facility")
        if any(b <= a for a, b in zip(w, w[1:])):
            raise ValueError(f"weights must be strictly increasing, got {w}")
        if w[0] <= 0:
            raise ValueError("weights must be positive")
        return w

    def check(self):
        if self.n_agents < 1 or self.n_facilities < 2:
            raise ValueError("need at least one agent and two facilities")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        if self.spread_trigger < 1 or self.return_trigger < 1:
            raise ValueError("triggers must be positive")
        self.resolved_weights()


SAFE, SPREAD = 0, 1


def build_distancing(params, mu="safe"):
    """Build the two-state distancing game with its congestion stage potential."""
    params.check()
    n, F = params.n_agents, params.n_facilities
    w = np.array(params.resolved_weights())
    c = float(params.penalty)
    n_joint = F ** n
    digits = np.stack(np.unravel_index(np.arange(n_joint), (F,) * n), axis=1)

    counts = np.zeros((n_joint, F), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(n_joint), n), digits.ravel()), 1)

    raw_safe = np.empty((n, n_joint))
    for i in range(n):
        k = digits[:, i]
        raw_safe[i] = w[k] * counts[np.arange(n_joint), k]
    raw = np.stack([raw_safe, raw_safe - c], axis=1)  # (n, 2, n_joint)

    tri = counts * (counts + 1) / 2.0
    phi_safe = tri @ w
    phi_raw = np.stack([phi_safe, phi_safe - c])      # (2, n_joint)

    lo, hi = raw.min(), raw.max()
    if hi - lo < 1e-12:
        raise ValueError("degenerate reward range, rescale impossible")
    alpha = 1.0 / (hi - lo)
    beta = -lo / (hi - lo)
    rewards = alpha * raw + beta
    if rewards.min() < -1e-12 or rewards.max() > 1 + 1e-12:
        raise ValueError("rescaled rewards escape [0, 1]")
    rewards = np.clip(rewards, 0.0, 1.0)
    potential = alpha * phi_raw + beta

    max_count = counts.max(axis=1)
    from_safe = np.where(max_count > params.spread_trigger, SPREAD, SAFE)
    from_spread = np.where(max_count <= params.return_trigger, SAFE, SPREAD)
    next_idx = np.stack([from_safe, from_spread])     # (2, n_joint)
    transitions = sp.csr_matrix(
        (np.ones(2 * n_joint), next_idx.ravel(), np.arange(0, 2 * n_joint + 1)),
        shape=(2 * n_joint, 2))

    if mu == "safe":
        mu_vec = np.array([1.0, 0.0])
    elif mu == "uniform":
        mu_vec = np.array([0.5, 0.5])
    else:
        raise ValueError(f"unknown mu mode {mu!r}")

    mdp = MultiAgentMDP((F,) * n, rewards, transitions, params.gamma, mu_vec,
                        state_labels=("safe", "spread"))

    def sample_state_blind_profile(rng, _F=F, _n=n):
        tables = []
        for _ in range(_n):
            row = rng.dirichlet(np.ones(_F))
            tables.append(np.vstack([row, row]))
        return JointPolicy(tables, validate=False)

    name = f"distancing(n={n}, facilities={F}, gamma={params.gamma})"
    return Environment(mdp=mdp, stage_potential=_frozen(potential), label=name,
                       base_profile_sampler=sample_state_blind_profile)


# --- common-reward games -------------------------------------------------------

def build_cooperative(n_agents, n_states, n_actions, gamma, seed,
                      mu="uniform"):
    """Random common-reward game: every agent receives the same reward.

    These are Markov potential games for arbitrary product policies (the
    potential is the shared value), which makes them the strongest testbed
    for gradient and smoothness identities.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    acts = (n_actions,) * n_agents
    n_joint = int(np.prod(acts))
    common = rng.uniform(0.0, 1.0, size=(n_states, n_joint))
    rewards = np.repeat(common[None, :, :], n_agents, axis=0)
    dense = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    if mu == "uniform":
        mu_vec = np.full(n_states, 1.0 / n_states)
    else:
        mu_vec = np.asarray(mu, dtype=float)
    mdp = MultiAgentMDP(acts, rewards, dense, gamma, mu_vec)
    name = f"cooperative(n={n_agents}, S={n_states}, A={n_actions}, seed={seed})"
    return Environment(mdp=mdp, stage_potential=_frozen(common), label=name,
                       base_profile_sampler=None)
