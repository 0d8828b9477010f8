#!/usr/bin/env python3
"""Exact evaluation and the potential identity.

Builds the six-vertex routing game, evaluates a random profile, and then
probes the central structural fact: the discounted Rosenthal sum tracks
value differences exactly for deviations from reaction-free profiles, and
genuinely fails once another agent's policy reads the deviator's position.
The failing example reproduces a closed form you can check by hand.
"""

import numpy as np

import mpglearn as m
from mpglearn.environments import CostDescriptor, DagEdge, DagSpec

rng = np.random.Generator(np.random.Philox(key=np.uint64(0)))

# --- build and evaluate -------------------------------------------------------

env = m.build_scg(m.layered_dag([2, 2]), n_agents=3, gamma=0.99,
                  reachable_only=True)
mdp = env.mdp
print(f"{env.label}: {mdp.n_states} states, joint actions {mdp.n_joint}")

policy = env.sample_base_profile(rng)
report = m.evaluate(env, policy, want_q=True)
start = mdp.state_labels.index(("s", "s", "s"))
print(f"values at the start configuration: {report.v[:, start].round(4)}")
print(f"potential at start: {report.potential[start]:.4f}, "
      f"visitation sums to {report.visitation.sum():.12f}")

# marginal advantages are zero-mean under each agent's own policy
worst = max(float(np.abs((p * a).sum(axis=1)).max())
            for p, a in zip(policy.probs, report.adv_marginal))
print(f"max |E_pi[advantage]| over agents and states: {worst:.2e}")

# --- the identity on certified profiles ---------------------------------------

dev = m.check_potential(env, trials=50, seed=1)
print(f"\n50 unilateral deviations from own-vertex profiles: "
      f"max |dPhi - dV_i| = {dev:.2e}")

# --- a reactive profile breaks it ----------------------------------------------
#
# Two agents.  Only the edge C->t costs anything: 0.5 alone, 0.9 shared.
# Agent 1 heads to U with probability p.  Agent 2 starts at U and then
# *reacts*: it moves to C when agent 1 sits at U, else to D.  Changing p is
# a unilateral deviation by agent 1, but it drags agent 2's realized play
# along, and the potential difference overshoots the value difference by
# gamma^2 * 0.5 * dp.

Z = CostDescriptor("table", (0.0, 0.0))
E = CostDescriptor("table", (0.5, 0.9))
spec = DagSpec(
    vertices=("s", "U", "L", "C", "D", "t"), source="s", sink="t",
    edges=(DagEdge("s", "U", Z), DagEdge("s", "L", Z),
           DagEdge("U", "C", Z), DagEdge("U", "D", Z),
           DagEdge("L", "C", Z), DagEdge("L", "D", Z),
           DagEdge("C", "t", E), DagEdge("D", "t", Z)))
env2 = m.build_scg(spec, n_agents=2, gamma=0.99)
mdp2 = env2.mdp
labels = mdp2.state_labels


def reactive_profile(p):
    t1 = np.tile([1.0, 0.0], (mdp2.n_states, 1))
    t2 = np.tile([1.0, 0.0], (mdp2.n_states, 1))
    for k, lab in enumerate(labels):
        if lab == "terminal":
            continue
        x1, x2 = lab
        if x1 == "s":
            t1[k] = (p, 1 - p)
        if x2 in "UL":
            t2[k] = (1.0, 0.0) if x1 == "U" else (0.0, 1.0)
    return m.JointPolicy([t1, t2], validate=False)


s0 = labels.index(("s", "s"))
lo, hi = reactive_profile(0.3), reactive_profile(0.8)
ra = m.evaluate(env2, lo, agents=[0])
rb = m.evaluate(env2, hi, agents=[0])
dphi = rb.potential[s0] - ra.potential[s0]
dv = rb.v[0][s0] - ra.v[0][s0]
print(f"\nreactive non-deviator: dPhi = {dphi:.6f}, dV_1 = {dv:.6f}")
print(f"mismatch = {dphi - dv:.6f}, closed form gamma^2*0.5*dp = "
      f"{0.99 ** 2 * 0.5 * 0.5:.6f}")

# the same sweep with own-vertex (non-reactive) agent 2 is exact
own = env2.sample_base_profile(rng)


def with_start_mix(policy, p):
    t1 = np.array(policy.probs[0])
    for k, lab in enumerate(labels):
        if lab != "terminal" and lab[0] == "s":
            t1[k] = (p, 1 - p)
    return policy.replace_agent(0, t1)


ra = m.evaluate(env2, with_start_mix(own, 0.3), agents=[0])
rb = m.evaluate(env2, with_start_mix(own, 0.8), agents=[0])
mismatch = np.abs((rb.potential - ra.potential) - (rb.v[0] - ra.v[0])).max()
print(f"same deviation against an own-vertex profile: "
      f"max mismatch over states = {mismatch:.2e}")
