#!/usr/bin/env python3
"""Equilibrium computation and verification on a stage congestion game.

Two agents choose between two identical routes; sharing halves the reward.
The pure equilibria are the two anti-coordinated profiles.  Natural-gradient
runs from different interior starts settle on different equilibria, and the
verification toolkit certifies each limit: best-response gaps, fixed-point
residuals, and the smoothness inequality.
"""

import numpy as np

import mpglearn as m

env = m.build_scg(m.parallel_dag([1.0, 1.0]), n_agents=2, gamma=0.0,
                  mu="uniform", reachable_only=True)
mdp = env.mdp
start = mdp.state_labels.index(("s", "s"))

eta = 0.9 * m.max_step_size(mdp)
print(f"{env.label}: eta = {eta:.2e}")

cfg = m.AlgoConfig("inpg", eta=eta, max_iters=150_000,
                   convergence_threshold=1e-10)
for seed in range(4):
    trace = m.run(env, cfg, m.random_logits(mdp, seed=seed))
    profile = tuple(int(np.argmax(p[start])) for p in trace.final_policy.probs)
    gap = m.nash_gap(mdp, trace.final_policy)
    residual = m.fixed_point_residual(mdp, trace.final_policy)
    print(f"seed {seed}: {trace.status} after {trace.n_iterations} updates, "
          f"limit profile {profile}, nash gap {gap.overall_gap:.1e}, "
          f"fixed-point residual {residual:.1e}")

# best response against a hand-picked profile
uniform = m.softmax_policy(m.uniform_logits(mdp))
act, v_br = m.best_response(mdp, uniform, agent=0)
print(f"\nbest response to the uniform profile: action {act[start]} at the "
      f"start, value {v_br[start]:.3f}")
rep = m.nash_gap(mdp, uniform)
print(f"uniform profile nash gap: {rep.overall_gap:.3f} "
      f"(mu-weighted {rep.mu_gap:.3f})")

# the full verification battery, as the CLI's verify subcommand runs it
report = m.verify_environment(env, seed=0, potential_trials=50,
                              gradient_points=2, smoothness_pairs=20)
print()
print(report.text(), end="")
