"""Solve the market at the Table 3 estimates and inspect the equilibrium.

Run: python3 demos/01_equilibrium.py
"""
import numpy as np

from repmarket import TABLE3, LOW, HIGH, StateSpace, build_model, solve_equilibrium, verify_uniqueness_at

# The 21 x 6 estimation grid: ratings 3.0..5.0 in steps of 0.1, six sales buckets.
model = build_model(TABLE3, StateSpace.estimation())
sol = solve_equilibrium(model)
print(f"solved in {sol.iterations} iterations, max residual {sol.max_residual():.1e}")

e = model.space.entry_state
print(f"entrant belief {sol.beliefs[e]:.4f} (prior {TABLE3.alpha * TABLE3.theta_high + (1 - TABLE3.alpha) * TABLE3.theta_low:.4f})")
print(f"entrant cutoffs: low {sol.cutoffs[LOW, e]:.4f}, high {sol.cutoffs[HIGH, e]:.4f}")
print(f"weekly exit probability at entry: low {sol.exit_prob[LOW, e]:.4f}, high {sol.exit_prob[HIGH, e]:.4f}")

# Beliefs as a rating x bucket table: reputation is worth more to sellers with many sales.
B = sol.beliefs.reshape(model.space.n_ratings, model.space.n_buckets)
print("beliefs at the top three ratings, by sales bucket:")
for i in range(-3, 0):
    print(f"  rating {model.space.ratings.points[i]:.1f}: " + " ".join(f"{b:.3f}" for b in B[i]))

# Local uniqueness diagnostics at the weekly discount factor.
rep = verify_uniqueness_at(sol, model)
print("weighted dominance of the cutoff block:", rep["dg1_dominance"]["dominant"])
print("weighted dominance of the mass block:  ", rep["dg2_transpose_dominance"]["dominant"])

# A second fixed point: start from the no-exit equilibrium reached at a higher entry share.
other = solve_equilibrium(model, initial=solve_equilibrium(model.with_params(alpha=0.35)))
print(f"second equilibrium: residual {other.max_residual():.1e}, "
      f"largest exit probability {other.exit_prob.max():.1e} vs {sol.exit_prob.max():.3f}")
print("max belief gap between the two:", float(np.max(np.abs(other.beliefs - sol.beliefs))))
