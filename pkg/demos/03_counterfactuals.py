"""Lifetime profits, returns to reputation, removing ratings and the value of a fresh identity.

Run: python3 demos/03_counterfactuals.py
"""
import numpy as np

from repmarket import RatingGrid, StateSpace, build_model, solve_equilibrium
from repmarket.analysis import (
    expected_entry_profit,
    no_rating_counterfactual,
    returns_to_reputation,
    sybil_attack_value,
)

model = build_model(space=StateSpace.estimation())
sol = solve_equilibrium(model)

for t in ("low", "high"):
    p = expected_entry_profit(sol, model, t)
    print(f"{t:>4s}-quality entrant: value {p['value']:.3f} = ${p['dollars']:,.0f}")

# A 0.01 rating drop needs a grid fine enough to resolve it.
fine = build_model(space=StateSpace(RatingGrid.linspace(4.0, 5.0, 101), model.space.sales))
fsol = solve_equilibrium(fine)
ret = returns_to_reputation(fsol, fine, 5.00, 4.99)
for t in ("low", "high"):
    print(f"rating 5.00 -> 4.99, {t}: loses {100 * ret[t]['pct_loss']:.2f}% (${ret[t]['npv_loss_dollars']:.2f})")

cf = no_rating_counterfactual(model, baseline=sol)
for key in ("baseline", "no_rating"):
    h = cf[key]["high"]
    print(f"{key:>9s}: high-type weekly survival {h['survival']:.4f}, entry value {h['entry_profit']:.4f}")

# Abandoning the worst reputation for a new identity, net of a $500 fee.
worst = int(model.space.index(0, model.space.n_buckets - 1))
for fee in (0.0, 500.0):
    v = sybil_attack_value(sol, model, worst, "low", entry_fee_dollars=fee)
    print(f"fresh identity from the worst state, fee ${fee:.0f}: {v:+.2f} dollars")
print("states where a low type gains from re-entry at a $500 fee:",
      int(np.sum([sybil_attack_value(sol, model, w, "low") > 0 for w in range(model.n_states)])))
