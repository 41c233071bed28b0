"""Nested fixed point maximum likelihood on a simulated panel.

Run: python3 demos/04_estimation.py          (three free parameters, about a minute)
     python3 demos/04_estimation.py --full   (all ten, several minutes)
"""
import sys

from repmarket import (
    ESTIMATED_FIELDS,
    TABLE3,
    EstimationConfig,
    SimulationConfig,
    StateSpace,
    build_model,
    maximize_likelihood,
    perturbed_start,
    simulate_panel,
    solve_equilibrium,
    total_loglik,
)

full = "--full" in sys.argv
model = build_model(space=StateSpace.estimation())
panel = simulate_panel(solve_equilibrium(model), model, SimulationConfig(n_vendors=2000, seed=11))

free = ESTIMATED_FIELDS if full else ("alpha", "mu_c", "sigma_p")
cfg = EstimationConfig(free_parameters=free)
start = perturbed_start(cfg, TABLE3, 0.2)
cfg = EstimationConfig(free_parameters=free, start={f: getattr(start, f) for f in free})
print(f"log likelihood at the truth {total_loglik(panel, TABLE3, cfg):.2f}, at the start {total_loglik(panel, start, cfg):.2f}")

res = maximize_likelihood(panel, cfg)
print(f"converged {res.converged} after {res.evaluation_count} evaluations, log likelihood {res.loglik:.2f}")
print(f"{'parameter':>12s} {'truth':>8s} {'start':>8s} {'estimate':>9s} {'SE':>8s}")
for f in free:
    se = res.standard_errors.get(f, float("nan"))
    print(f"{f:>12s} {getattr(TABLE3, f):8.4f} {getattr(start, f):8.4f} {getattr(res.point_estimates, f):9.4f} {se:8.4f}")
