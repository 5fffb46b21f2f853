"""
Distributed logistic regression
===============================

Each agent holds some samples and one slice of the weight vector, so every
loss term reads every slice. With random activation an iteration costs
fewer local computations; the log counts them, which gives the right axis
for comparing the randomized and the deterministic runs.
"""

import numpy as np

from delaypd import (SolverConfig, compute_constants, make_schedule, reference_solution, run,
                     stepsizes_random, stepsizes_total)
from delaypd.experiments import build_logistic

problem = build_logistic({"m": 3, "samples": 10, "dim": 6, "lam": 0.1, "seed": 7})
constants = compute_constants(problem)
print(f"coupling: {constants.coupling}, mu_g = {constants.mu_g}, mu_h = {constants.mu_h}")

z_star = reference_solution(problem, "synchronous_polish")
B = 2
sched = make_schedule("uniform_random", B, seed=1)

det = run(problem, SolverConfig("ahu_delayed", stepsizes_total(constants, B=B), sched, 1500,
                                z_star=z_star))
p = np.array([0.5, 0.5, 0.5])
rnd = run(problem, SolverConfig("ahu_randomized", stepsizes_random(constants, B, p),
                                make_schedule("uniform_random", B, seed=1), 3000,
                                activation_probs=p, seed=3, z_star=z_star))

# error against local computations per agent
for budget in (500, 1000, 1500):
    kd = budget
    kr = int(np.searchsorted(np.asarray(rnd.activations) / problem.m, budget))
    kr = min(kr, len(rnd.primal_err) - 1)
    print(f"{budget} computations per agent: deterministic {det.primal_err[kd]:.2e}, "
          f"randomized {rnd.primal_err[kr]:.2e}")
print("weights:", np.round(z_star.x.data, 4))
