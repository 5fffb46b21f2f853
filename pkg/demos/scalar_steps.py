"""
One step of each iteration by hand
==================================

g = h = 1/2 (.)^2, L = 1 and no smooth term, started from (x, u) = (1, 1)
with both stepsizes 1/2. The two methods share the primal step and differ
only in the point fed to the dual step: 2 x+ - x for Vu-Condat, x for the
AHU-type update.
"""

import numpy as np

from delaypd import (BlockDims, BlockLinearMap, HistoryBuffer, NoDelay, PrimalDualPoint,
                     ProblemSpec, Quadratic, SmoothOracle, SolverConfig, StepsizePlan,
                     derive_coupling_sets, local_view, reference_solution, run, step_ahu,
                     step_vu_condat)

dims = BlockDims([1], [1])
problem = ProblemSpec(dims, SmoothOracle.zero(dims), [Quadratic([1.0])], [Quadratic([1.0])],
                      BlockLinearMap.from_dense(dims, np.eye(1)))
plan = StepsizePlan.manual(0.5, 0.5, 1)

z = PrimalDualPoint.from_arrays(dims, np.array([1.0]), np.array([1.0]))
buf = HistoryBuffer(dims, 0)
buf.record(z.x.data, z.u.data)
view = local_view(buf, NoDelay(), derive_coupling_sets(problem), 0)

x, u = step_vu_condat(problem, 0, z, view, plan)
print(f"Vu-Condat: x+ = {x[0]:.6f} (1/3), u+ = {u[0]:.6f} (5/9)")
x, u = step_ahu(problem, 0, z, view, plan)
print(f"AHU-type:  x+ = {x[0]:.6f} (1/3), u+ = {u[0]:.6f} (1)")

# both iterations settle at the saddle point (0, 0)
z_star = reference_solution(problem)
for alg in ("vu_condat_delayed", "ahu_delayed"):
    log = run(problem, SolverConfig(alg, plan, NoDelay(), 60, z_star=z_star), z0=z)
    print(f"{alg}: distance after 60 steps {log.primal_err[-1]:.2e}")
