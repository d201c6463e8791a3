"""A point has zero capacity in the plane, and the decay is slow.

The capacity potential of B(0, eps) inside B(0, 1) is M log|x| / log eps.
Its energy 2 pi M^2 / log(1/eps) tends to zero, and so does its L1 norm
away from the hole, at the logarithmic rate 1/log(1/eps).

Run: python demos/capacity_of_a_point.py
"""
import math

from harmaplab.capacity import flux_constancy, isoperimetric_ode_check, l1_convergence, run_capacity
from harmaplab.grid import Domain

K = Domain.annulus((0.0, 0.0), 0.4, 0.95)
runs = [run_capacity(eps, h=1 / 128, K=K) for eps in (0.2, 0.1, 0.05, 0.025)]
table = l1_convergence(runs, K)

print(" eps     E        exact    k       L1(K)    bound")
for run, row in zip(runs, table["rows"]):
    exact = 2 * math.pi / math.log(1 / run.eps)
    print(f" {run.eps:<6}  {run.E:.4f}   {exact:.4f}   {run.k:6.2f}  {row['L1']:.4f}   {row['bound']:.4f}")

first, last = runs[0].eps, runs[-1].eps
print(f"\nL1 final/first {table['final_over_first']:.3f}; "
      f"1/log(1/eps) predicts {math.log(1 / first) / math.log(1 / last):.3f}")

# The flux through every level set equals E/M.
flux = flux_constancy(runs[1])
print(f"flux spread over 64 levels: {flux['spread']:.2%}, coarea error {flux['coarea_error']:.2%}")
print("isoperimetric differential inequality holds:",
      all(isoperimetric_ode_check(r)["ok"] for r in runs))
