"""Solve the scalar tracking benchmark and watch the iterates converge.

Runs the projected stochastic gradient solver on the scalar-bs benchmark,
prints a convergence trace, and compares the final control against the
known analytical optimum both in the integrated metric and pointwise.
Takes a few seconds single-core.
"""
import numpy as np

from sdeopt.benchmarks import control_error, get_benchmark
from sdeopt.malgpro import solve
from sdeopt.sde_core import build_time_grid

bench = get_benchmark("scalar-bs")
grid = build_time_grid(bench.problem.horizon, steps=100)
reference = bench.analytical_control(grid.nodes[:-1])

result = solve(
    bench.problem,
    grid,
    batch=100,
    rate=1e-2,
    max_iterations=1000,
    master_seed=42,
    reference_control=reference,
)

print(f"stopped after {result.iterations} iterations "
      f"({result.termination_reason})")
print("\n iter      objective      E_c")
stride = max(1, result.iterations // 10)
rows = list(range(0, result.iterations, stride)) + [result.iterations - 1]
for k in sorted(set(rows)):
    print(f"  {k:4d}   {result.objective_trace[k]:11.6f}   "
          f"{result.control_error_trace[k]:.3e}")

final_ec = control_error(result.control.values, reference, grid)
print(f"\nfinal integrated control error: {final_ec:.3e}")
print(f"final sup |u - u*|:             "
      f"{np.abs(result.control.values - reference).max():.3e}")

# pointwise look at a few nodes -- the analytic control decays from 1 to 0
print("\n    t       u(t)     u*(t)")
for j in (0, 25, 50, 75, 99):
    t = grid.nodes[j]
    print(f"  {t:4.2f}   {result.control.values[j, 0]:7.4f}  "
          f"{reference[j, 0]:7.4f}")
