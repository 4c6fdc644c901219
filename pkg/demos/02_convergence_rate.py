"""
Measuring the strong convergence rate in the scale separation
==============================================================

The headline quantity: sup over checkpoints of E|X^eps - Xbar|^2 as the
scale separation eps shrinks.  Synchronous coupling (same slow-noise keys
in both runs) makes the difference a pure averaging error, and the fitted
log-log slope comes out near 1.

This is a reduced rig for a quick run; the acceptance battery runs the
full one (N = 2000, M = 32, eps down to 2^-9).
"""

from twoscale import convergence_study, linear_benchmark

model = linear_benchmark()
report = convergence_study(
    model,
    epsilon_grid=[2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7],
    horizon=1.0, n_particles=400, n_replicates=8, seed=7)

print("   eps        sup-t error      replicate SE")
for e, err, se in zip(report.epsilon_grid, report.errors,
                      report.standard_errors):
    print(f"{e:9.6f}   {err:12.4e}   {se:12.4e}")

lo, hi = report.slope_ci
print(f"\nfitted slope: {report.slope:.4f}  (bootstrap 95% CI "
      f"[{lo:.4f}, {hi:.4f}])")
print(f"step rule: {report.h_rule}")

# halving eps should roughly halve the squared error at order-1 rate
ratios = [report.errors[i] / report.errors[i + 1]
          for i in range(len(report.errors) - 1)]
print("error ratios between adjacent eps:",
      ", ".join(f"{r:.3f}" for r in ratios))
