"""
The frozen fast process and the averaged drift
==============================================

With the slow arguments (t, x, mu) held fixed, the fast dynamics is an
ergodic diffusion.  Its invariant law defines the averaged drift: the slow
drift integrated against it.  Three views of the same object:

  1. sample the invariant law and look at its moments,
  2. estimate the averaged drift by an ergodic time average and compare
     with the closed form,
  3. watch E b(Y_s) relax toward the averaged drift at rate beta/2.
"""

import numpy as np

from twoscale import (ParticleCloud, ergodic_decay, estimate_bbar,
                      linear_benchmark, sample_invariant)

model = linear_benchmark()
x = np.array([0.8])
mu = ParticleCloud(np.full((4, 1), 0.3))

# 1. invariant samples: for the benchmark the frozen process is an
#    Ornstein-Uhlenbeck with mean c1*x + c2*mean(mu) and variance
#    sigma_y^2 / (2 kappa)
cloud = sample_invariant(model, 0.0, x, mu, seed=1, n_samples=400)
print("invariant sample mean   :", f"{cloud.mean[0]:+.4f}",
      " (closed form +0.4750)")
print("invariant sample var    :",
      f"{cloud.second_moment - cloud.mean[0]**2:.4f}", " (closed form 0.2500)")

# 2. ergodic estimate of the averaged drift vs the closed form
est = estimate_bbar(model, 0.0, x, mu, seed=2)
truth = model.analytic_bbar(0.0, x.reshape(1, 1), mu)[0, 0]
print(f"\naveraged drift estimate : {est.value[0]:+.5f} "
      f"+- {est.standard_error[0]:.5f}")
print(f"closed form             : {truth:+.5f}")
print(f"agreement               : {abs(est.value[0] - truth):.2e} "
      f"({abs(est.value[0] - truth) / est.standard_error[0]:.2f} SE)")

# 3. exponential relaxation of the drift average from a far start
curve = ergodic_decay(model, 0.0, x, mu, y0=10.0, s_max=4.0, n_traj=4000,
                      seed=3)
print("\n   s     |E b(Y_s) - bbar|    MC floor")
for i in range(0, len(curve.s), 7):
    print(f"{curve.s[i]:5.2f}   {curve.deviation[i]:14.5e}"
          f"   {curve.mc_floor[i]:10.2e}")
clear = curve.deviation > 10 * curve.mc_floor
rate = -np.polyfit(curve.s[clear], np.log(curve.deviation[clear]), 1)[0]
print(f"\nfitted decay rate: {rate:.3f}  (beta/2 = {model.beta / 2})")
