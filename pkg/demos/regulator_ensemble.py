"""Feedback shrinks the spread of an uncertain response.

A scalar regulator with ``a = b = q = r = 1`` has Riccati solution ``1 + sqrt 2``.
Without process noise the initial spread decays with the closed-loop pole; with
noise, the stationary spread under feedback sits below the open-loop one.
"""

import numpy as np

from uccd import dynamics as D
from uccd import usets as U

spec = D.LqrSpec.scalar()
P = D.solve_care(spec)
print(f"P={P[0, 0]:.10f} residual={D.care_residual(spec, P):.1e} K={D.lqr_gain(spec, P)[0, 0]:.6f}")
quiet = D.lqr_rollout_ensemble(spec, None, [U.Gaussian(1.0, 0.5)], n_paths=5000, seed=0)
for k in np.linspace(0, len(quiet.t) - 1, 6).astype(int):
    print(f"t={quiet.t[k]:.2f} mean={quiet.mean[k, 0]:+.4f} std={quiet.std[k, 0]:.4f}")

stable = D.LqrSpec.scalar(a=-1.0)
grid = np.linspace(0.0, 8.0, 801)
for fb in (False, True):
    ens = D.lqr_rollout_ensemble(stable, [[1.0]], [0.0], grid, 5000, seed=4, feedback=fb)
    print(f"noisy, feedback={fb}: stationary std {ens.std[-1, 0]:.4f}")
