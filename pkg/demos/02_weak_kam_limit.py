"""Long-time limit of the calibrated cosine model.

``critical_value`` finds the shift alpha that puts the model at its
critical level, and ``run_to_stationary`` evolves until the solution
stops moving.  The limit is checked against the stationary equation and
against the fixed point reached from the limsup envelope.
"""

import numpy as np

from weakkam import (LimsupOptions, StationaryOptions, Torus1, calibrate_alpha, discounted_mechanical,
                     limsup_analysis, run_to_stationary)

grid = Torus1(256)
h = discounted_mechanical(V="cos")
alpha = calibrate_alpha(h, grid)
print(f"critical shift alpha = {alpha:.8f}")
h = h.calibrated()

phi = grid.sample(lambda x: np.sin(2 * np.pi * x))
rep = run_to_stationary(phi, h, StationaryOptions(dt=2e-3, t_max=30.0))
print(f"stationary after t = {rep.t_star:g}")
print(f"stationary residual: median {rep.median_residual:.2e}, max {rep.max_residual:.2e}")
print("distance of the checkpoints to the limit:")
for row in rep.tail_history[::4]:
    print(f"  t = {row['t']:5.1f}   {row['sup_dist_to_final']:.3e}")

lim = limsup_analysis(None, h, LimsupOptions(dt=2e-3, descent_time=10.0), tail=rep.tail_slices(rep.t_final / 2),
                      strict=False)
print(f"limsup envelope descends to a fixed point {np.max(np.abs(lim.limit.values - rep.u_infty.values)):.2e}"
      " away from the limit")
