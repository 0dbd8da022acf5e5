"""Characteristics and the energy along them.

Along a characteristic of u_t + u + H1(x, p) = 0 the energy obeys
dH/ds = -H, so its sign never changes and it decays like e^-s.  We
integrate a few characteristics and compare, then trace a calibrated
curve of the semigroup back in time and compare it with the
characteristic through its endpoint.
"""

import numpy as np

from weakkam import CharState, Torus1, backtrack_calibrated, discounted_mechanical, evolve, integrate
from weakkam.characteristics import backward_from_terminal

h = discounted_mechanical(V="cos")
print("energy along characteristics vs H0 e^-t at t = 2")
for x0, p0, u0 in ((0.1, 1.0, 0.0), (0.4, -2.0, 1.0), (0.7, 0.5, -2.0)):
    tr = integrate(h, CharState(x0, p0, u0), 2.0, 1e-3)
    E = tr.energies
    print(f"  H0 = {E[0]:+.4f}   H(2) = {E[-1]:+.6f}   H0 e^-2 = {E[0] * np.exp(-2):+.6f}")

grid = Torus1(512)
t, dt = 0.3, 1e-3
state = evolve(grid.sample(lambda x: np.sin(2 * np.pi * x)), t, dt, h, keep_history=True)
print("\ncalibrated curves vs characteristics (max position gap)")
for x in (0.2, 0.5, 0.8):
    c = backtrack_calibrated(state, x, h)
    back = backward_from_terminal(h, c.gamma[-1], c.p_along[-1], c.u_along[-1], t, dt)
    gap = np.max(np.abs((back.x - c.gamma + 0.5) % 1.0 - 0.5))
    print(f"  x = {x}: {gap:.2e}")
