"""A one-dimensional laminate, start to finish.

For g(x) = 2 + cos x the effective coefficient is the harmonic mean, sqrt(3).
The lowest Bloch band starts like g0 t^2; the cubic term vanishes (real scalar
coefficients), so the first correction is the quartic one. We compute it from
the correctors and compare with a polynomial fit of the refined band itself.
"""

import numpy as np

from homog import Germ, load_scenario
from homog import dynamics as dyn

sc = load_scenario("1d_scalar")
op = sc.operator()
cs = op.correctors()
print(f"modes in the cutoff ball: {len(op.modes)}")
print(f"g0 = {cs.g0[0, 0].real:.15f}   sqrt(3) = {np.sqrt(3):.15f}")
print(f"Voigt {cs.g_bar[0, 0].real:.4f} >= g0 >= Reuss {cs.g_lower[0, 0].real:.4f}")

germ = Germ(op, cs)
gp = germ.full_at(np.array([1.0]))
b = gp.branches[0]
print(f"germ gamma = {b.gamma:.12f}, cubic mu = {b.mu:.1e}, quartic nu = {b.nu:.12f}")

(fit,) = dyn.fit_band_expansion(op, germ, np.array([1.0]))
print(f"band fit:   gamma = {fit.gamma:.12f}, nu = {fit.nu:.12f}")
print("relative errors (gamma, mu, nu):", ", ".join(f"{e:.1e}" for e in fit.rel_errors(1e-3)))

# E1(k)/k^2 creeps towards g0 as k -> 0
for k in (0.3, 0.1, 0.03, 0.01):
    e1 = dyn.lowest_bands(op, [k], 1)[0][0]
    print(f"k = {k:5.2f}   E1/k^2 = {e1 / k**2:.10f}")
