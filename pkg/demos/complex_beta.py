"""Why the cubic term can survive: a complex Hermitian 2D coefficient.

g = [[1, i beta'], [-i beta', 1]] with beta = c (sin x1 + cos 2 x1). The cubic
band coefficient N(theta) equals -alpha/pi theta2^3 with alpha = -(3 pi / 2) c^3,
so the (1 + |tau|) eps error order for the propagator is the right one. The last
part runs the time probe, whose value/eps keeps growing with tau.
"""

import numpy as np

from homog import Germ, load_scenario
from homog import dynamics as dyn
from homog.lattice import sphere_grid

sc = load_scenario("2d_complex_beta", c=0.2)
op = sc.operator(16.0)
germ = Germ(op)
alpha = sc.expect["alpha"]

print("theta               N(theta)          -alpha/pi theta2^3")
for th in sphere_grid(2, 8):
    N = germ.n_operator_at(th, "hat")[0][0, 0].real
    print(f"({th[0]:+.3f}, {th[1]:+.3f})   {N:+.15f}   {-alpha / np.pi * th[1] ** 3:+.15f}")

print("\ntime probe along tau = 1/eps")
print("   tau    value/eps   lower bound   |e^{-i tau mu t^3/eps^2} - 1|")
for tau in (10.0, 20.0, 40.0):
    p = dyn.sharpness_probe_do(op, germ, 1 / tau, tau, "time")
    mod = f"{p.modulus:.4f}" if p.inside_zone else "outside the small-t zone"
    print(f"{tau:6.0f}   {p.ratio:9.4f}   {p.lower_bound:11.4f}   {mod}")
