"""Operator-norm error scan for the 1D laminate.

sup_k || (e^{-i tau A(k)/eps^2} - e^{-i tau A0(k)/eps^2}) R(k, eps)^{s/2} ||
over a polar k grid, tabulated against the two normalizations (1 + tau) eps and
(1 + tau^1/2) eps. Because N = 0 here, the square-root law is the stable one at s = 2.
"""

from homog import Germ, load_scenario
from homog import dynamics as dyn

sc = load_scenario("1d_scalar")
op = sc.operator()
germ = Germ(op)
ts, thetas = dyn.polar_k_grid(op, 24)
res = dyn.scan_errors(op, germ.cs.g0, (0.1, 0.05, 0.025), (1.0, 10.0, 100.0), (3.0, 2.0),
                      ts, thetas)

for s in (3.0, 2.0):
    print(f"\ns = {s:g}")
    print("   eps     tau      sup value   /(1+tau)eps   /(1+tau^1/2)eps")
    rows = [r for r in res.sup_records() if r.s == s]
    for r in rows:
        print(f"{r.eps:6.3f} {r.tau:7.0f}   {r.value:10.3e}   {r.ratio_linear:11.4f}"
              f"   {r.ratio_sqrt:15.4f}")
    lin = [r.ratio_linear for r in rows]
    sq = [r.ratio_sqrt for r in rows]
    print(f"variation: linear {max(lin) / min(lin):.2f}x   sqrt {max(sq) / min(sq):.2f}x")
