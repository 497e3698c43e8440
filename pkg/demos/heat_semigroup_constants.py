"""Empirical constants in the Neumann heat semigroup decay bounds.

For each bound variant the ratio of the left side to
``(1 + t^-sigma) exp(-lambda1 t) |w|_q`` is maximised over probes and a
logarithmic time lattice.  A finite, non-growing supremum means one
constant covers every time; the table shows how it depends on (p, q).
"""

import math

from ksns.grid import BoxDomain
from ksns.semigroup import default_times, standard_probes, verify_lp_lq

dom = BoxDomain.cube(2, 64)
times = default_times(dom)
cases = [
    ("i", math.inf, 1.0),
    ("i", 2.0, 1.0),
    ("i", math.inf, 2.0),
    ("ii", math.inf, 2.0),
    ("iii", 4.0, 2.0),
    ("iv", math.inf, 2.0),
]
print(f"{'variant':>7} {'p':>4} {'q':>4} {'sigma':>6} {'constant':>10}  passed")
for variant, p, q in cases:
    rep = verify_lp_lq(p, q, standard_probes(dom, variant), times, dom, variant)
    print(f"{variant:>7} {p:>4g} {q:>4g} {rep.sigma:>6.2f} {rep.measured_ratio:>10.4f}  {rep.passed}")
