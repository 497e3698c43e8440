"""How far from equilibrium does the exponential decay persist?

Scales the sperm-excess perturbation by increasing epsilon on a coarse
grid and reports whether the run stays global and which decay fits remain
consistent with the predicted rate.
"""

from ksns.diagnostics import epsilon_sweep, measure_stokes_rate
from ksns.presets import preset


def build(eps):
    return preset("sperm_excess", eps, cells=32, t_end=12.0)


stokes = measure_stokes_rate(build(0.01).domain)
for row in epsilon_sweep(build, [0.001, 0.01, 0.1, 1.0, 5.0], stokes.rate):
    verdicts = ", ".join(f"{k}:{v}" for k, v in row.verdicts.items())
    print(f"eps={row.epsilon:<6g} global={row.global_run!s:<5} {verdicts}")
