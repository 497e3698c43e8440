"""Sperm and egg excess runs relax exponentially to the mass-selected state.

Runs both presets on a 64x64 grid, checks the discrete identities, and
fits exponential rates to the late-time sup norms.  The rates printed
should sit at or above the predicted ``min(lambda1, rho_inf)`` (sperm
excess) or ``min(lambda1, m_inf, 1)`` (egg excess), both 1 on [0, pi]^2.
"""

from ksns.diagnostics import NormSeries, check_identities, decay_report, measure_stokes_rate
from ksns.pde_core import run
from ksns.presets import preset

for name in ("sperm_excess", "egg_excess"):
    sc = preset(name, epsilon=0.01, cells=64, t_end=20.0)
    traj = run(sc, keep_states=False)
    ledger = check_identities(traj)
    stokes = measure_stokes_rate(sc.domain)
    rep = decay_report(NormSeries.from_trajectory(traj), sc.domain.lambda1, stokes.rate)
    print(f"== {name}: rho_inf={sc.rho_inf:.6f} m_inf={sc.m_inf:.6f}, {traj.steps} steps")
    print(f"   identities: {'all pass' if ledger.passed else 'failed ' + ', '.join(ledger.failures())}")
    for row in rep.rows():
        if row["verdict"] != "n/a":
            print(f"   |{row['norm']}|: rate {row['rate']:.3f} (predicted >= {row['predicted']:.3f}), R^2 {row['r2']:.5f}, {row['verdict']}")
    print(f"   late means: " + ", ".join(f"{k}={v:.8f}" for k, v in rep.late_means.items()))
