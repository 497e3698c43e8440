"""Verdicts on trajectories: budget identities, decay-rate fits, smallness sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .grid import BoxDomain, Field, NO_SLIP, VectorField
from .pde_core.stepper import Scenario, Trajectory, read_diagnostics_csv, run
from .pde_core.tensor import SensitivityTensor

MASS_TOL = 1e-10
MONOTONE_TOL = 1e-12
BUDGET_TOL = 1e-8
ENERGY_TOL = 1e-6
MAX_TOL = 1e-10
DIV_TOL = 1e-8
POSITIVITY_TOL = 1e-10

CONSISTENT_FRACTION = 0.8
MIN_R2 = 0.98
VALUE_FLOOR = 1e-13
MIN_SAMPLES = 10
BALANCE_TOL = 1e-10

# norm id -> diagnostics column
NORM_COLUMNS = {
    "m": "m_dev",
    "rho": "rho_dev",
    "c": "c_dev",
    "grad_c": "grad_c",
    "u": "u",
    "grad_u": "grad_u",
}


class InsufficientDataError(ValueError):
    """Fewer than the required number of usable samples in the fit window."""


# -- norm series ----------------------------------------------------------------------


@dataclass
class NormSeries:
    times: np.ndarray
    values: dict[str, np.ndarray]
    rho_inf: float = 0.0
    m_inf: float = 0.0
    volume: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        for k, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"series {k} has non-finite values")

    @classmethod
    def from_diagnostics(cls, diag: dict[str, np.ndarray], volume: float = 1.0) -> "NormSeries":
        mr0, mm0 = float(diag["mass_rho"][0]), float(diag["mass_m"][0])
        values = {k: np.asarray(v, dtype=float) for k, v in diag.items() if k != "t"}
        for nid, col in NORM_COLUMNS.items():
            if col in values:
                values[nid] = values[col]
        gap = mr0 - mm0
        if abs(gap) <= BALANCE_TOL * max(abs(mr0), abs(mm0)):
            gap = 0.0  # equal masses up to round-off
        return cls(np.asarray(diag["t"], dtype=float), values, max(0.0, gap / volume), max(0.0, -gap / volume), volume)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "NormSeries":
        return cls.from_diagnostics(traj.diagnostics, traj.scenario.domain.volume)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]


# -- decay fits -----------------------------------------------------------------------


@dataclass
class DecayFit:
    norm: str
    rate: float
    prefactor: float
    window: tuple[float, float]
    r2: float
    n_samples: int
    predicted: float | None = None
    consistent: bool | None = None


def fit_window(t_end: float) -> tuple[float, float]:
    return max(1.0, 0.2 * t_end), t_end


def fit_decay(
    series: NormSeries,
    which: str,
    window: tuple[float, float] | None = None,
    predicted: float | None = None,
    floor: float = VALUE_FLOOR,
    min_samples: int = MIN_SAMPLES,
) -> DecayFit:
    """Least-squares line through ``(t, log v)``; rate is minus the slope.

    Only samples inside the window with ``v > floor`` are used.  With a
    predicted rate the fit is "consistent" when the rate reaches
    ``0.8 * predicted`` and ``R^2 >= 0.98``.
    """
    t = series.times
    v = np.asarray(series[which], dtype=float)
    lo, hi = window if window is not None else fit_window(float(t[-1]))
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12) & (v > floor)
    n = int(sel.sum())
    if n < min_samples:
        raise InsufficientDataError(f"{which}: {n} usable samples in [{lo:g}, {hi:g}], need {min_samples}")
    x, y = t[sel], np.log(v[sel])
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    rate = -float(slope)
    consistent = None
    if predicted is not None:
        consistent = bool(rate >= CONSISTENT_FRACTION * predicted and r2 >= MIN_R2)
    return DecayFit(which, rate, float(math.exp(icept)), (float(lo), float(hi)), r2, n, predicted, consistent)


@dataclass
class DecayReport:
    regime: str  # "sperm_excess", "egg_excess" or "balanced"
    lambda1: float
    rho_inf: float
    m_inf: float
    stokes_rate: float | None
    fits: dict[str, DecayFit]
    skipped: dict[str, str] = field(default_factory=dict)
    late_means: dict[str, float] = field(default_factory=dict)

    @property
    def predicted_primary(self) -> float | None:
        if self.regime == "sperm_excess":
            return min(self.lambda1, self.rho_inf)
        if self.regime == "egg_excess":
            return min(self.lambda1, self.m_inf, 1.0)
        return None

    @property
    def consistent(self) -> bool:
        """All fits with a verdict are consistent (skipped norms do not count)."""
        return all(f.consistent for f in self.fits.values() if f.consistent is not None)

    def rows(self) -> list[dict]:
        out = []
        for name, f in self.fits.items():
            out.append(
                {
                    "norm": name,
                    "rate": f.rate,
                    "prefactor": f.prefactor,
                    "t_lo": f.window[0],
                    "t_hi": f.window[1],
                    "r2": f.r2,
                    "samples": f.n_samples,
                    "predicted": f.predicted if f.predicted is not None else math.nan,
                    "verdict": {True: "consistent", False: "inconsistent", None: "informational"}[f.consistent],
                }
            )
        for name, why in self.skipped.items():
            out.append({"norm": name, "verdict": "n/a", "reason": why})
        return out


def regime_of(rho_inf: float, m_inf: float) -> str:
    if rho_inf > 0:
        return "sperm_excess"
    if m_inf > 0:
        return "egg_excess"
    return "balanced"


def decay_report(
    series: NormSeries,
    lambda1: float,
    stokes_rate: float | None = None,
    window: tuple[float, float] | None = None,
) -> DecayReport:
    """Fit every tracked norm and attach the predicted rates for the mass regime.

    Primary norms (``m`` and ``rho`` deviations, plus ``c`` for egg
    excess) are compared with ``min(lambda1, rho_inf)`` or
    ``min(lambda1, m_inf, 1)``.  ``grad_c`` and ``u`` are compared with
    ``min(alpha1_hat, stokes_rate, 1)`` where ``alpha1_hat`` is the slowest
    fitted primary rate; without a Stokes rate they are informational.
    """
    regime = regime_of(series.rho_inf, series.m_inf)
    rep = DecayReport(regime, lambda1, series.rho_inf, series.m_inf, stokes_rate, {})
    primary = ["m", "rho"] + (["c"] if regime == "egg_excess" else [])
    pred = rep.predicted_primary
    for name in primary:
        try:
            rep.fits[name] = fit_decay(series, name, window, pred)
        except InsufficientDataError as exc:
            rep.skipped[name] = str(exc)
    rates = [f.rate for n, f in rep.fits.items() if n in ("m", "rho")]
    secondary_pred = None
    if stokes_rate is not None and rates and pred is not None:
        secondary_pred = min(min(rates), stokes_rate, 1.0)
    for name in ("grad_c", "u"):
        try:
            rep.fits[name] = fit_decay(series, name, window, secondary_pred)
        except InsufficientDataError as exc:
            rep.skipped[name] = str(exc)
    t = series.times
    late = t >= t[-1] - 1e-12
    for key, col in (("rho", "mass_rho"), ("m", "mass_m")):
        if col in series.values:
            rep.late_means[key] = float(series[col][late][-1] / series.volume)
    if "c_mean" in series.values:
        rep.late_means["c"] = float(series["c_mean"][-1])
    return rep


# -- identity ledger ------------------------------------------------------------------


@dataclass
class IdentityCheck:
    name: str
    passed: bool
    margin: float  # tolerance minus worst violation; negative means failed
    worst: float
    detail: str = ""


@dataclass
class IdentityLedger:
    checks: list[IdentityCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> IdentityCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _check(name: str, worst: float, tol: float, detail: str = "") -> IdentityCheck:
    worst = float(worst)
    ok = bool(np.isfinite(worst) and worst <= tol)
    return IdentityCheck(name, ok, tol - worst, worst, detail)


def _as_diagnostics(traj) -> dict[str, np.ndarray]:
    if isinstance(traj, Trajectory):
        return traj.diagnostics
    if isinstance(traj, (str, Path)):
        return read_diagnostics_csv(traj)
    return traj


def check_identities(traj) -> IdentityLedger:
    """Evaluate the conservation and budget identities on a run's diagnostics.

    ``traj`` is a :class:`Trajectory`, a diagnostics mapping or the path of
    a diagnostics CSV.  Row 0 must be the initial state.
    """
    d = _as_diagnostics(traj)
    mr, mm, md = d["mass_rho"], d["mass_m"], d["mass_diff"]
    checks = []

    # balanced masses: the initial difference is round-off, so measure against the total mass
    total = max(abs(mr[0]), abs(mm[0]), 1e-300)
    ref = abs(md[0]) if abs(md[0]) > 1e-8 * total else total
    # both the direct sum of rho - m and the difference of the two masses must hold still
    split = mr - mm
    rel = np.maximum(np.abs(md - md[0]), np.abs(split - split[0])) / ref
    checks.append(_check("mass_difference", rel.max(), MASS_TOL, f"worst at t={d['t'][int(rel.argmax())]:.6g}"))

    grow_r = np.max(np.diff(mr), initial=0.0) / max(abs(mr[0]), 1e-300)
    grow_m = np.max(np.diff(mm), initial=0.0) / max(abs(mm[0]), 1e-300)
    checks.append(_check("mass_monotone", max(grow_r, grow_m), MONOTONE_TOL))

    budget = float(np.max(d["reaction_integral"]))
    checks.append(_check("reaction_budget", budget - min(mr[0], mm[0]), BUDGET_TOL))

    energy = d["m_l2sq"] + d["m_dissipation"]
    m0sq = float(d["m_l2sq"][0])
    checks.append(_check("m_energy", float(np.max(energy)) - m0sq, ENERGY_TOL * m0sq + 1e-300))

    over_m = float(np.max(d["m_max"])) - float(d["m_max"][0])
    over_c = float(np.max(d["c_max"])) - max(float(d["m_max"][0]), float(d["c_max"][0]))
    checks.append(_check("max_principles", max(over_m, over_c), MAX_TOL, f"m: {over_m:.3e}, c: {over_c:.3e}"))

    checks.append(_check("divergence_free", float(np.max(d["div_max"])), DIV_TOL))

    low = min(float(np.min(d["rho_min"])), float(np.min(d["m_min"])), float(np.min(d["c_min"])))
    checks.append(_check("positivity", -low, POSITIVITY_TOL))
    return IdentityLedger(checks)


# -- Stokes calibration ---------------------------------------------------------------


@dataclass
class StokesCalibration:
    rate: float
    r2: float
    window: tuple[float, float]
    dt: float


def measure_stokes_rate(
    domain: BoxDomain,
    t_end: float = 4.0,
    dt: float = 0.01,
    window: tuple[float, float] = (1.0, 4.0),
    u0: tuple[np.ndarray, ...] | None = None,
) -> StokesCalibration:
    """Decay rate of ``|u|_inf`` for unforced Stokes flow from a projected vortex.

    This is the empirical first Stokes eigenvalue of the no-slip box, the
    fluid analogue of ``lambda1``.
    """
    from .presets import swirl

    if u0 is None:
        u0 = swirl(domain)
    zero = Field.zeros(domain)
    sc = Scenario(
        domain=domain,
        rho0=zero,
        m0=zero,
        c0=zero,
        u0=VectorField(domain, u0, NO_SLIP),
        phi=zero,
        tensor=SensitivityTensor.zero(),
        fluid_model="stokes",
        dt=dt,
        t_end=t_end,
        output_every=dt * max(1, int(round(0.05 / dt))),
        allow_trivial=True,
        name="stokes_calibration",
    )
    traj = run(sc, keep_states=False)
    series = NormSeries(traj.diagnostics["t"], {"u": traj.diagnostics["u"]})
    fit = fit_decay(series, "u", window)
    return StokesCalibration(fit.rate, fit.r2, fit.window, dt)


# -- smallness sweep ------------------------------------------------------------------


@dataclass
class SweepRow:
    epsilon: float
    global_run: bool
    blowup_time: float
    t_reached: float
    final: dict[str, float]
    rates: dict[str, float]
    verdicts: dict[str, str]


SWEEP_NORMS = ("m", "rho", "grad_c", "u")


def scale_scenario(base: Scenario, epsilon: float) -> Scenario:
    """Rescale the deviation of ``base`` from its mass-selected equilibrium to size ``epsilon``."""
    if not base.epsilon > 0:
        raise ValueError("base scenario needs a positive epsilon to rescale")
    k = epsilon / base.epsilon
    dom = base.domain
    rinf, minf = base.rho_inf, base.m_inf

    def sc(f: Field, eq: float) -> Field:
        return Field(dom, eq + k * (f.values - eq))

    u0 = VectorField(dom, tuple(k * a for a in base.u0.components), NO_SLIP)
    return base.with_(
        rho0=sc(base.rho0, rinf),
        m0=sc(base.m0, minf),
        c0=sc(base.c0, minf),
        u0=u0,
        epsilon=float(epsilon),
        allow_trivial=base.allow_trivial or epsilon == 0,
    )


def epsilon_sweep(
    base: Scenario | Callable[[float], Scenario],
    epsilons: Iterable[float],
    stokes_rate: float | None = None,
) -> list[SweepRow]:
    """Run the scaled scenario for each epsilon; blow-up and degraded decay are data."""
    eps = [float(e) for e in epsilons]
    if any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be nonnegative and increasing")
    rows = []
    for e in eps:
        sc = base(e) if callable(base) else scale_scenario(base, e)
        traj = run(sc, keep_states=False)
        series = NormSeries.from_trajectory(traj)
        final = {n: float(series[n][-1]) for n in SWEEP_NORMS}
        rates, verdicts = {}, {}
        if traj.blew_up:
            for n in SWEEP_NORMS:
                rates[n], verdicts[n] = math.nan, "blow-up"
        else:
            rep = decay_report(series, sc.domain.lambda1, stokes_rate)
            for n in SWEEP_NORMS:
                f = rep.fits.get(n)
                rates[n] = f.rate if f else math.nan
                if f is None:
                    verdicts[n] = "n/a"
                else:
                    verdicts[n] = {True: "consistent", False: "inconsistent", None: "informational"}[f.consistent]
        rows.append(
            SweepRow(
                e,
                not traj.blew_up,
                traj.t_reached if traj.blew_up else math.nan,
                traj.t_reached,
                final,
                rates,
                verdicts,
            )
        )
    return rows


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["epsilon", "global", "blowup_time", "t_reached"]
    header += [f"final_{n}" for n in SWEEP_NORMS] + [f"rate_{n}" for n in SWEEP_NORMS] + [f"verdict_{n}" for n in SWEEP_NORMS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(
                ["%.17g" % r.epsilon, int(r.global_run), "%.17g" % r.blowup_time, "%.17g" % r.t_reached]
                + ["%.17g" % r.final[n] for n in SWEEP_NORMS]
                + ["%.17g" % r.rates[n] for n in SWEEP_NORMS]
                + [r.verdicts[n] for n in SWEEP_NORMS]
            )


def write_report_csv(path, ledger: IdentityLedger, report: DecayReport | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "name", "verdict", "value", "margin_or_predicted", "r2"])
        for c in ledger.checks:
            w.writerow(["identity", c.name, "pass" if c.passed else "fail", "%.17g" % c.worst, "%.17g" % c.margin, ""])
        if report is not None:
            for row in report.rows():
                if row["verdict"] == "n/a":
                    w.writerow(["decay", row["norm"], "n/a", "", "", ""])
                    continue
                w.writerow(
                    ["decay", row["norm"], row["verdict"], "%.17g" % row["rate"], "%.17g" % row["predicted"], "%.17g" % row["r2"]]
                )
