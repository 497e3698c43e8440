"""Coupled time stepping for the egg/sperm chemotaxis-fluid system.

One step is a Lie splitting

1. explicit: upwind transport by ``u``, upwind chemotactic flux, the
   ``-rho m`` reaction;
2. exact linear flow of ``rho_t = lap rho``, ``m_t = lap m``,
   ``c_t = lap c - c + m`` in cosine space;
3. fluid: projected forcing, exact no-slip viscous flow, projection.

Step 2 uses the exact exponential of the grid operator, so it is
unconditionally stable, preserves means and nonnegativity, and coincides
with :func:`ksns.semigroup.heat_apply`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..grid import (
    BoxDomain,
    Field,
    NO_SLIP,
    VectorField,
    dct,
    divergence_array,
    gradient_arrays,
    idct,
    write_field,
)
from .operators import (
    buoyancy_force,
    chemotactic_velocity,
    chemotaxis_flux_arrays,
    convective_term,
    project_arrays,
    upwind_transport,
    velocity_gradient_norm,
    velocity_heat,
)
from .tensor import SensitivityTensor

log = logging.getLogger(__name__)

FLUID_MODELS = ("navier_stokes", "stokes")
BLOWUP_FACTOR = 1e6
DIV_TOL = 1e-8


class BlowUpError(RuntimeError):
    """Norm growth or non-finite values; ``t`` is the last time reached."""

    def __init__(self, t: float, reason: str):
        super().__init__(f"blow-up at t={t:.6g}: {reason}")
        self.t = t
        self.reason = reason


@dataclass(frozen=True, eq=False)
class State:
    t: float
    rho: Field
    m: Field
    c: Field
    u: VectorField
    p: Field

    @property
    def domain(self) -> BoxDomain:
        return self.rho.domain


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to run: domain, data, potential, tensor, numerics.

    ``dt = None`` selects the CFL step each step.  ``allow_trivial`` lifts
    the "not identically zero" requirement on the initial densities, which
    equilibrium limits (epsilon = 0) and linear test problems need.
    """

    domain: BoxDomain
    rho0: Field
    m0: Field
    c0: Field
    u0: VectorField
    phi: Field
    tensor: SensitivityTensor
    fluid_model: str = "navier_stokes"
    dt: float | None = None
    t_end: float = 20.0
    epsilon: float = 0.0
    output_every: float = 0.1
    allow_trivial: bool = False
    name: str = "custom"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        dom = self.domain
        for f in (self.rho0, self.m0, self.c0, self.phi):
            if f.domain != dom:
                raise ValueError("initial data must live on the scenario domain")
        if self.u0.domain != dom:
            raise ValueError("u0 must live on the scenario domain")
        if self.fluid_model not in FLUID_MODELS:
            raise ValueError(f"fluid_model must be one of {FLUID_MODELS}")
        for name in ("rho0", "m0", "c0"):
            v = getattr(self, name).values
            if v.min() < 0:
                raise ValueError(f"{name} must be nonnegative")
            if not self.allow_trivial and not np.any(v > 0):
                raise ValueError(f"{name} must not vanish identically")
        if self.u0.bc != NO_SLIP:
            raise ValueError("u0 must satisfy the no-slip condition")
        div = float(np.abs(divergence_array(self.u0.components, dom)).max())
        if div > DIV_TOL * max(1.0, max(float(np.abs(c).max()) for c in self.u0.components)):
            raise ValueError(f"u0 is not discretely divergence-free (max |div| = {div:.3e})")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if not self.output_every > 0:
            raise ValueError("output_every must be positive")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def initial_state(self) -> State:
        return State(0.0, self.rho0, self.m0, self.c0, self.u0, Field.zeros(self.domain))

    @property
    def masses(self) -> tuple[float, float]:
        return self.rho0.integral(), self.m0.integral()

    @property
    def rho_inf(self) -> float:
        mr, mm = self.masses
        return max(0.0, (mr - mm) / self.domain.volume)

    @property
    def m_inf(self) -> float:
        mr, mm = self.masses
        return max(0.0, (mm - mr) / self.domain.volume)

    def reference_norms(self) -> dict[str, float]:
        return _watch_norms(self.rho0.values, self.m0.values, self.c0.values, self.u0.components)


def _watch_norms(rho, m, c, u) -> dict[str, float]:
    return {
        "rho": float(np.abs(rho).max()),
        "m": float(np.abs(m).max()),
        "c": float(np.abs(c).max()),
        "u": float(max(np.abs(a).max() for a in u)),
    }


def cfl_limit(state: State, scenario: Scenario) -> float:
    """Largest admissible step.

    ``0.4 * min(h / (2d (|u| + C_S |grad c|)), 1 / (|rho| + |m| + 1))``:
    the ``2d`` factor bounds the total upwind outflow of a cell, which
    together with ``dt |rho|, dt |m| <= 0.4`` keeps the explicit substep
    nonnegative.
    """
    dom = state.domain
    d = dom.dim
    umax = max(float(np.abs(a).max()) for a in state.u.components)
    grad_c = max(float(np.abs(g).max()) for g in gradient_arrays(state.c.values, dom))
    speed = umax + scenario.tensor.c_s * grad_c
    react = float(np.abs(state.rho.values).max() + np.abs(state.m.values).max()) + 1.0
    lim = 1.0 / react
    if speed > 0:
        lim = min(lim, min(dom.spacing) / (2 * d * speed))
    return 0.4 * lim


@dataclass
class StepParts:
    """Intermediate quantities some diagnostics need (per-step reaction integral)."""

    reaction: float = 0.0
    div_max: float = 0.0


def _advance(state: State, scenario: Scenario, dt: float, parts: StepParts | None = None) -> State:
    dom = state.domain
    rho, m, c = state.rho.values, state.m.values, state.c.values
    u = state.u.components
    vol = dom.cell_volume

    react = rho * m
    rho_s = rho - dt * (upwind_transport(rho, u, dom) + react)
    if not scenario.tensor.is_zero:
        S = scenario.tensor.matrix_field(dom, rho, c)
        flux = chemotaxis_flux_arrays(rho, c, S, dom)
        rho_s = rho_s - dt * divergence_array(flux, dom)
    m_s = m - dt * (upwind_transport(m, u, dom) + react)
    c_s = c - dt * upwind_transport(c, u, dom)

    heat = np.exp(-dt * dom.neumann_eigenvalues)
    M = dct(m_s)
    rho_n = idct(heat * dct(rho_s))
    m_n = idct(heat * M)
    decay = math.exp(-dt)
    c_n = idct(heat * (decay * dct(c_s) + (-math.expm1(-dt)) * M))

    force = buoyancy_force(rho + m, scenario.phi.values, dom)
    if scenario.fluid_model == "navier_stokes":
        conv = convective_term(u, dom)
        force = tuple(f - a for f, a in zip(force, conv))
    pf, q_force = project_arrays(force, dom)
    ustar = tuple(a + dt * b for a, b in zip(u, pf))
    u_n, q = project_arrays(velocity_heat(ustar, dom, dt), dom)
    p_n = q_force + q / dt

    t_new = state.t + dt
    for name, arr in (("rho", rho_n), ("m", m_n), ("c", c_n), ("p", p_n)):
        if not np.all(np.isfinite(arr)):
            raise BlowUpError(t_new, f"non-finite {name}")
    if not all(np.all(np.isfinite(a)) for a in u_n):
        raise BlowUpError(t_new, "non-finite u")
    ref = scenario.reference_norms()
    now = _watch_norms(rho_n, m_n, c_n, u_n)
    for key, val in now.items():
        if val > BLOWUP_FACTOR * max(ref[key], 1.0):
            raise BlowUpError(t_new, f"|{key}| = {val:.3e} exceeds {BLOWUP_FACTOR:g} x initial")

    if parts is not None:
        parts.reaction = float(react.sum() * vol)
        parts.div_max = float(np.abs(divergence_array(u_n, dom)).max())

    # u_n has exactly-zero wall normals: the projection subtracts a Neumann gradient
    return State(
        t_new,
        Field(dom, rho_n),
        Field(dom, m_n),
        Field(dom, c_n),
        VectorField(dom, u_n, NO_SLIP),
        Field(dom, p_n),
    )


def step(state: State, scenario: Scenario, dt: float | None = None) -> State:
    """Advance one step of size ``dt`` (default: scenario dt capped by CFL)."""
    limit = cfl_limit(state, scenario)
    if dt is None:
        dt = min(scenario.dt, limit) if scenario.dt is not None else limit
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.4g} exceeds the CFL limit {limit:.4g}")
    return _advance(state, scenario, dt)


# -- trajectories ------------------------------------------------------------------

DIAGNOSTIC_COLUMNS = (
    "t",
    "mass_rho",
    "mass_m",
    "mass_diff",
    "reaction_integral",
    "m_l2sq",
    "m_dissipation",
    "rho_min",
    "m_min",
    "c_min",
    "rho_max",
    "m_max",
    "c_max",
    "c_mean",
    "rho_dev",
    "m_dev",
    "c_dev",
    "grad_c",
    "u",
    "grad_u",
    "div_max",
)


def _grad_sq(values: np.ndarray, dom: BoxDomain) -> float:
    return float(sum(np.sum(g * g) for g in gradient_arrays(values, dom)) * dom.cell_volume)


def diagnostics_row(state: State, scenario: Scenario, reaction_integral: float, m_dissipation: float, div_max: float) -> dict:
    dom = state.domain
    vol = dom.cell_volume
    rho, m, c = state.rho.values, state.m.values, state.c.values
    mr = float(rho.sum() * vol)
    mm = float(m.sum() * vol)
    rinf, minf = scenario.rho_inf, scenario.m_inf
    grad_c = max(float(np.abs(g).max()) for g in gradient_arrays(c, dom))
    return {
        "t": state.t,
        "mass_rho": mr,
        "mass_m": mm,
        "mass_diff": float((rho - m).sum() * vol),
        "reaction_integral": reaction_integral,
        "m_l2sq": float(np.sum(m * m) * vol),
        "m_dissipation": m_dissipation,
        "rho_min": float(rho.min()),
        "m_min": float(m.min()),
        "c_min": float(c.min()),
        "rho_max": float(rho.max()),
        "m_max": float(m.max()),
        "c_max": float(c.max()),
        "c_mean": float(c.mean()),
        "rho_dev": float(np.abs(rho - rinf).max()),
        "m_dev": float(np.abs(m - minf).max()),
        "c_dev": float(np.abs(c - minf).max()),
        "grad_c": grad_c,
        "u": float(max(np.abs(a).max() for a in state.u.components)),
        "grad_u": velocity_gradient_norm(state.u.components, dom, 2),
        "div_max": div_max,
    }


@dataclass
class Trajectory:
    """Output of :func:`run`: states at output times plus diagnostic columns."""

    scenario: Scenario
    times: list[float]
    states: list[State]
    diagnostics: dict[str, np.ndarray]
    final: State
    blew_up: bool = False
    t_reached: float = 0.0
    blowup_reason: str = ""
    steps: int = 0

    @property
    def summary(self) -> dict:
        last = {k: float(v[-1]) for k, v in self.diagnostics.items()}
        return {"blew_up": self.blew_up, "t_reached": self.t_reached, "steps": self.steps, **last}


def output_times(t_end: float, every: float) -> list[float]:
    n = int(math.floor(t_end / every + 1e-9))
    times = [k * every for k in range(n + 1)]
    if t_end - times[-1] > 1e-12 * max(1.0, t_end):
        times.append(t_end)
    return times


def run(
    scenario: Scenario,
    out_dir: str | Path | None = None,
    keep_states: bool = True,
    snapshots: bool = False,
    on_output: Callable[[State, dict], None] | None = None,
) -> Trajectory:
    """Integrate from 0 to ``t_end``; blow-up is reported, not raised."""
    state = scenario.initial_state()
    rows = []
    states = []
    reaction_integral = 0.0
    m_dissipation = 0.0
    div_max = float(np.abs(divergence_array(state.u.components, scenario.domain)).max())
    targets = output_times(scenario.t_end, scenario.output_every)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None and snapshots:
        out.mkdir(parents=True, exist_ok=True)

    def emit(s: State):
        row = diagnostics_row(s, scenario, reaction_integral, m_dissipation, div_max)
        rows.append(row)
        if keep_states:
            states.append(s)
        if out is not None and snapshots:
            k = len(rows) - 1
            for fid in ("rho", "m", "c", "p"):
                write_field(out / f"{fid}_{k:05d}.ksf", getattr(s, fid), s.t, fid)
        if on_output is not None:
            on_output(s, row)

    emit(state)
    blew_up, reason, steps = False, "", 0
    parts = StepParts()
    dom = scenario.domain
    try:
        for target in targets[1:]:
            while target - state.t > 1e-12 * max(1.0, target):
                limit = cfl_limit(state, scenario)
                dt = limit if scenario.dt is None else min(scenario.dt, limit)
                if dt < 1e-12 * max(1.0, scenario.t_end):
                    raise BlowUpError(state.t, f"CFL step collapsed to {dt:.3e}")
                dt = min(dt, target - state.t)
                state = _advance(state, scenario, dt, parts)
                steps += 1
                reaction_integral += dt * parts.reaction
                m_dissipation += 2.0 * dt * _grad_sq(state.m.values, dom)
                div_max = parts.div_max
            state = replace(state, t=target)
            emit(state)
    except BlowUpError as exc:
        blew_up, reason = True, exc.reason
        log.warning("run %s: %s", scenario.name, exc)
    diag = {k: np.array([r[k] for r in rows]) for k in DIAGNOSTIC_COLUMNS}
    if out is not None:
        write_diagnostics_csv(out / "diagnostics.csv", diag)
    return Trajectory(
        scenario,
        [r["t"] for r in rows],
        states,
        diag,
        state,
        blew_up,
        float(state.t),
        reason,
        steps,
    )


def write_diagnostics_csv(path, diag: dict[str, np.ndarray]) -> None:
    """One row per output time; ``%.17g`` keeps reruns byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [c for c in DIAGNOSTIC_COLUMNS if c in diag]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(diag[cols[0]])):
            w.writerow(["%.17g" % diag[c][i] for c in cols])


def read_diagnostics_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in r] for r in reader if r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, j].copy() for j, name in enumerate(header)}


def integrate(scenario: Scenario, T: float, dt: float) -> State:
    """Fixed-step integration to ``T`` (``T / dt`` must be an integer)."""
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of dt")
    state = scenario.initial_state()
    for k in range(n):
        state = step(state, scenario, dt)
    return replace(state, t=T)


def time_derivative_proxies(a: State, b: State) -> dict[str, float]:
    dt = b.t - a.t
    out = {name: float(np.abs(getattr(b, name).values - getattr(a, name).values).max()) / dt for name in ("rho", "m", "c")}
    out["u"] = max(float(np.abs(x - y).max()) for x, y in zip(b.u.components, a.u.components)) / dt
    return out
