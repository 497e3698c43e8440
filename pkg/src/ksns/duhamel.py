"""Mild-solution (variation of constants) integrator used as an independent oracle.

Unknowns are ``diff = rho - m``, ``m``, ``c`` and ``u``.  With ``H(t)`` the
Neumann heat flow and ``S(t)`` the no-slip Stokes flow,

    diff(t) = H(t) diff0 - int H(t-s) [div(rho S grad c) + u.grad diff] ds
    m(t)    = H(t) m0    - int H(t-s) [rho m + u.grad m] ds
    c(t)    = e^{-t} H(t) c0 + int e^{-(t-s)} H(t-s) [m - u.grad c] ds
    u(t)    = S(t) u0    + int S(t-s) P[(rho + m) grad phi - (u.grad) u] ds

A Picard sweep evaluates all integrands on iterate ``k`` and rebuilds the
integrals node by node with a product trapezoid rule, using
``int_0^{t_{i+1}} = H(dt_i) int_0^{t_i} + local part``.  The Stokes flow on
one node interval is ``project(velocity_heat(., dt_i))``; composed over the
nodes this converges to the true Stokes semigroup as the nodes refine.

The spatial operators are the stepper's, so both solvers discretise the
same semi-discrete system in space and differ only in time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import (
    BoxDomain,
    dct,
    divergence_array,
    faces_to_centers,
    gradient_arrays,
    idct,
    lp_norm,
    vector_magnitude,
)
from .pde_core.operators import (
    ProjectionError,
    buoyancy_force,
    chemotaxis_flux_arrays,
    convective_term,
    project_arrays,
    upwind_transport,
    velocity_gradient_arrays,
    velocity_heat,
)
from .pde_core.stepper import Scenario, State, integrate
from .semigroup import heat_apply_array

SCALARS = ("diff", "m", "c")
FIELDS = SCALARS + ("u",)


class MildIntegrandError(FloatingPointError):
    def __init__(self, node: int, what: str):
        super().__init__(f"non-finite {what} integrand at node {node}")
        self.node = node


@dataclass
class MildIterate:
    """Fields at quadrature nodes; node 0 is the initial data."""

    T: float
    nodes: np.ndarray
    diff: np.ndarray  # (n_nodes, *cells)
    m: np.ndarray
    c: np.ndarray
    u: tuple[np.ndarray, ...]  # each (n_nodes, *face_shape)
    k: int = 0

    def at(self, i: int) -> dict:
        return {
            "diff": self.diff[i],
            "m": self.m[i],
            "c": self.c[i],
            "u": tuple(a[i] for a in self.u),
        }


def default_nodes(T: float, n_log: int = 64, uniform_dt: float | None = None) -> np.ndarray:
    """``n_log`` log-spaced nodes biased towards 0, optionally merged with a uniform grid."""
    if T <= 0:
        raise ValueError("horizon must be positive")
    t = list(np.geomspace(T * 1e-4, T, n_log - 1))
    if uniform_dt is not None:
        n = int(round(T / uniform_dt))
        t += list(np.linspace(0.0, T, n + 1)[1:])
    t = np.unique(np.concatenate([[0.0], np.asarray(t)]))
    # merge nodes closer than round-off
    keep = np.concatenate([[True], np.diff(t) > 1e-12 * T])
    t = t[keep]
    t[-1] = T
    return t


def _stokes(u, domain: BoxDomain, dt: float):
    w, _ = project_arrays(velocity_heat(u, domain, dt), domain)
    return w


def free_evolution(scenario: Scenario, nodes: np.ndarray) -> MildIterate:
    """Iterate 0: the initial data carried by the linear flows alone."""
    dom = scenario.domain
    diff0 = scenario.rho0.values - scenario.m0.values
    n = nodes.size
    diff = np.empty((n,) + dom.shape)
    m = np.empty_like(diff)
    c = np.empty_like(diff)
    u = tuple(np.empty((n,) + a.shape) for a in scenario.u0.components)
    for i, t in enumerate(nodes):
        diff[i] = heat_apply_array(diff0, dom, t)
        m[i] = heat_apply_array(scenario.m0.values, dom, t)
        c[i] = heat_apply_array(scenario.c0.values, dom, t, decay=1.0)
    cur = scenario.u0.components
    for a in range(len(u)):
        u[a][0] = cur[a]
    for i in range(1, n):
        cur = _stokes(cur, dom, nodes[i] - nodes[i - 1])
        for a in range(len(u)):
            u[a][i] = cur[a]
    return MildIterate(float(nodes[-1]), np.asarray(nodes, dtype=float), diff, m, c, u, 0)


def integrands(fields: dict, scenario: Scenario) -> dict:
    """Right-hand sides of the four mild equations at one node."""
    dom = scenario.domain
    diff, m, c, u = fields["diff"], fields["m"], fields["c"], fields["u"]
    rho = diff + m
    f_diff = -(upwind_transport(rho, u, dom) - upwind_transport(m, u, dom))
    if not scenario.tensor.is_zero:
        S = scenario.tensor.matrix_field(dom, rho, c, check=False)
        f_diff = f_diff - divergence_array(chemotaxis_flux_arrays(rho, c, S, dom), dom)
    f_m = -(rho * m + upwind_transport(m, u, dom))
    f_c = m - upwind_transport(c, u, dom)
    force = buoyancy_force(rho + m, scenario.phi.values, dom)
    if scenario.fluid_model == "navier_stokes":
        force = tuple(a - b for a, b in zip(force, convective_term(u, dom)))
    f_u, _ = project_arrays(force, dom)
    return {"diff": f_diff, "m": f_m, "c": f_c, "u": f_u}


def _decay_weights(dt: float) -> tuple[float, float]:
    """Weights of ``int_0^dt e^{-(dt-s)} F(s) ds`` for F linear between the endpoints."""
    if dt < 1e-4:
        w1 = dt / 2 - dt * dt / 6 + dt**3 / 24
    else:
        w1 = (dt - 1.0 + math.exp(-dt)) / dt
    return -math.expm1(-dt) - w1, w1


def picard_step(it: MildIterate, scenario: Scenario) -> MildIterate:
    """One Picard sweep: integrands from iterate ``k`` give iterate ``k + 1``."""
    dom = scenario.domain
    nodes = it.nodes
    n = nodes.size
    F = []
    for i in range(n):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                f = integrands(it.at(i), scenario)
        except ProjectionError:
            raise MildIntegrandError(i, "u") from None
        for name in SCALARS:
            if not np.all(np.isfinite(f[name])):
                raise MildIntegrandError(i, name)
        if not all(np.all(np.isfinite(a)) for a in f["u"]):
            raise MildIntegrandError(i, "u")
        F.append(f)

    diff = np.empty_like(it.diff)
    m = np.empty_like(it.m)
    c = np.empty_like(it.c)
    u = tuple(np.empty_like(a) for a in it.u)
    diff[0] = it.diff[0]
    m[0] = it.m[0]
    c[0] = it.c[0]
    for a in range(len(u)):
        u[a][0] = it.u[a][0]
    lam = dom.neumann_eigenvalues
    for i in range(n - 1):
        h = nodes[i + 1] - nodes[i]
        H = np.exp(-h * lam)
        half = 0.5 * h
        # heat flow of (X_i + h/2 F_i) plus h/2 F_{i+1}
        diff[i + 1] = idct(H * dct(diff[i] + half * F[i]["diff"])) + half * F[i + 1]["diff"]
        m[i + 1] = idct(H * dct(m[i] + half * F[i]["m"])) + half * F[i + 1]["m"]
        w0, w1 = _decay_weights(h)
        c[i + 1] = idct(H * dct(math.exp(-h) * c[i] + w0 * F[i]["c"])) + w1 * F[i + 1]["c"]
        prev = tuple(a[i] + half * b for a, b in zip(u, F[i]["u"]))
        flowed = _stokes(prev, dom, h)
        for a in range(len(u)):
            u[a][i + 1] = flowed[a] + half * F[i + 1]["u"][a]
    return MildIterate(it.T, nodes, diff, m, c, u, it.k + 1)


# -- weighted norms ------------------------------------------------------------------


def weight(t, sigma: float, alpha: float):
    """``(1 + t^-sigma) e^{-alpha t}``; the singular factor is dropped when sigma <= 0."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        sing = 1.0 + t ** (-sigma) if sigma > 0 else np.ones_like(t)
    return sing * np.exp(-alpha * t)


def track_sigmas(dim: int, p0: float = 2.0, q0: float = 4.0) -> dict[str, float]:
    return {
        "diff_lq0": 0.5 * dim * (1.0 / p0 - 1.0 / q0),
        "diff_linf": 0.5 * dim / p0,
        "grad_c_linf": 0.5,
        "u_lq0": 0.5 - dim / (2.0 * q0),
        "grad_u_l3": 0.5,
    }


def _track_values(diff, diff0, c, u, t, dom: BoxDomain, q0: float) -> dict[str, float]:
    vol = dom.cell_volume
    dev = diff - heat_apply_array(diff0, dom, t)
    gc = vector_magnitude(gradient_arrays(c, dom))
    return {
        "diff_lq0": lp_norm(dev, q0, vol),
        "diff_linf": float(np.abs(dev).max()),
        "grad_c_linf": float(gc.max()),
        "u_lq0": lp_norm(np.sqrt(sum(a * a for a in faces_to_centers(u))), q0, vol),
        "grad_u_l3": float((sum(np.sum(np.abs(g) ** 3) for g in velocity_gradient_arrays(u, dom)) * vol) ** (1 / 3)),
    }


@dataclass
class WeightedNormTrack:
    """Norm records divided by their weights ``(1 + t^-sigma) e^{-alpha t}``."""

    times: np.ndarray
    values: dict[str, np.ndarray]
    sigmas: dict[str, float]
    alpha1: float
    alpha2: float
    p0: float
    q0: float

    def alpha(self, name: str) -> float:
        return self.alpha2 if name.startswith("u") or name.startswith("grad_u") else self.alpha1

    def weighted(self, name: str) -> np.ndarray:
        return self.values[name] / weight(self.times, self.sigmas[name], self.alpha(name))

    def sup(self, name: str, t0: float = 0.0) -> float:
        sel = (self.times >= t0) & (self.times > 0)
        return float(self.weighted(name)[sel].max()) if np.any(sel) else 0.0

    def bounded(self, t0: float | None = None, growth_tol: float = 0.1) -> dict[str, bool]:
        """Per quantity: finite on ``[t0, T]`` and not growing at the right end."""
        T = float(self.times[-1])
        t0 = min(1.0, T / 3) if t0 is None else t0
        out = {}
        for name in self.values:
            w = self.weighted(name)[self.times >= t0]
            ok = bool(np.all(np.isfinite(w)))
            if ok and w.size >= 3 and w.max() > 0:
                ok = w[-1] <= (1 + growth_tol) * w.max() and w[-1] <= (1 + growth_tol) * max(w[0], w[: w.size // 2].max())
            out[name] = ok
        return out


def weighted_norm_track(
    states: list[State],
    scenario: Scenario,
    alpha1: float = 0.5,
    alpha2: float = 0.5,
    p0: float = 2.0,
    q0: float = 4.0,
) -> WeightedNormTrack:
    dom = scenario.domain
    diff0 = scenario.rho0.values - scenario.m0.values
    times = np.array([s.t for s in states])
    rows = [_track_values(s.rho.values - s.m.values, diff0, s.c.values, s.u.components, s.t, dom, q0) for s in states]
    values = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return WeightedNormTrack(times, values, track_sigmas(dom.dim, p0, q0), alpha1, alpha2, p0, q0)


def iterate_track(it: MildIterate, scenario: Scenario, alpha1=0.5, alpha2=0.5, p0=2.0, q0=4.0) -> WeightedNormTrack:
    dom = scenario.domain
    diff0 = it.diff[0]
    rows = [
        _track_values(it.diff[i], diff0, it.c[i], tuple(a[i] for a in it.u), t, dom, q0) for i, t in enumerate(it.nodes)
    ]
    values = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return WeightedNormTrack(it.nodes.copy(), values, track_sigmas(dom.dim, p0, q0), alpha1, alpha2, p0, q0)


def iterate_distance(a: MildIterate, b: MildIterate, sigma: float = 0.0, alpha: float = 0.0) -> float:
    """Weighted sup-norm distance over nodes ``i >= 1`` and all fields."""
    w = weight(a.nodes[1:], sigma, alpha)
    worst = 0.0
    for name in SCALARS:
        d = np.abs(getattr(a, name)[1:] - getattr(b, name)[1:]).reshape(a.nodes.size - 1, -1).max(axis=1)
        worst = max(worst, float((d / w).max()))
    for x, y in zip(a.u, b.u):
        d = np.abs(x[1:] - y[1:]).reshape(a.nodes.size - 1, -1).max(axis=1)
        worst = max(worst, float((d / w).max()))
    return worst


@dataclass
class MildSolution:
    iterate: MildIterate
    distances: list[float]
    converged: bool
    message: str = ""


def solve_mild(
    scenario: Scenario,
    T: float,
    nodes: np.ndarray | None = None,
    max_iter: int = 30,
    tol: float = 1e-13,
    stall_window: int = 10,
) -> MildSolution:
    """Picard iteration to a fixed point; nonconvergence is reported, not raised.

    Converged means ``dist(k) <= tol * (1 + scale)``.  The iteration is
    declared outside the contraction regime when ``dist`` has not
    decreased for ``stall_window`` sweeps or became non-finite.
    """
    if nodes is None:
        nodes = default_nodes(T)
    it = free_evolution(scenario, nodes)
    scale = max(
        float(np.abs(it.diff).max()),
        float(np.abs(it.m).max()),
        float(np.abs(it.c).max()),
        max(float(np.abs(a).max()) for a in it.u),
    )
    dists: list[float] = []
    best = math.inf
    since_best = 0
    for _ in range(max_iter):
        try:
            nxt = picard_step(it, scenario)
        except (MildIntegrandError, FloatingPointError) as exc:
            return MildSolution(it, dists, False, f"outside contraction regime: {exc}")
        d = iterate_distance(nxt, it)
        dists.append(d)
        it = nxt
        if not math.isfinite(d):
            return MildSolution(it, dists, False, "outside contraction regime: non-finite distance")
        if d <= tol * (1.0 + scale):
            return MildSolution(it, dists, True, "converged")
        if d < best:
            best, since_best = d, 0
        else:
            since_best += 1
            if since_best >= stall_window:
                return MildSolution(it, dists, False, "outside contraction regime: dist(k) not decreasing")
    return MildSolution(it, dists, False, "outside contraction regime: iteration budget exhausted")


def contraction_monotone(dists: list[float], k_max: int = 6, floor: float = 1e-14) -> bool:
    """dist(k) decreasing for ``k <= k_max`` until it reaches the round-off floor."""
    for a, b in zip(dists[:k_max], dists[1 : k_max + 1]):
        if a <= floor:
            break
        if not b < a:
            return False
    return True


# -- cross validation ---------------------------------------------------------------


def _final_fields(state: State) -> dict:
    return {
        "diff": state.rho.values - state.m.values,
        "m": state.m.values,
        "c": state.c.values,
        "u": state.u.components,
    }


def _sup(x) -> float:
    if isinstance(x, tuple):
        return max(float(np.abs(a).max()) for a in x)
    return float(np.abs(x).max())


def _sub(a, b):
    if isinstance(a, tuple):
        return tuple(x - y for x, y in zip(a, b))
    return a - b


@dataclass
class CrossValidationReport:
    T: float
    dt: float
    stepper_vs_half: dict[str, float]  # |X_dt - X_dt/2|
    half_vs_picard: dict[str, float]  # |X_dt/2 - picard|
    coarse_vs_picard: dict[str, float]
    tolerance: dict[str, float]
    distances: list[float]
    picard_converged: bool
    message: str
    passed: bool
    field_passed: dict[str, bool] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.half_vs_picard.values())

    def rows(self) -> list[tuple]:
        out = [("dist", k + 1, d) for k, d in enumerate(self.distances)]
        for name in FIELDS:
            out.append(("stepper_dt_vs_dt2", name, self.stepper_vs_half[name]))
            out.append(("stepper_dt2_vs_picard", name, self.half_vs_picard[name]))
            out.append(("stepper_dt_vs_picard", name, self.coarse_vs_picard[name]))
            out.append(("tolerance", name, self.tolerance[name]))
        return out


def cross_validate(
    scenario: Scenario,
    T: float,
    dt: float | None = None,
    n_log: int = 64,
    factor: float = 4.0,
    max_iter: int = 30,
) -> CrossValidationReport:
    """Compare the stepper at ``dt`` and ``dt/2`` with the converged Picard iterate at ``T``.

    A field passes when ``|X_{dt/2} - picard| <= factor * |X_dt - X_{dt/2}|``
    plus a round-off allowance of ``1e-12 (1 + |X|)``.
    """
    if not 0 < T <= 0.5:
        raise ValueError("cross validation expects 0 < T <= 0.5")
    if dt is None:
        dt = min(scenario.dt or math.inf, T / 10)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n
    coarse = _final_fields(integrate(scenario, T, dt))
    fine = _final_fields(integrate(scenario, T, dt / 2))
    sol = solve_mild(scenario, T, default_nodes(T, n_log, dt / 4), max_iter=max_iter)
    pic = sol.iterate.at(sol.iterate.nodes.size - 1)
    a, b, cpic, tol, ok = {}, {}, {}, {}, {}
    for name in FIELDS:
        a[name] = _sup(_sub(coarse[name], fine[name]))
        b[name] = _sup(_sub(fine[name], pic[name]))
        cpic[name] = _sup(_sub(coarse[name], pic[name]))
        tol[name] = factor * a[name] + 1e-12 * (1.0 + _sup(fine[name]))
        ok[name] = b[name] <= tol[name]
    passed = sol.converged and all(ok.values())
    return CrossValidationReport(T, dt, a, b, cpic, tol, sol.distances, sol.converged, sol.message, passed, ok)


def fixed_point_residual(states: list[State], scenario: Scenario) -> dict[str, float]:
    """Insert a stepper trajectory into the mild right-hand sides; sup-norm mismatch per field.

    The states must start at ``t = 0``; their times serve as the nodes.
    """
    nodes = np.array([s.t for s in states])
    if nodes[0] != 0.0:
        raise ValueError("trajectory must start at t = 0")
    it = MildIterate(
        float(nodes[-1]),
        nodes,
        np.stack([s.rho.values - s.m.values for s in states]),
        np.stack([s.m.values for s in states]),
        np.stack([s.c.values for s in states]),
        tuple(np.stack([s.u.components[a] for s in states]) for a in range(scenario.domain.dim)),
        1,
    )
    nxt = picard_step(it, scenario)
    out = {name: float(np.abs(getattr(nxt, name) - getattr(it, name)).max()) for name in SCALARS}
    out["u"] = max(float(np.abs(x - y).max()) for x, y in zip(nxt.u, it.u))
    return out


def write_report_csv(path, report: CrossValidationReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "key", "value"])
        for kind, key, val in report.rows():
            w.writerow([kind, key, f"{val:.17g}"])
