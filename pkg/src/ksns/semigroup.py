"""Neumann heat semigroup on the box and empirical checks of its decay bounds.

The grid Laplacian is diagonal in the type-II cosine basis, so
``heat_apply`` is the exact flow of the discrete operator rather than an
approximation of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .grid import (
    BoxDomain,
    Field,
    NEUMANN,
    VectorField,
    divergence_array,
    dct,
    face_average,
    gradient_arrays,
    idct,
    lp_norm,
    vector_magnitude,
)

VARIANTS = ("i", "ii", "iii", "iv")


@dataclass(frozen=True)
class SpectralInfo:
    domain: BoxDomain
    lambda1: float
    lambda1_discrete: float
    mode_cut: tuple[int, ...]

    @classmethod
    def of(cls, domain: BoxDomain) -> "SpectralInfo":
        return cls(domain, domain.lambda1, domain.lambda1_discrete, tuple(n - 1 for n in domain.cells))


def heat_apply_array(values: np.ndarray, domain: BoxDomain, t: float, decay: float = 0.0) -> np.ndarray:
    """``exp(t (laplacian - decay)) values`` by cosine diagonalisation."""
    if t < 0:
        raise ValueError(f"heat flow needs t >= 0, got {t}")
    if t == 0 and decay == 0:
        return np.array(values, dtype=float, copy=True)
    coeffs = dct(values)
    coeffs *= np.exp(-t * (domain.neumann_eigenvalues + decay))
    return idct(coeffs)


def heat_apply(f: Field, t: float) -> Field:
    if f.bc != NEUMANN:
        raise ValueError("heat_apply needs a homogeneous Neumann field")
    return Field(f.domain, heat_apply_array(f.values, f.domain, t))


# -- L^p - L^q bound checks ------------------------------------------------------


@dataclass
class BoundCheckReport:
    variant: str
    p: float
    q: float
    sigma: float
    times: np.ndarray
    ratios: np.ndarray  # (n_probes, n_times)
    probe_ids: list[str]
    measured_ratio: float
    passed: bool
    rows: list[tuple] = field(default_factory=list, repr=False)

    @property
    def per_time_sup(self) -> np.ndarray:
        return self.ratios.max(axis=0)


def bound_sigma(variant: str, p: float, q: float, dim: int) -> float:
    """Exponent of the singular factor ``(1 + t^-sigma)`` for each bound variant."""
    base = 0.5 * dim * (1.0 / q - (0.0 if math.isinf(p) else 1.0 / p))
    if variant in ("ii", "iv"):
        return 0.5 + base
    return base


def _grad_norm(values: np.ndarray, domain: BoxDomain, p: float) -> float:
    return lp_norm(vector_magnitude(gradient_arrays(values, domain)), p, domain.cell_volume)


def _vector_norm(components, domain: BoxDomain, p: float) -> float:
    return lp_norm(vector_magnitude(components), p, domain.cell_volume)


def standard_probes(domain: BoxDomain, variant: str = "i", seed: int = 0, n_random: int = 3):
    """Single modes, random mean-zero fields and narrow bumps.

    Returns ``[(probe_id, probe)]`` where probes are arrays for scalar
    variants and face-component tuples for variant ``iv``.
    """
    rng = np.random.default_rng(seed)
    x = domain.cell_centers()
    L = domain.lengths
    probes = []
    probes.append(("mode1", np.cos(math.pi * x[0] / L[0])))
    probes.append(("mode11", np.cos(math.pi * x[0] / L[0]) * np.cos(math.pi * x[1] / L[1])))
    probes.append(("mode3", np.cos(3 * math.pi * x[0] / L[0])))
    for k in range(n_random):
        r = rng.standard_normal(domain.shape)
        probes.append((f"random{k}", r - r.mean()))
    h = max(domain.spacing)
    for k, width in enumerate((1.5 * h, 4 * h)):
        centre = [0.37 * Li for Li in L]
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, centre))
        b = np.exp(-r2 / (2 * width**2))
        probes.append((f"bump{k}", b - b.mean()))
    if variant == "ii":
        probes.append(("constant", np.ones(domain.shape)))
    if variant == "iv":
        return [(pid, _vector_probe(domain, s, rng, pid.startswith("random"))) for pid, s in probes]
    return probes


def _vector_probe(domain: BoxDomain, s: np.ndarray, rng, random: bool) -> tuple[np.ndarray, ...]:
    comps = []
    for a in range(domain.dim):
        if random:
            g = rng.standard_normal(domain.face_shape(a))
        else:
            g = face_average(s, a) * (1.0 if a == 0 else 0.5)
        idx = [slice(None)] * domain.dim
        idx[a] = [0, -1]
        g[tuple(idx)] = 0.0
        comps.append(g)
    return tuple(comps)


def default_times(domain: BoxDomain, n: int = 25) -> np.ndarray:
    return np.geomspace(1e-3, 100.0 / domain.lambda1, n)


def _heat_mean_free(values: np.ndarray, domain: BoxDomain, t: float) -> np.ndarray:
    # round-off in the mean never decays and would swamp exp(-lambda1 t) at large t
    coeffs = dct(values)
    coeffs.reshape(-1)[0] = 0.0
    coeffs *= np.exp(-t * domain.neumann_eigenvalues)
    return idct(coeffs)


def verify_lp_lq(
    p: float,
    q: float,
    probes,
    times,
    domain: BoxDomain,
    variant: str = "i",
    end_growth_tol: float = 0.1,
) -> BoundCheckReport:
    """Empirical constant for one of the four heat-semigroup bounds.

    ``ratio(t) = lhs(t) / ((1 + t^-sigma) exp(-lambda1 t) rhs)`` with the
    discrete ``lambda1``.  The check passes when every ratio is finite and
    the supremum does not keep growing towards either end of the time
    lattice (by more than ``end_growth_tol`` over the last three samples),
    i.e. one constant covers the whole lattice.  At the late end the
    growth test uses ``lhs / (exp(-lambda1 t) rhs)``: the factor
    ``(1 + t^-sigma)^-1`` creeps up to 1 there, which is bounded.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if p < q:
        raise ValueError(f"need q <= p, got p={p}, q={q}")
    if variant == "iii" and (q < 2 or math.isinf(p)):
        raise ValueError("variant iii needs 2 <= q <= p < inf")
    times = np.asarray(times, dtype=float)
    lam1 = domain.lambda1_discrete
    sigma = bound_sigma(variant, p, q, domain.dim)
    vol = domain.cell_volume
    ratios = np.zeros((len(probes), times.size))
    singular = np.array([1.0 + t ** (-sigma) if sigma > 0 else 2.0 for t in times])
    ids = []
    rows = []
    for i, (pid, w) in enumerate(probes):
        ids.append(pid)
        if variant == "i":
            w = np.asarray(w, dtype=float)
            if abs(w.mean()) > 1e-12 * max(1.0, np.abs(w).max()):
                raise ValueError(f"probe {pid} is not mean-zero")
            rhs = lp_norm(w, q, vol)
        elif variant == "ii":
            rhs = lp_norm(np.asarray(w), q, vol)
        elif variant == "iii":
            rhs = _grad_norm(np.asarray(w), domain, q)
        else:
            rhs = _vector_norm(w, domain, q)
            w = divergence_array(w, domain)
        for j, t in enumerate(times):
            # the gradient variants do not see the mean, and the others have none
            ht = _heat_mean_free(w, domain, t)
            if variant == "i" or variant == "iv":
                lhs = lp_norm(ht, p, vol)
            else:
                lhs = _grad_norm(ht, domain, p)
            denom = singular[j] * math.exp(-lam1 * t) * rhs
            r = lhs / denom if denom > 0 else (0.0 if lhs == 0 else math.inf)
            ratios[i, j] = r
            rows.append((variant, p, q, float(t), pid, r))
    sup_t = ratios.max(axis=0)
    finite = bool(np.all(np.isfinite(ratios)))
    measured = float(sup_t.max()) if finite else math.inf
    passed = finite and measured > 0
    if passed and times.size >= 3:
        inner_sup = sup_t[1:-1].max()
        head = sup_t[0] / max(inner_sup, 1e-300)
        tail = (ratios * singular).max(axis=0)
        tail_growth = tail[-1] / max(tail[-3], 1e-300)
        head_growth = sup_t[0] / max(sup_t[2], 1e-300)
        passed = not (head > 1 + end_growth_tol and head_growth > 1 + end_growth_tol) and tail_growth <= 1 + end_growth_tol
    return BoundCheckReport(variant, p, q, sigma, times, ratios, ids, measured, passed, rows)


# -- convolution bound -----------------------------------------------------------


def convolution_integral(alpha: float, beta: float, gamma: float, delta: float, t: float) -> float:
    """``int_0^t (1+s^-a)(1+(t-s)^-b) e^{-g s} e^{-d (t-s)} ds`` by adaptive quadrature.

    The interval is split at ``t/2``; the left half is integrated in the
    variable ``tau = s^(1-alpha)`` and the right half in
    ``tau = (t-s)^(1-beta)``, which removes both integrable singularities.
    """
    if t <= 0:
        return 0.0
    half = 0.5 * t
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)

    def weight(s):
        return math.exp(-gamma * s - delta * (t - s))

    ea = 1.0 / (1.0 - alpha)
    eb = 1.0 / (1.0 - beta)

    def left(tau):
        s = tau**ea
        # (1 + s^-a) ds = ea (tau^(a ea) + 1) dtau
        return ea * (tau ** (alpha * ea) + 1.0) * (1.0 + (t - s) ** (-beta)) * weight(s)

    def right(tau):
        r = tau**eb
        s = t - r
        return eb * (tau ** (beta * eb) + 1.0) * (1.0 + s ** (-alpha)) * weight(s)

    a, _ = integrate.quad(left, 0.0, half ** (1.0 - alpha), **opts)
    b, _ = integrate.quad(right, 0.0, half ** (1.0 - beta), **opts)
    return a + b


def convolution_bound(alpha: float, beta: float, gamma: float, delta: float, t: float) -> tuple[float, float]:
    """Return ``(integral_value, bound_value)`` for the two-sided decay convolution."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    if gamma <= 0 or delta <= 0:
        raise ValueError("gamma and delta must be positive")
    if gamma == delta:
        raise ValueError("gamma == delta is excluded")
    if t <= 0:
        raise ValueError("t must be positive")
    value = convolution_integral(alpha, beta, gamma, delta, t)
    bound = (1.0 + t ** min(0.0, 1.0 - alpha - beta)) * math.exp(-min(gamma, delta) * t)
    return value, bound
