"""Named scenarios: sperm excess, egg excess, balanced masses, Stokes/Navier-Stokes pair.

Every preset is written as ``equilibrium + epsilon * deviation`` so that
``epsilon = 0`` is an exact steady state of the discrete scheme and the
equilibrium value (``rho_inf`` or ``m_inf``) does not depend on epsilon.
"""

from __future__ import annotations

import math

import numpy as np

from .grid import BoxDomain, Field, NO_SLIP, VectorField, dct, face_average, idct
from .pde_core.operators import project_arrays
from .pde_core.stepper import Scenario
from .pde_core.tensor import SensitivityTensor

PRESETS = ("sperm_excess", "egg_excess", "balanced", "stokes_ab")
DEFAULT_C_S = 0.5


def make_domain(dim: int = 2, cells=128, lengths=None) -> BoxDomain:
    if np.isscalar(cells):
        cells = (int(cells),) * dim
    if lengths is None:
        lengths = (math.pi,) * dim
    elif np.isscalar(lengths):
        lengths = (float(lengths),) * dim
    return BoxDomain(tuple(float(x) for x in lengths), tuple(int(n) for n in cells))


def make_phi(domain: BoxDomain, kind: str = "linear_gravity") -> Field:
    if kind == "zero":
        return Field.zeros(domain)
    if kind == "linear_gravity":
        # potential decreasing upward along the last axis
        return Field(domain, -domain.cell_centers()[-1])
    raise ValueError(f"unknown phi kind {kind!r}")


def cosine_perturbation(domain: BoxDomain, seed: int = 0, shift: int = 0, random_amp: float = 0.1) -> np.ndarray:
    """Zero-mean perturbation with sup-norm below 0.85.

    Two fixed cosine modes (including the slowest one) plus a seeded
    random combination of low modes.
    """
    x = domain.cell_centers()
    L = domain.lengths
    j = (1 + shift) % domain.dim
    w = 0.5 * np.cos(math.pi * x[0] / L[0]) + 0.25 * np.cos(2 * math.pi * x[j] / L[j])
    if random_amp > 0:
        rng = np.random.default_rng(seed + 7919 * shift)
        coeffs = np.zeros(domain.shape)
        low = tuple(slice(0, min(4, n)) for n in domain.cells)
        coeffs[low] = rng.standard_normal(coeffs[low].shape)
        coeffs.reshape(-1)[0] = 0.0
        r = idct(coeffs)
        w = w + random_amp * r / np.abs(r).max()
    return w - w.mean()


def bump(domain: BoxDomain, centre_frac: float = 0.6, width_frac: float = 0.15) -> np.ndarray:
    x = domain.cell_centers()
    w = width_frac * min(domain.lengths)
    r2 = sum((xi - centre_frac * Li) ** 2 for xi, Li in zip(x, domain.lengths))
    return np.exp(-r2 / (2 * w * w))


def swirl(domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """Projected single-cell vortex normalised to sup-norm one."""
    d = domain.dim
    comps = []
    for a in range(d):
        b = (a + 1) % d
        xf = domain.face_centers(a)
        sign = 1.0 if a == 0 else -1.0
        comp = sign * np.sin(math.pi * xf[a] / domain.lengths[a]) * np.cos(math.pi * xf[b] / domain.lengths[b])
        comp = comp * (1.0 + 0.3 * np.cos(math.pi * xf[-1] / domain.lengths[-1])) if d == 3 else comp
        idx = [slice(None)] * d
        idx[a] = [0, -1]
        comp[tuple(idx)] = 0.0
        comps.append(comp)
    w, _ = project_arrays(tuple(comps), domain)
    scale = max(float(np.abs(c).max()) for c in w)
    return tuple(c / scale for c in w)


def preset(
    name: str,
    epsilon: float = 0.01,
    dim: int = 2,
    cells=128,
    lengths=None,
    fluid_model: str = "navier_stokes",
    tensor: SensitivityTensor | None = None,
    phi_kind: str = "linear_gravity",
    dt: float | None = None,
    t_end: float = 20.0,
    output_every: float = 0.1,
    seed: int = 0,
) -> Scenario:
    """Build a named scenario; ``stokes_ab`` returns its Stokes member (see :func:`stokes_pair`)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    dom = make_domain(dim, cells, lengths)
    if tensor is None:
        tensor = SensitivityTensor.identity(DEFAULT_C_S)
    eps = float(epsilon)
    p1 = cosine_perturbation(dom, seed, 0)
    p2 = cosine_perturbation(dom, seed, 1)
    blob = bump(dom)
    if name in ("sperm_excess", "stokes_ab"):
        rho0 = 1.0 + eps * (1.0 + p1)
        m0 = eps * (1.0 + p2)
        c0 = eps * blob
        if name == "stokes_ab":
            fluid_model = "stokes"
    elif name == "egg_excess":
        m0 = 1.0 + eps * (1.0 + p1)
        rho0 = eps * (1.0 + p2)
        c0 = 1.0 + eps * blob
    else:
        # equal masses leave only the zero state; epsilon = 1 gives means (1.5, 1.5)
        rho0 = eps * 1.5 * (1.0 + p1)
        m0 = eps * 1.5 * (1.0 + p2)
        c0 = eps * blob
    u0 = tuple(eps * c for c in swirl(dom)) if eps > 0 else VectorField.zeros(dom).components
    return Scenario(
        domain=dom,
        rho0=Field(dom, rho0),
        m0=Field(dom, m0),
        c0=Field(dom, c0),
        u0=VectorField(dom, u0, NO_SLIP),
        phi=make_phi(dom, phi_kind),
        tensor=tensor,
        fluid_model=fluid_model,
        dt=dt,
        t_end=t_end,
        epsilon=eps,
        output_every=output_every,
        allow_trivial=eps == 0,
        name=name,
    )


def stokes_pair(epsilon: float = 0.01, **kw) -> tuple[Scenario, Scenario]:
    """The same sperm-excess data under Navier-Stokes and under Stokes."""
    kw.pop("fluid_model", None)
    ns = preset("sperm_excess", epsilon, fluid_model="navier_stokes", **kw).with_(name="stokes_ab:navier_stokes")
    st = preset("sperm_excess", epsilon, fluid_model="stokes", **kw).with_(name="stokes_ab:stokes")
    return ns, st


def linear_scenario(domain: BoxDomain, t_end: float = 0.25, dt: float | None = None, seed: int = 0) -> Scenario:
    """All couplings off: ``rho0 = 0``, ``S = 0``, ``u0 = 0``, ``phi = 0``; m and c are linear."""
    m0 = 1.0 + 0.5 * cosine_perturbation(domain, seed, 0)
    c0 = 0.5 * bump(domain)
    return Scenario(
        domain=domain,
        rho0=Field.zeros(domain),
        m0=Field(domain, m0),
        c0=Field(domain, c0),
        u0=VectorField.zeros(domain),
        phi=Field.zeros(domain),
        tensor=SensitivityTensor.zero(),
        fluid_model="stokes",
        dt=dt,
        t_end=t_end,
        allow_trivial=True,
        name="linear",
    )
