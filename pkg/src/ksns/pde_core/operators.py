"""Spatial operators shared by the time stepper and the mild-solution solver.

All kernels work on raw arrays so the two solvers evaluate literally the
same semi-discrete right-hand side.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from ..grid import (
    BoxDomain,
    Field,
    NO_SLIP,
    VectorField,
    axis_eigenvalues,
    centered_gradient_arrays,
    divergence_array,
    face_average,
    fft_workers,
    gradient_arrays,
    solve_neumann_poisson,
)
from .tensor import SensitivityTensor


class ProjectionError(RuntimeError):
    """The pressure solve left a divergence above tolerance."""


def _interior(axis: int, ndim: int) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = slice(1, -1)
    return tuple(idx)


def _lo_hi(arr: np.ndarray, axis: int):
    n = arr.shape[axis]
    return np.take(arr, np.arange(n - 1), axis=axis), np.take(arr, np.arange(1, n), axis=axis)


def upwind_transport(f: np.ndarray, u, domain: BoxDomain) -> np.ndarray:
    """``div(u f)`` with first-order upwind face values; zero flux through walls."""
    out = np.zeros(domain.shape)
    for axis, (U, h) in enumerate(zip(u, domain.spacing)):
        Ui = U[_interior(axis, U.ndim)]
        fl, fr = _lo_hi(f, axis)
        flux = np.where(Ui > 0, Ui * fl, Ui * fr)
        pad = [(0, 0)] * f.ndim
        pad[axis] = (1, 1)
        out += np.diff(np.pad(flux, pad), axis=axis) / h
    return out


def chemotactic_velocity(c: np.ndarray, S: np.ndarray, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """``S grad c`` on interior faces (boundary faces excluded).

    The normal derivative is the staggered difference; tangential
    derivatives are the averages of the two adjacent centred differences;
    ``S`` is the average of the two adjacent cell matrices.
    """
    d = domain.dim
    gc = centered_gradient_arrays(c, domain)
    out = []
    for i, h in enumerate(domain.spacing):
        SL, SR = _lo_hi(S, i)
        Sf = 0.5 * (SL + SR)
        cl, cr = _lo_hi(c, i)
        w = Sf[..., i, i] * (cr - cl) / h
        for j in range(d):
            if j == i:
                continue
            gl, gr = _lo_hi(gc[j], i)
            w = w + Sf[..., i, j] * 0.5 * (gl + gr)
        out.append(w)
    return tuple(out)


def chemotaxis_flux_arrays(rho: np.ndarray, c: np.ndarray, S: np.ndarray, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """Face flux ``rho_upwind * (S grad c)``, zero on every wall face."""
    comps = []
    for i, w in enumerate(chemotactic_velocity(c, S, domain)):
        rl, rr = _lo_hi(rho, i)
        flux = np.where(w > 0, w * rl, w * rr)
        pad = [(0, 0)] * rho.ndim
        pad[i] = (1, 1)
        comps.append(np.pad(flux, pad))
    return tuple(comps)


def chemotaxis_flux(rho: Field, c: Field, tensor: SensitivityTensor) -> VectorField:
    if rho.domain != c.domain:
        raise ValueError("rho and c live on different domains")
    dom = rho.domain
    S = tensor.matrix_field(dom, rho.values, c.values)
    return VectorField(dom, chemotaxis_flux_arrays(rho.values, c.values, S, dom), NO_SLIP)


def buoyancy_force(density: np.ndarray, phi: np.ndarray, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """``density * grad phi`` on faces, zero normal component on walls."""
    g = gradient_arrays(phi, domain)
    return tuple(face_average(density, a) * g[a] for a in range(domain.dim))


def convective_term(u, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """``div(u (x) u)`` on the MAC grid with central averaging and no-slip ghosts."""
    d = domain.dim
    h = domain.spacing
    out = []
    for i in range(d):
        Ui = u[i]
        acc = np.zeros_like(Ui)
        inner = _interior(i, d)
        # normal flux at cell centres
        lo, hi = _lo_hi(Ui, i)
        centre = 0.5 * (lo + hi)
        acc[inner] += np.diff(centre * centre, axis=i) / h[i]
        for j in range(d):
            if j == i:
                continue
            # edge values of u_j (averaged along i) and u_i (averaged along j); zero on walls
            Uj = u[j]
            ljo, lji = _lo_hi(Uj, i)
            uj_edge = 0.5 * (ljo + lji)
            pad = [(0, 0)] * d
            pad[i] = (1, 1)
            uj_edge = np.pad(uj_edge, pad)
            lio, lii = _lo_hi(Ui, j)
            ui_edge = 0.5 * (lio + lii)
            pad = [(0, 0)] * d
            pad[j] = (1, 1)
            ui_edge = np.pad(ui_edge, pad)
            acc += np.diff(uj_edge * ui_edge, axis=j) / h[j]
        boundary = [slice(None)] * d
        for end in (0, -1):
            boundary[i] = end
            acc[tuple(boundary)] = 0.0
        out.append(acc)
    return tuple(out)


def _velocity_axis_transform(domain: BoxDomain, comp: int, axis: int):
    """Sine-transform type and eigenvalues for one axis of one velocity component."""
    n, h = domain.cells[axis], domain.spacing[axis]
    lam = axis_eigenvalues(n, h)
    if axis == comp:
        return 1, lam[1:]  # nodal Dirichlet, k = 1 .. n-1
    full = (2.0 / h**2) * (1.0 - np.cos(np.pi * np.arange(1, n + 1) / n))
    return 2, full  # half-cell Dirichlet, k = 1 .. n


def velocity_eigenvalues(domain: BoxDomain, comp: int) -> np.ndarray:
    d = domain.dim
    lam = 0.0
    for axis in range(d):
        _, l = _velocity_axis_transform(domain, comp, axis)
        shape = [1] * d
        shape[axis] = l.size
        lam = lam + l.reshape(shape)
    return lam


def velocity_heat(u, domain: BoxDomain, t: float) -> tuple[np.ndarray, ...]:
    """Componentwise ``exp(t laplacian)`` with no-slip walls, by sine transforms."""
    d = domain.dim
    out = []
    for i, U in enumerate(u):
        inner = _interior(i, d)
        X = np.array(U[inner], dtype=float)
        types = [_velocity_axis_transform(domain, i, a)[0] for a in range(d)]
        for a, typ in enumerate(types):
            X = sfft.dst(X, type=typ, axis=a, norm="ortho", workers=fft_workers())
        X *= np.exp(-t * velocity_eigenvalues(domain, i))
        for a, typ in enumerate(types):
            X = sfft.idst(X, type=typ, axis=a, norm="ortho", workers=fft_workers())
        new = np.zeros_like(U, dtype=float)
        new[inner] = X
        out.append(new)
    return tuple(out)


def _pad_odd(U: np.ndarray, axis: int) -> np.ndarray:
    """Pad with ghosts ``-U`` so the value midway to the wall is zero."""
    first = np.take(U, [0], axis=axis)
    last = np.take(U, [-1], axis=axis)
    return np.concatenate([-first, U, -last], axis=axis)


def velocity_laplacian(u, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """Stencil form of the operator diagonalised by :func:`velocity_heat`."""
    d = domain.dim
    out = []
    for i, U in enumerate(u):
        acc = np.zeros_like(U)
        inner = _interior(i, d)
        for a, h in enumerate(domain.spacing):
            if a == i:
                acc[inner] += np.diff(U, n=2, axis=a) / h**2
            else:
                p = _pad_odd(U, a)
                acc += np.diff(p, n=2, axis=a) / h**2
        boundary = [slice(None)] * d
        for end in (0, -1):
            boundary[i] = end
            acc[tuple(boundary)] = 0.0
        out.append(acc)
    return tuple(out)


def velocity_gradient_arrays(u, domain: BoxDomain) -> list[np.ndarray]:
    """All difference quotients ``d_j u_i`` including the half-cell wall differences."""
    d = domain.dim
    out = []
    for i, U in enumerate(u):
        for a, h in enumerate(domain.spacing):
            if a == i:
                out.append(np.diff(U, axis=a) / h)
            else:
                p = _pad_odd(U, a)
                out.append(np.diff(p, axis=a) / h)
    return out


def velocity_gradient_norm(u, domain: BoxDomain, p: float = 2) -> float:
    parts = velocity_gradient_arrays(u, domain)
    vol = domain.cell_volume
    if np.isinf(p):
        return float(max(np.abs(a).max() for a in parts))
    return float((sum(np.sum(np.abs(a) ** p) for a in parts) * vol) ** (1.0 / p))


def project_arrays(u, domain: BoxDomain, tol: float = 1e-8) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Discrete Helmholtz projection; returns ``(u - grad q, q)``."""
    q = solve_neumann_poisson(divergence_array(u, domain), domain)
    g = gradient_arrays(q, domain)
    w = tuple(a - b for a, b in zip(u, g))
    scale = max(1.0, max(float(np.abs(a).max()) for a in u))
    resid = float(np.abs(divergence_array(w, domain)).max()) if w else 0.0
    if not np.isfinite(resid) or resid > tol * scale:
        raise ProjectionError(f"divergence {resid:.3e} above tolerance after pressure solve")
    return w, q


def project(v: VectorField, tol: float = 1e-8) -> tuple[VectorField, Field]:
    """Helmholtz projection onto discretely divergence-free no-slip fields."""
    if v.bc != NO_SLIP:
        raise ValueError("project expects a field with zero normal boundary values")
    w, q = project_arrays(v.components, v.domain, tol)
    return VectorField(v.domain, w, NO_SLIP), Field(v.domain, q)
