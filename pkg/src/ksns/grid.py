"""Box domains, cell/face (MAC) layout and the discrete operators on them.

Scalars live at cell centres, velocity components on the faces normal to
their own axis.  A component for axis ``i`` therefore has ``n_i + 1``
samples along axis ``i`` (the first and last being boundary faces) and
``n_j`` samples along every other axis.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

NEUMANN = "neumann_homogeneous"
DIRICHLET = "dirichlet_zero"
NO_SLIP = "no_slip"
FREE = "free"

_SCALAR_BCS = (NEUMANN, DIRICHLET)
_VECTOR_BCS = (NO_SLIP, FREE)

_fft_workers = 1


def set_fft_workers(n: int) -> None:
    """Set the worker count used by every cosine/sine transform.

    Each 1-D transform is computed identically regardless of the worker
    count, so results stay bit-identical; ``n = 1`` is the deterministic
    single-threaded mode.
    """
    global _fft_workers
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _fft_workers = int(n)


def fft_workers() -> int:
    return _fft_workers


class DomainMismatchError(ValueError):
    """Operands were sampled on different boxes."""


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[0, L_1] x ... x [0, L_d]`` with uniform cells."""

    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        cells = tuple(int(n) for n in self.cells)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "cells", cells)
        if len(lengths) != len(cells):
            raise ValueError("lengths and cells must have the same length")
        if len(cells) not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {len(cells)}")
        if any(not math.isfinite(L) or L <= 0 for L in lengths):
            raise ValueError(f"box lengths must be positive, got {lengths}")
        if any(n < 4 for n in cells):
            raise ValueError(f"need at least 4 cells per axis, got {cells}")
        h = [L / n for L, n in zip(lengths, cells)]
        if max(h) > 4 * min(h):
            raise ValueError(f"cell spacings {h} differ by more than a factor 4")

    @classmethod
    def cube(cls, dim: int, n: int, length: float = math.pi) -> "BoxDomain":
        return cls((length,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def lambda1(self) -> float:
        """First nonzero Neumann eigenvalue of the continuum box."""
        return min((math.pi / L) ** 2 for L in self.lengths)

    @property
    def lambda1_discrete(self) -> float:
        """First nonzero eigenvalue of the grid Laplacian."""
        return min(axis_eigenvalues(n, h)[1] for n, h in zip(self.cells, self.spacing))

    def face_shape(self, axis: int) -> tuple[int, ...]:
        shape = list(self.cells)
        shape[axis] += 1
        return tuple(shape)

    def axis_centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def axis_faces(self, axis: int) -> np.ndarray:
        return np.arange(self.cells[axis] + 1) * self.spacing[axis]

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis_centers(a) for a in range(self.dim)), indexing="ij"))

    def face_centers(self, axis: int) -> tuple[np.ndarray, ...]:
        axes = [self.axis_faces(a) if a == axis else self.axis_centers(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def neumann_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``-laplacian`` on the cosine modes, shaped like a field."""
        lam = np.zeros(self.cells)
        for axis, (n, h) in enumerate(zip(self.cells, self.spacing)):
            lam = lam + _along(axis_eigenvalues(n, h), axis, self.dim)
        return lam


def axis_eigenvalues(n: int, h: float) -> np.ndarray:
    """``(2/h^2)(1 - cos(pi k / n))`` for ``k = 0 .. n-1``."""
    k = np.arange(n)
    return (2.0 / h**2) * (1.0 - np.cos(np.pi * k / n))


def _along(vec: np.ndarray, axis: int, dim: int) -> np.ndarray:
    shape = [1] * dim
    shape[axis] = vec.size
    return vec.reshape(shape)


def _check_values(domain: BoxDomain, values, shape, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.shape != tuple(shape):
        raise ValueError(f"{what} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite samples")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-centred scalar samples with a boundary-condition tag."""

    domain: BoxDomain
    values: np.ndarray
    bc: str = NEUMANN

    def __post_init__(self):
        if self.bc not in _SCALAR_BCS:
            raise ValueError(f"unknown scalar bc {self.bc!r}")
        object.__setattr__(self, "values", _check_values(self.domain, self.values, self.domain.shape, "field"))

    @classmethod
    def zeros(cls, domain: BoxDomain, bc: str = NEUMANN) -> "Field":
        return cls(domain, np.zeros(domain.shape), bc)

    @classmethod
    def constant(cls, domain: BoxDomain, value: float, bc: str = NEUMANN) -> "Field":
        return cls(domain, np.full(domain.shape, float(value)), bc)

    def with_values(self, values) -> "Field":
        return Field(self.domain, values, self.bc)

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.domain.cell_volume)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Face-staggered vector samples, one array per axis.

    With ``bc = "no_slip"`` the normal components on the physical boundary
    must be exactly zero; ``"free"`` leaves them unconstrained.
    """

    domain: BoxDomain
    components: tuple[np.ndarray, ...]
    bc: str = NO_SLIP

    def __post_init__(self):
        if self.bc not in _VECTOR_BCS:
            raise ValueError(f"unknown vector bc {self.bc!r}")
        if len(self.components) != self.domain.dim:
            raise ValueError("need one component per axis")
        comps = tuple(
            _check_values(self.domain, c, self.domain.face_shape(a), f"component {a}")
            for a, c in enumerate(self.components)
        )
        if self.bc == NO_SLIP:
            for a, c in enumerate(comps):
                if np.any(np.take(c, [0, -1], axis=a) != 0.0):
                    raise ValueError(f"no-slip field has nonzero normal boundary values on axis {a}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zeros(cls, domain: BoxDomain) -> "VectorField":
        return cls(domain, tuple(np.zeros(domain.face_shape(a)) for a in range(domain.dim)))


def _same_domain(*objs) -> BoxDomain:
    dom = objs[0].domain
    for o in objs[1:]:
        if o.domain != dom:
            raise DomainMismatchError("operands live on different domains")
    return dom


# -- array-level kernels -----------------------------------------------------


def _pad_zero(arr: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (1, 1)
    return np.pad(arr, pad)


def neumann_laplacian_array(values: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """``div(grad f)`` with mirrored ghosts, i.e. zero flux through the walls."""
    out = np.zeros_like(values)
    for axis, h in enumerate(domain.spacing):
        flux = _pad_zero(np.diff(values, axis=axis) / h, axis)
        out += np.diff(flux, axis=axis) / h
    return out


def gradient_arrays(values: np.ndarray, domain: BoxDomain, bc: str = NEUMANN) -> tuple[np.ndarray, ...]:
    comps = []
    for axis, h in enumerate(domain.spacing):
        g = _pad_zero(np.diff(values, axis=axis) / h, axis)
        if bc == DIRICHLET:
            lo = [slice(None)] * values.ndim
            hi = [slice(None)] * values.ndim
            lo[axis], hi[axis] = 0, -1
            g[tuple(lo)] = 2.0 * np.take(values, 0, axis=axis) / h
            g[tuple(hi)] = -2.0 * np.take(values, -1, axis=axis) / h
        comps.append(g)
    return tuple(comps)


def divergence_array(components, domain: BoxDomain) -> np.ndarray:
    out = np.zeros(domain.shape)
    for axis, (c, h) in enumerate(zip(components, domain.spacing)):
        out += np.diff(c, axis=axis) / h
    return out


def centered_gradient_arrays(values: np.ndarray, domain: BoxDomain) -> tuple[np.ndarray, ...]:
    """Cell-centred central differences with mirrored ghosts."""
    comps = []
    for axis, h in enumerate(domain.spacing):
        pad = [(0, 0)] * values.ndim
        pad[axis] = (1, 1)
        p = np.pad(values, pad, mode="edge")
        n = values.shape[axis]
        comps.append((np.take(p, np.arange(2, n + 2), axis=axis) - np.take(p, np.arange(n), axis=axis)) / (2 * h))
    return tuple(comps)


def face_average(values: np.ndarray, axis: int) -> np.ndarray:
    """Average cell values onto the faces normal to ``axis`` (boundary faces copy the wall cell)."""
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    p = np.pad(values, pad, mode="edge")
    n = values.shape[axis]
    return 0.5 * (np.take(p, np.arange(n + 1), axis=axis) + np.take(p, np.arange(1, n + 2), axis=axis))


def faces_to_centers(components) -> tuple[np.ndarray, ...]:
    out = []
    for axis, c in enumerate(components):
        n = c.shape[axis] - 1
        out.append(0.5 * (np.take(c, np.arange(n), axis=axis) + np.take(c, np.arange(1, n + 1), axis=axis)))
    return tuple(out)


def dct(values: np.ndarray, axes=None) -> np.ndarray:
    return sfft.dctn(values, type=2, norm="ortho", axes=axes, workers=_fft_workers)


def idct(coeffs: np.ndarray, axes=None) -> np.ndarray:
    return sfft.idctn(coeffs, type=2, norm="ortho", axes=axes, workers=_fft_workers)


def solve_neumann_poisson(rhs: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Zero-mean ``q`` with ``laplacian(q) = rhs - mean(rhs)``, exact to round-off."""
    coeffs = dct(rhs)
    lam = domain.neumann_eigenvalues
    flat = lam.reshape(-1)
    safe = np.where(flat > 0, flat, 1.0).reshape(lam.shape)
    coeffs = -coeffs / safe
    coeffs.reshape(-1)[0] = 0.0
    return idct(coeffs)


# -- Field-level operators ----------------------------------------------------


def laplacian(f: Field, domain: BoxDomain | None = None) -> Field:
    if domain is not None and f.domain != domain:
        raise DomainMismatchError("field does not live on the operator's domain")
    if f.bc != NEUMANN:
        raise ValueError("laplacian is defined for homogeneous Neumann fields only")
    return Field(f.domain, neumann_laplacian_array(f.values, f.domain))


def gradient(f: Field) -> VectorField:
    comps = gradient_arrays(f.values, f.domain, f.bc)
    return VectorField(f.domain, comps, NO_SLIP if f.bc == NEUMANN else FREE)


def divergence(v: VectorField, domain: BoxDomain | None = None) -> Field:
    if domain is not None and v.domain != domain:
        raise DomainMismatchError("vector field does not live on the operator's domain")
    return Field(v.domain, divergence_array(v.components, v.domain))


def inner(a, b) -> float:
    """Cell or face inner product, weighted by the cell volume."""
    dom = _same_domain(a, b)
    if isinstance(a, Field) and isinstance(b, Field):
        s = np.sum(a.values * b.values)
    elif isinstance(a, VectorField) and isinstance(b, VectorField):
        s = sum(np.sum(x * y) for x, y in zip(a.components, b.components))
    else:
        raise TypeError("inner needs two Fields or two VectorFields")
    return float(s * dom.cell_volume)


def lp_norm(values: np.ndarray, p: float, cell_volume: float) -> float:
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a**p) * cell_volume) ** (1.0 / p))


def norm(f: Field, p: float = 2) -> float:
    return lp_norm(f.values, p, f.domain.cell_volume)


def vector_magnitude(components) -> np.ndarray:
    """Pointwise Euclidean magnitude after averaging faces to cell centres."""
    centres = faces_to_centers(components)
    return np.sqrt(sum(c * c for c in centres))


def vector_norm(v: VectorField, p: float = 2) -> float:
    return lp_norm(vector_magnitude(v.components), p, v.domain.cell_volume)


# -- snapshot files -------------------------------------------------------------

SNAPSHOT_MAGIC = b"KSNSFLD1"
_HEADER = struct.Struct("<8si3i3dd8s")
assert _HEADER.size == 64


def write_field(path, f: Field, time: float = 0.0, field_id: str = "field") -> None:
    """Write a 64-byte little-endian header followed by row-major float64 samples."""
    fid = field_id.encode("ascii")
    if len(fid) > 8:
        raise ValueError("field id is limited to 8 ASCII bytes")
    dom = f.domain
    n = list(dom.cells) + [0] * (3 - dom.dim)
    L = list(dom.lengths) + [0.0] * (3 - dom.dim)
    header = _HEADER.pack(SNAPSHOT_MAGIC, dom.dim, *n, *L, float(time), fid.ljust(8, b"\0"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> tuple[Field, float, str]:
    """Inverse of :func:`write_field`; returns ``(field, time, field_id)``."""
    raw = Path(path).read_bytes()
    if len(raw) < 64:
        raise ValueError("snapshot shorter than its header")
    magic, dim, n1, n2, n3, L1, L2, L3, time, fid = _HEADER.unpack(raw[:64])
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    cells = (n1, n2, n3)[:dim]
    lengths = (L1, L2, L3)[:dim]
    dom = BoxDomain(lengths, cells)
    data = np.frombuffer(raw[64:], dtype="<f8")
    if data.size != int(np.prod(cells)):
        raise ValueError("snapshot payload does not match header")
    return Field(dom, data.reshape(cells).astype(float)), time, fid.rstrip(b"\0").decode("ascii")
