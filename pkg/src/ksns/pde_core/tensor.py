"""Matrix-valued chemotactic sensitivity with an optional boundary cutoff."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..grid import BoxDomain

Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

KINDS = ("zero", "identity_chi", "rotational", "custom-cutoff")


class TensorBoundError(ValueError):
    """A sampled sensitivity matrix exceeded its declared bound."""


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 1, 1 for s >= 2."""
    a = np.clip(s - 1.0, 0.0, 1.0)
    b = 1.0 - a
    with np.errstate(divide="ignore", over="ignore"):
        ga = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        gb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return ga / (ga + gb)


def cutoff_profile(domain: BoxDomain, eta: float, points: tuple[np.ndarray, ...]) -> np.ndarray:
    """Smooth ``0 <= rho_eta <= 1`` vanishing within ``eta * min(L) / 2`` of every wall."""
    if eta <= 0:
        return np.ones_like(points[0])
    width = eta * min(domain.lengths) / 2.0
    out = np.ones_like(points[0])
    for x, L in zip(points, domain.lengths):
        out = out * _smooth_step(x / width) * _smooth_step((L - x) / width)
    return out


def eta_for_layers(domain: BoxDomain, layers: float = 1.0) -> float:
    """Cutoff parameter that silences every face of the outer ``layers`` cells.

    Face matrices average the two neighbouring cells, so the zero zone has
    to reach the centre of the next cell inwards as well.
    """
    return 2.0 * (layers + 0.5) * max(domain.spacing) / min(domain.lengths)


@dataclass(frozen=True)
class SensitivityTensor:
    """``S(x, rho, c)`` as a vectorised evaluator plus its bound ``c_s``.

    ``evaluator(x, rho, c)`` receives positions of shape ``(..., d)`` and
    samples of shape ``(...)`` and returns matrices of shape ``(..., d, d)``
    (broadcasting allowed).  The norm used for the bound is the spectral
    norm.
    """

    evaluator: Evaluator
    c_s: float
    eta: float = 0.0
    kind: str = "custom"

    def __post_init__(self):
        if not (self.c_s >= 0 and math.isfinite(self.c_s)):
            raise ValueError("c_s must be finite and nonnegative")
        if not (0.0 <= self.eta < 1.0):
            raise ValueError("eta must lie in [0, 1)")

    @classmethod
    def zero(cls) -> "SensitivityTensor":
        return cls(lambda x, r, c: np.zeros(x.shape[:-1] + (x.shape[-1], x.shape[-1])), 0.0, 0.0, "zero")

    @classmethod
    def identity(cls, chi: float, eta: float = 0.0) -> "SensitivityTensor":
        def ev(x, r, c):
            d = x.shape[-1]
            return np.broadcast_to(chi * np.eye(d), x.shape[:-1] + (d, d))

        return cls(ev, abs(chi), eta, "identity_chi" if eta == 0 else "custom-cutoff")

    @classmethod
    def rotational(cls, chi: float, angle: float = math.pi / 4, eta: float = 0.0) -> "SensitivityTensor":
        """``chi`` times a rotation in the (x1, x2) plane: flux turned off the gradient."""

        def ev(x, r, c):
            d = x.shape[-1]
            m = np.eye(d)
            m[0, 0] = m[1, 1] = math.cos(angle)
            m[0, 1] = -math.sin(angle)
            m[1, 0] = math.sin(angle)
            return np.broadcast_to(chi * m, x.shape[:-1] + (d, d))

        return cls(ev, abs(chi), eta, "rotational")

    @classmethod
    def from_kind(cls, kind: str, c_s: float, eta: float = 0.0) -> "SensitivityTensor":
        if kind == "zero":
            return cls.zero()
        if kind == "identity_chi":
            return cls.identity(c_s, eta)
        if kind == "rotational":
            return cls.rotational(c_s, eta=eta)
        if kind == "custom-cutoff":
            if eta <= 0:
                raise ValueError("custom-cutoff needs eta > 0")
            return cls.identity(c_s, eta)
        raise ValueError(f"unknown tensor kind {kind!r}")

    def with_eta(self, eta: float) -> "SensitivityTensor":
        return SensitivityTensor(self.evaluator, self.c_s, eta, self.kind)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.c_s == 0.0

    def matrix_field(self, domain: BoxDomain, rho: np.ndarray, c: np.ndarray, check: bool = True) -> np.ndarray:
        """Cell-centred matrices of shape ``(*cells, d, d)`` including the cutoff."""
        centres = domain.cell_centers()
        x = np.stack(centres, axis=-1)
        S = np.asarray(self.evaluator(x, rho, c), dtype=float)
        S = np.broadcast_to(S, domain.shape + (domain.dim, domain.dim))
        if check:
            self.check_bound(S)
        if self.eta > 0:
            S = S * cutoff_profile(domain, self.eta, centres)[..., None, None]
        return S

    def check_bound(self, S: np.ndarray, max_samples: int = 512) -> None:
        flat = S.reshape(-1, S.shape[-2], S.shape[-1])
        stride = max(1, flat.shape[0] // max_samples)
        sample = flat[::stride]
        if not np.all(np.isfinite(sample)):
            raise TensorBoundError("sensitivity evaluator returned non-finite entries")
        norms = np.linalg.norm(sample, ord=2, axis=(-2, -1))
        worst = float(norms.max()) if norms.size else 0.0
        if worst > self.c_s * (1 + 1e-12) + 1e-300:
            raise TensorBoundError(f"sampled |S| = {worst:.6g} exceeds C_S = {self.c_s:.6g}")
