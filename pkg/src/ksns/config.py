"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .pde_core.stepper import FLUID_MODELS, Scenario
from .pde_core.tensor import KINDS, SensitivityTensor
from .presets import PRESETS, preset, stokes_pair

PHI_KINDS = ("linear_gravity", "zero")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    cells: tuple[int, ...] = (128,)
    lengths: tuple[float, ...] = (math.pi,)
    dt: float | None = None
    t_end: float = 20.0
    epsilon: float = 0.01
    fluid_model: str = "navier_stokes"
    preset: str = "sperm_excess"
    tensor_kind: str = "identity_chi"
    tensor_c_s: float = 0.5
    tensor_eta: float = 0.0
    phi_kind: str = "linear_gravity"
    output_every: float = 0.1
    output_dir: str | None = None
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        for name, seq in (("cells", self.cells), ("lengths", self.lengths)):
            if len(seq) not in (1, self.dim):
                raise ConfigError(f"{name} needs 1 or {self.dim} entries")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {', '.join(PRESETS)}")
        if self.fluid_model not in FLUID_MODELS:
            raise ConfigError(f"fluid_model must be one of {', '.join(FLUID_MODELS)}")
        if self.tensor_kind not in KINDS:
            raise ConfigError(f"tensor.kind must be one of {', '.join(KINDS)}")
        if self.phi_kind not in PHI_KINDS:
            raise ConfigError(f"phi.kind must be one of {', '.join(PHI_KINDS)}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.t_end < 0 or not self.output_every > 0:
            raise ConfigError("t_end must be >= 0 and output.every > 0")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive or 'auto'")
        if not (0 <= self.tensor_eta < 1) or self.tensor_c_s < 0:
            raise ConfigError("tensor.eta must lie in [0, 1) and tensor.c_s must be >= 0")
        if self.tensor_kind == "custom-cutoff" and self.tensor_eta <= 0:
            raise ConfigError("tensor.kind = custom-cutoff needs tensor.eta > 0")
        return self

    def tensor(self) -> SensitivityTensor:
        return SensitivityTensor.from_kind(self.tensor_kind, self.tensor_c_s, self.tensor_eta)

    def _kwargs(self) -> dict:
        cells = self.cells * self.dim if len(self.cells) == 1 else self.cells
        lengths = self.lengths * self.dim if len(self.lengths) == 1 else self.lengths
        return dict(
            dim=self.dim,
            cells=cells,
            lengths=lengths,
            tensor=self.tensor(),
            phi_kind=self.phi_kind,
            dt=self.dt,
            t_end=self.t_end,
            output_every=self.output_every,
            seed=self.seed,
        )

    def scenarios(self) -> list[Scenario]:
        """One scenario, or the Navier-Stokes/Stokes pair for ``stokes_ab``."""
        try:
            if self.preset == "stokes_ab":
                return list(stokes_pair(self.epsilon, **self._kwargs()))
            return [preset(self.preset, self.epsilon, fluid_model=self.fluid_model, **self._kwargs())]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes).validate()


# config key -> (field name, parser)
def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    s = s.strip().lower()
    if s in ("pi", "π"):
        return math.pi
    if s.endswith("pi"):
        return float(s[:-2].rstrip("*")) * math.pi
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace("x", ",").split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(_float(x) for x in s.split(",") if x.strip())


def _dt(s: str) -> float | None:
    return None if s.strip().lower() == "auto" else _float(s)


def _str(s: str) -> str:
    return s.strip()


def _opt_str(s: str) -> str | None:
    s = s.strip()
    return s or None


KEYS = {
    "dim": ("dim", _int),
    "cells": ("cells", _ints),
    "lengths": ("lengths", _floats),
    "dt": ("dt", _dt),
    "t_end": ("t_end", _float),
    "epsilon": ("epsilon", _float),
    "fluid_model": ("fluid_model", _str),
    "preset": ("preset", _str),
    "tensor.kind": ("tensor_kind", _str),
    "tensor.c_s": ("tensor_c_s", _float),
    "tensor.eta": ("tensor_eta", _float),
    "phi.kind": ("phi_kind", _str),
    "output.every": ("output_every", _float),
    "output.dir": ("output_dir", _opt_str),
    "seed": ("seed", _int),
}


def parse_config(text: str, path: str | None = None) -> RunConfig:
    values = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        name, conv = KEYS[key]
        try:
            values[name] = conv(val)
        except ValueError:
            raise ConfigError(f"bad value {val!r} for {key}", lineno, path) from None
    cfg = RunConfig(**values)
    try:
        return cfg.validate()
    except ConfigError as exc:
        key = next((k for k in KEYS if str(exc).startswith(k + " ")), None)
        raise ConfigError(str(exc), seen.get(key) if key else None, path) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: RunConfig) -> str:
    out = []
    for key, (name, _) in KEYS.items():
        v = getattr(cfg, name)
        if v is None:
            v = "auto" if key == "dt" else ""
        elif isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{key} = {v}")
    return "\n".join(out) + "\n"


CONFIG_FIELDS = tuple(f.name for f in fields(RunConfig))
