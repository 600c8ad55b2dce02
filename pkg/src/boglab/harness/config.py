"""Experiment configuration: YAML file -> validated ``ExperimentConfig``.

Every section rejects unknown keys so that typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..lattice import GridFunction, GridSpec, InteractionProfile, gaussian_packet, plane_wave


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    L: float = Field(2 * math.pi, gt=0)
    M: int = Field(32, ge=2)


def _check_beta(b: float) -> float:
    if not 0 <= b < 0.5:
        raise ValueError(
            f"beta={b} outside the admissible range 0 <= beta < 1/2 "
            "(the norm approximation is only established there)")
    return b


class InteractionConfig(_Strict):
    kind: Literal["gaussian", "box", "cosine", "flat", "zero", "tabulated"] = "gaussian"
    sigma: float = Field(0.5, gt=0)
    strength: float = Field(1.0, ge=0)
    width: float = Field(0.5, gt=0)
    height: float = Field(1.0, ge=0)
    value: float = Field(1.0, ge=0)
    table: Optional[str] = None
    beta: float = 0.0
    renormalize: bool = False
    amp_exponent: Optional[float] = None
    width_exponent: Optional[float] = None

    @field_validator("beta")
    @classmethod
    def _beta(cls, v):
        return _check_beta(v)

    def profile(self, N: int, beta: float | None = None) -> InteractionProfile:
        beta = self.beta if beta is None else beta
        params = {
            "gaussian": {"sigma": self.sigma, "strength": self.strength},
            "box": {"width": self.width, "height": self.height},
            "cosine": {"width": self.width, "height": self.height},
            "flat": {"value": self.value},
            "zero": {},
            "tabulated": {},
        }[self.kind]
        table = None
        if self.kind == "tabulated":
            if self.table is None:
                raise ConfigError("interaction.table: required for kind 'tabulated'")
            data = np.loadtxt(self.table, ndmin=2)
            table = (tuple(data[:, 0]), tuple(data[:, 1]))
        return InteractionProfile(self.kind, tuple(sorted(params.items())), beta, N,
                                  self.amp_exponent, self.width_exponent, table)


class CondensateConfig(_Strict):
    kind: Literal["gaussian", "plane_wave", "file"] = "gaussian"
    center: Optional[float] = None  # defaults to L/2
    width: float = Field(1.0, gt=0)
    momentum: int = 0
    k: int = 0
    path: Optional[str] = None

    def build(self, grid: GridSpec) -> GridFunction:
        if self.kind == "plane_wave":
            return plane_wave(grid, self.k)
        if self.kind == "gaussian":
            c = grid.length / 2 if self.center is None else self.center
            return gaussian_packet(grid, c, self.width, self.momentum)
        if self.path is None:
            raise ConfigError("condensate.path: required for kind 'file'")
        data = np.loadtxt(self.path, ndmin=2)
        vals = data[:, 0] + 1j * data[:, 1] if data.shape[1] > 1 else data[:, 0]
        if len(vals) != grid.points:
            raise ConfigError(f"condensate.path: {len(vals)} samples for a {grid.points}-point grid")
        return GridFunction(grid, vals).normalized()


class ExcitationConfig(_Strict):
    kind: Literal["vacuum", "squeezed"] = "vacuum"
    # plane-wave mode pairs (k1, k2, s): S += s (e_k1 e_k2^T + e_k2 e_k1^T) / (1 + delta)
    pairs: list[tuple[int, int, float]] = Field(default_factory=list)

    def squeezing(self, grid: GridSpec, u: GridFunction) -> np.ndarray:
        M = grid.points
        S = np.zeros((M, M), dtype=complex)
        for k1, k2, s in self.pairs:
            e1 = plane_wave(grid, k1).modes()
            e2 = plane_wave(grid, k2).modes()
            S += s * (np.outer(e1, e2) + np.outer(e2, e1)) / (2.0 if k1 == k2 else 1.0)
        v = u.modes()
        Q = np.eye(M) - np.outer(v, v.conj())
        S = Q @ S @ Q.T
        return 0.5 * (S + S.T)


class TimeConfig(_Strict):
    t_final: float = Field(0.5, ge=0)
    dt: float = Field(1e-3, gt=0)
    stride: int = Field(50, ge=1)
    exact_dt: float = Field(1e-2, gt=0)
    krylov_dim: int = Field(20, ge=2)

    @model_validator(mode="after")
    def _multiple(self):
        n = round(self.t_final / self.dt)
        if abs(n * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ValueError(f"t_final={self.t_final} is not a multiple of dt={self.dt}")
        return self


class TruncationConfig(_Strict):
    n_max: int = Field(4, ge=0)
    max_dim: int = Field(200_000, ge=1)


class ToleranceConfig(_Strict):
    leakage: float = Field(1e-3, gt=0)
    condensate_leak: float = Field(1e-6, gt=0)
    lanczos: float = Field(1e-12, gt=0)


class ExperimentConfig(_Strict):
    grid: GridConfig = GridConfig()
    interaction: InteractionConfig = InteractionConfig()
    N: Union[int, list[int]] = 4
    beta_list: Optional[list[float]] = None
    condensate: CondensateConfig = CondensateConfig()
    excitations: ExcitationConfig = ExcitationConfig()
    time: TimeConfig = TimeConfig()
    truncation: TruncationConfig = TruncationConfig()
    tolerances: ToleranceConfig = ToleranceConfig()
    output: str = "runs/out"
    seed: int = 0
    workers: int = Field(1, ge=1)

    @field_validator("N")
    @classmethod
    def _n(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values:
            raise ValueError("N-list is empty")
        for n in values:
            if n < 2:
                raise ValueError(f"N={n}: exact comparisons need at least 2 particles")
        return v

    @field_validator("beta_list")
    @classmethod
    def _betas(cls, v):
        if v is not None:
            if not v:
                raise ValueError("beta_list is empty")
            for b in v:
                _check_beta(b)
        return v

    @property
    def N_list(self) -> list[int]:
        return list(self.N) if isinstance(self.N, list) else [self.N]

    @property
    def betas(self) -> list[float]:
        return list(self.beta_list) if self.beta_list else [self.interaction.beta]

    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid.L, self.grid.M)

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        text = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"time.dt": 1e-3})``."""
        data = self.echo()
        for key, value in changes.items():
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return from_dict(data)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            lines.append(f"{path}: unknown key")
        elif e["type"] == "missing":
            lines.append(f"{path}: missing required key")
        else:
            lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML ({err})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)
