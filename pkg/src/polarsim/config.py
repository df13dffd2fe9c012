"""JSON run configuration.

Every block rejects unknown keys; validation errors name the offending field
path (for example ``params.c0``).
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .model import ModelParams, SignalSpec, SurfaceGrid, integrate_surface
from .settings import SolverSettings

MODELS = ("eps-inf", "eps-fin", "obstacle-dinf", "obstacle-dfin")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridBlock(_Strict):
    n_theta: int = 128
    n_r: int = 64

    @field_validator("n_theta")
    @classmethod
    def _even(cls, v):
        if v < 8 or v % 2:
            raise ValueError("n_theta must be even and >= 8")
        return v

    @field_validator("n_r")
    @classmethod
    def _nr(cls, v):
        if v < 4:
            raise ValueError("n_r must be >= 4")
        return v


class ParamsBlock(_Strict):
    a1: float = Field(0.0, ge=0)
    a2: float = Field(0.0, ge=0)
    a3: float = Field(1.0, gt=0)
    a4: float = Field(1.0, gt=0)
    a5: float = Field(1.0, gt=0)
    a6: float = Field(1.0, gt=0)
    D: Union[float, Literal["infinite"]] = "infinite"
    eps: float = Field(0.1, gt=0)
    m: float = Field(1.0, gt=0)
    c0: float = Field(0.5, gt=0)

    @field_validator("D")
    @classmethod
    def _d(cls, v):
        if v != "infinite" and not v >= 1:
            raise ValueError("D must be >= 1 or 'infinite'")
        return v

    def to_params(self) -> ModelParams:
        d = self.model_dump()
        d["D"] = math.inf if d["D"] == "infinite" else float(d["D"])
        return ModelParams(**d)


class SignalBlock(_Strict):
    kind: Literal["constant", "angular-bump", "time-modulated-bump"] = "angular-bump"
    level: float = 1.0
    amplitude: float = Field(2.0, ge=0)
    center: float = 0.0
    width: float = Field(0.8, gt=0)
    beta: float = Field(0.5, ge=0, le=1)
    period: float = Field(1.0, gt=0)


class InitialBlock(_Strict):
    kind: Literal["uniform", "bump", "file"] = "uniform"
    center: float = 0.0
    sharpness: float = Field(2.0, ge=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("initial.kind 'file' needs a path")
        return self


class SolverBlock(_Strict):
    model: Literal["eps-inf", "eps-fin", "obstacle-dinf", "obstacle-dfin"] = "obstacle-dinf"
    dt: Optional[float] = Field(None, gt=0)
    t_end: float = Field(1.0, gt=0)
    record_every: int = Field(1, ge=1)
    snapshot_times: Optional[list[float]] = None
    laplacian: Literal["spectral", "fd2"] = "fd2"
    lcp: Literal["active-set", "psor"] = "active-set"
    theta_pos: float = Field(1e-12, gt=0)
    psor_omega: float = Field(1.5, gt=0, lt=2)
    psor_tol: float = Field(1e-10, gt=0)
    psor_max_sweeps: int = Field(100_000, ge=1)
    mass_tol: float = Field(1e-10, gt=0)
    steady_tol: float = Field(1e-11, gt=0)
    steady_dt: float = Field(1.0, gt=0)
    steady_method: Literal["pseudo-time", "active-set"] = "pseudo-time"


class StudyBlock(_Strict):
    eps_values: list[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025], min_length=1)
    delta: float = Field(0.1, ge=0)
    limit_dt: float = Field(1e-3, gt=0)
    ratio_max: float = Field(0.8, gt=0)
    n_pairs: int = Field(20, ge=1)
    contraction_dt: float = Field(0.01, gt=0)
    n_random: int = Field(5, ge=1)
    stability_dt: float = Field(0.01, gt=0)
    stability_t_end: float = Field(10.0, gt=0)
    stability_tol: float = Field(1e-6, gt=0)
    mass_ladder: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0], min_length=2)
    ell_values: list[float] = Field(default_factory=lambda: [1.0, 0.1, 0.01], min_length=2)
    consistency_ells: list[float] = Field(default_factory=lambda: [0.1, 0.01, 0.001], min_length=2)
    consistency_dt: float = Field(0.01, gt=0)
    n_operator_samples: int = Field(50, ge=1)

    @field_validator("eps_values", "mass_ladder", "ell_values", "consistency_ells")
    @classmethod
    def _positive(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("sweep values must be positive")
        return v


class RunConfig(_Strict):
    grid: GridBlock = GridBlock()
    params: ParamsBlock = ParamsBlock()
    signal: SignalBlock = SignalBlock()
    initial: InitialBlock = InitialBlock()
    solver: SolverBlock = SolverBlock()
    study: StudyBlock = StudyBlock()
    output: str = "polarsim_out"
    seed: int = 20240601

    @model_validator(mode="after")
    def _consistency(self):
        finite = self.params.D != "infinite"
        if self.solver.model in ("eps-fin", "obstacle-dfin") and not finite:
            raise ValueError(f"solver.model {self.solver.model!r} needs a finite params.D")
        if self.solver.model in ("eps-inf", "obstacle-dinf") and finite:
            raise ValueError(f"solver.model {self.solver.model!r} needs params.D = 'infinite'")
        if self.signal.kind == "constant" and self.signal.level < self.params.c0:
            raise ValueError("signal.level must be >= params.c0")
        return self

    # conversions ------------------------------------------------------------
    def model_params(self, **overrides) -> ModelParams:
        p = self.params.to_params()
        if overrides:
            from dataclasses import replace
            p = replace(p, **overrides)
        return p

    def signal_spec(self) -> SignalSpec:
        return SignalSpec(c0=self.params.c0, **self.signal.model_dump())

    def settings(self) -> SolverSettings:
        s = self.solver
        return SolverSettings(
            laplacian=s.laplacian, lcp=s.lcp, theta_pos=s.theta_pos, psor_omega=s.psor_omega,
            psor_tol=s.psor_tol, psor_max_sweeps=s.psor_max_sweeps, mass_tol=s.mass_tol,
            steady_tol=s.steady_tol,
        )

    def initial_field(self, grid: SurfaceGrid) -> np.ndarray:
        m = self.params.m
        ic = self.initial
        if ic.kind == "uniform":
            return np.full(grid.n_theta, m / grid.length)
        if ic.kind == "bump":
            f = np.exp(ic.sharpness * np.cos(grid.theta - ic.center))
            return f * (m / integrate_surface(grid, f))
        data = np.loadtxt(ic.path, delimiter=",", ndmin=1, comments="#")
        u = data[:, -1] if data.ndim == 2 else data
        if u.shape != (grid.n_theta,):
            raise ConfigError(f"initial.path: expected {grid.n_theta} values, got {u.size}")
        if abs(integrate_surface(grid, u) - m) > self.solver.mass_tol * max(1.0, m):
            raise ConfigError("initial.path: initial surface mass must equal m")
        return u


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> RunConfig:
    with open(Path(path), encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(data)
