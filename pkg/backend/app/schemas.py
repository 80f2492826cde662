from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.model import DriftModel, builtin


# Enums for better type safety
class ModelName(str, Enum):
    LINEAR = "linear"
    ROTATION = "rotation"
    TWOWELL = "twowell"


class CommandName(str, Enum):
    RATE = "rate"
    SPECTRUM = "spectrum"
    SWEEP = "sweep"
    SIMULATE = "simulate"
    MGF_CHECK = "mgf-check"
    ADMISSIBLE = "admissible"


class InitKind(str, Enum):
    POINT = "point"
    BURN_IN = "burn_in"
    MU0_GAUSSIAN = "mu0_gaussian"


class BoundaryName(str, Enum):
    ONE = "one"
    BUMP = "bump"


def parse_list(value) -> List[float]:
    """'0.4, 0.2, 0.1' -> [0.4, 0.2, 0.1]"""
    if isinstance(value, str):
        return [float(v) for v in value.replace(';', ',').split(',') if v.strip()]
    return [float(v) for v in value]


def parse_matrix(value) -> List[List[float]]:
    """'2, 0; 0, 3' -> [[2, 0], [0, 3]]"""
    if isinstance(value, str):
        rows = [parse_list(row) for row in value.split(';') if row.strip()]
    else:
        rows = [parse_list(row) for row in value]
    if not rows or any(len(row) != len(rows[0]) for row in rows):
        raise ValueError("matrix rows must be non-empty and of equal length")
    return rows


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# Model section
class ModelSection(Section):
    name: ModelName = Field(..., description="Builtin model name")
    omega: float = Field(1.0, description="Rotation strength (rotation, twowell)")
    beta: float = Field(0.0, description="Asymmetry of the twowell field")
    C: Optional[List[List[float]]] = Field(None, description="Hessian of V (linear)")
    Bm: Optional[List[List[float]]] = Field(None, description="Jacobian of b (linear)")
    check_radius: Optional[float] = Field(None, gt=0, description="Sampling ball radius")
    taper_radius: Optional[float] = Field(None, gt=0)
    taper_width: Optional[float] = Field(None, gt=0)

    @field_validator("C", "Bm", mode="before")
    @classmethod
    def _matrix(cls, value):
        return None if value is None else parse_matrix(value)

    @model_validator(mode="after")
    def _linear_needs_blocks(self):
        if self.name == ModelName.LINEAR and (self.C is None or self.Bm is None):
            raise ValueError("linear model needs both C and Bm")
        return self

    def build(self) -> DriftModel:
        params: Dict[str, object] = {}
        if self.check_radius is not None:
            params["check_radius"] = self.check_radius
        if self.name == ModelName.LINEAR:
            params.update(C=np.array(self.C), Bm=np.array(self.Bm))
        elif self.name == ModelName.ROTATION:
            params.update(omega=self.omega)
        else:
            params.update(omega=self.omega, beta=self.beta,
                          taper_radius=self.taper_radius, taper_width=self.taper_width)
        return builtin(self.name.value, **params)


class RunSection(Section):
    command: Optional[CommandName] = None
    out: str = "out"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    threads: Optional[int] = Field(None, ge=1)


# Command parameter sections
class RateParams(Section):
    alpha_points: int = Field(201, ge=3)
    alpha_min: Optional[float] = None
    alpha_max: Optional[float] = None
    sigma_points: int = Field(401, ge=2)
    n_samples: int = Field(2000, ge=1, description="Samples for the assumption check")
    k_b: Optional[float] = Field(None, ge=0, lt=0.5)
    h_b: Optional[float] = Field(None, ge=0)


class SpectrumParams(Section):
    alpha: float = 0.0
    eps: float = Field(0.5, gt=0)
    n: Optional[int] = Field(None, ge=32)
    box_lo: Optional[float] = None
    box_hi: Optional[float] = None
    points_per_width: Optional[int] = Field(None, ge=6)
    tol: Optional[float] = Field(None, gt=0)
    max_iter: Optional[int] = Field(None, ge=1)
    dump_eigvec: bool = False


class SweepParams(Section):
    alpha: float = 0.25
    eps_list: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    points_per_width: Optional[int] = Field(None, ge=6)

    @field_validator("eps_list", mode="before")
    @classmethod
    def _list(cls, value):
        return parse_list(value)


class SimulateParams(Section):
    eps: float = Field(0.5, gt=0)
    dt: float = Field(1e-3, gt=0)
    horizon: float = Field(20.0, gt=0)
    n_paths: int = Field(10000, ge=1)
    init: InitKind = InitKind.POINT
    x0: Optional[List[float]] = None
    t_burn: float = Field(10.0, ge=0)
    g: BoundaryName = BoundaryName.ONE
    alphas: List[float] = Field(default_factory=list)
    bins: int = Field(50, ge=2)
    compare_rate: bool = Field(True, description="Report the L1 distance of the histogram proxy to e_+")
    t_long: Optional[float] = Field(None, gt=0, description="Also run the stationary ergodic estimator")

    @field_validator("x0", "alphas", mode="before")
    @classmethod
    def _list(cls, value):
        return None if value is None else parse_list(value)


class MgfCheckParams(Section):
    eps: float = Field(0.5, gt=0)
    horizon: float = Field(2.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    fk_dt: Optional[float] = Field(None, gt=0)
    n_paths: int = Field(100000, ge=2)
    alphas: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    init: InitKind = InitKind.POINT
    x0: Optional[List[float]] = None
    g: BoundaryName = BoundaryName.ONE
    n: Optional[int] = Field(None, ge=32)
    box_lo: Optional[float] = None
    box_hi: Optional[float] = None

    @field_validator("x0", "alphas", mode="before")
    @classmethod
    def _list(cls, value):
        return None if value is None else parse_list(value)

    @model_validator(mode="after")
    def _no_burn_in(self):
        if self.init == InitKind.BURN_IN:
            raise ValueError("mgf-check compares against a fixed initial law; use point or mu0_gaussian")
        return self


class AdmissibleParams(Section):
    pairs: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.33, 0.75), (0.33, 1.5), (0.49, 1.5)],
        description="(k_b, h_b) pairs, one raster each",
    )
    alpha_min: float = -1.0
    alpha_max: float = 2.0
    p_min: float = 1.0
    p_max: float = 5.0
    resolution: int = Field(121, ge=2)

    @field_validator("pairs", mode="before")
    @classmethod
    def _pairs(cls, value):
        rows = parse_matrix(value)
        if any(len(row) != 2 for row in rows):
            raise ValueError("pairs must be 'k_b, h_b; k_b, h_b; ...'")
        return [tuple(row) for row in rows]


CommandParams = Union[RateParams, SpectrumParams, SweepParams, SimulateParams, MgfCheckParams, AdmissibleParams]

PARAMS_BY_COMMAND = {
    CommandName.RATE: RateParams,
    CommandName.SPECTRUM: SpectrumParams,
    CommandName.SWEEP: SweepParams,
    CommandName.SIMULATE: SimulateParams,
    CommandName.MGF_CHECK: MgfCheckParams,
    CommandName.ADMISSIBLE: AdmissibleParams,
}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    model: Optional[ModelSection] = None
    run: RunSection
    command: CommandName
    params: CommandParams

    def echo(self) -> Dict[str, str]:
        """Flattened configuration with defaults filled, for logs and CSV headers."""
        flat: Dict[str, str] = {}
        for section, data in (("model", self.model), ("run", self.run), (self.command.value, self.params)):
            if data is None:
                continue
            for key, value in data.model_dump(mode="json").items():
                if value is not None:
                    flat[f"{section}.{key}"] = str(value)
        return flat
