from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .germ import Germ, StructuralModel, build_germ
from .ito_algebra import (ItoElement, canonical_element, death_element, poisson_element,
                          wiener_element)
from .unraveling import (DiffusiveChannel, JumpChannel, TrajectoryModel, from_general_model,
                         uniform_grid)
from .utils.rng_utils import MAX_SEED

# complex numbers travel as [re, im]; a bare real number is accepted too
Number = Union[float, tuple[float, float]]
Vector = list[Number]
Matrix = list[list[Number]]


def to_complex(value: Number) -> complex:
    if isinstance(value, (tuple, list)):
        return complex(value[0], value[1])
    return complex(value)


def to_array(value) -> np.ndarray:
    """Parsed nested lists of Number -> complex ndarray. Tuples are [re, im] leaves."""
    if isinstance(value, tuple):
        return np.asarray(to_complex(value))
    if isinstance(value, list):
        if not value:
            return np.zeros(0, dtype=complex)
        return np.stack([to_array(v) for v in value])
    return np.asarray(complex(value))


def from_array(a) -> list:
    """complex ndarray -> nested lists of [re, im]."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return (float(a.real), float(a.imag))
    return [from_array(x) for x in a]


def _square(value, name: str, n: int | None = None) -> int:
    a = to_array(value)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"{name} must be {n}x{n}, got {a.shape[0]}x{a.shape[1]}")
    return a.shape[0]


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StructuralModelConfig(_Config):
    type: Literal["structural"]
    H: Matrix
    L: list[Matrix] = Field(default_factory=list)
    Ln: list[list[Matrix]] = Field(default_factory=list)
    Kn: Optional[list[Matrix]] = None
    D: Optional[Matrix] = None
    tamper: Optional[Literal["negate_channel_block"]] = None

    @model_validator(mode="after")
    def check_shapes(self):
        n = _square(self.H, "H")
        for i, op in enumerate(self.L):
            _square(op, f"L[{i}]", n)
        for m, row in enumerate(self.Ln):
            if len(row) != len(self.L):
                raise ValueError(f"Ln[{m}] must hold one operator per Kraus operator ({len(self.L)})")
            for i, op in enumerate(row):
                _square(op, f"Ln[{m}][{i}]", n)
        if self.Kn is not None:
            if len(self.Kn) != len(self.Ln):
                raise ValueError(f"Kn must hold one operator per channel ({len(self.Ln)})")
            for m, op in enumerate(self.Kn):
                _square(op, f"Kn[{m}]", n)
        if self.D is not None:
            _square(self.D, "D", n)
        return self

    @property
    def n(self) -> int:
        return len(self.H)

    def to_model(self) -> StructuralModel:
        n, kraus, d = self.n, len(self.L), len(self.Ln)
        Ln = np.stack([np.stack([to_array(op) for op in row]) if kraus else np.zeros((0, n, n), complex)
                       for row in self.Ln]) if d else np.zeros((0, kraus, n, n), complex)
        return StructuralModel(
            H=to_array(self.H),
            L=np.stack([to_array(op) for op in self.L]) if kraus else np.zeros((0, n, n), complex),
            Ln=Ln,
            Kn=None if self.Kn is None else (np.stack([to_array(op) for op in self.Kn]) if d else None),
            D=None if self.D is None else to_array(self.D),
        )

    def to_germ(self) -> Germ:
        germ = build_germ(self.to_model())
        return germ.negate_channel_block() if self.tamper == "negate_channel_block" else germ


class ChannelConfig(_Config):
    kind: Literal["diffusive", "jump"]
    op: Matrix

    def to_channel(self):
        op = to_array(self.op)
        return DiffusiveChannel(op) if self.kind == "diffusive" else JumpChannel(op)


class GeneralChannelConfig(_Config):
    kind: Literal["diffusive", "jump"]
    J: Matrix
    L_plus: Matrix
    K_minus: Matrix


class TrajectoryModelConfig(_Config):
    type: Literal["trajectory"]
    K: Matrix
    channels: list[ChannelConfig] = Field(default_factory=list)
    general: Optional[GeneralChannelConfig] = None

    @model_validator(mode="after")
    def check_shapes(self):
        n = _square(self.K, "K")
        if self.general is not None:
            if self.channels:
                raise ValueError("give either channels or a general block, not both")
            for name in ("J", "L_plus", "K_minus"):
                _square(getattr(self.general, name), f"general.{name}", n)
        for i, c in enumerate(self.channels):
            _square(c.op, f"channels[{i}].op", n)
        if len({c.kind for c in self.channels}) > 1:
            raise ValueError("diffusive and jump channels cannot be mixed")
        return self

    @property
    def n(self) -> int:
        return len(self.K)

    def to_model(self) -> TrajectoryModel:
        K = to_array(self.K)
        if self.general is not None:
            g = self.general
            return from_general_model(to_array(g.J), to_array(g.L_plus), to_array(g.K_minus), K, g.kind)
        return TrajectoryModel(K, tuple(c.to_channel() for c in self.channels))

    def to_germ(self) -> Germ:
        return build_germ(self.to_model().to_structural_model())


ModelConfig = Annotated[Union[StructuralModelConfig, TrajectoryModelConfig], Field(discriminator="type")]


class SimulationConfig(_Config):
    dt: float = Field(1e-3, gt=0)
    tmax: float = Field(1.0, gt=0)
    ntraj: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    steps: Optional[int] = Field(None, ge=1)
    picard_iters: int = Field(25, ge=0)

    @model_validator(mode="after")
    def check_horizon(self):
        if self.tmax < self.dt:
            raise ValueError(f"tmax ({self.tmax}) must be >= dt ({self.dt})")
        return self

    @property
    def step_count(self) -> int:
        return self.steps if self.steps is not None else int(round(self.tmax / self.dt))

    def grid(self) -> np.ndarray:
        if self.steps is not None:
            return np.linspace(0.0, self.tmax, self.steps + 1)
        return uniform_grid(self.dt, self.tmax)


class OutputConfig(_Config):
    path: Optional[str] = None
    format: Literal["csv", "json"] = "csv"


class ItoElementConfig(_Config):
    kind: Literal["quadruple", "death", "wiener", "poisson", "canonical"]
    label: Optional[str] = None
    k_dim: Optional[int] = Field(None, ge=0)
    # quadruple
    scalar: Number = 0.0
    row: Vector = Field(default_factory=list)
    col: Vector = Field(default_factory=list)
    block: Matrix = Field(default_factory=list)
    # wiener / poisson
    alpha: Number = 0.0
    xi: Number = 0.0
    zeta: Number = 0.0
    # canonical
    mu: Optional[Literal["-", "•", "."]] = None
    nu: Optional[Literal["+", "•", "."]] = None
    coefficient: Union[Number, Vector, Matrix] = 1.0

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == "canonical" and (self.mu is None or self.nu is None):
            raise ValueError("canonical elements need mu and nu")
        if self.kind in ("quadruple", "death") and self.k_dim is None:
            raise ValueError(f"{self.kind} elements need k_dim")
        return self

    def to_element(self) -> ItoElement:
        if self.kind == "quadruple":
            k = self.k_dim
            return ItoElement(
                k,
                scalar=to_complex(self.scalar),
                row=to_array(self.row) if self.row else None,
                col=to_array(self.col) if self.col else None,
                block=to_array(self.block) if self.block else None,
            )
        if self.kind == "death":
            return death_element(self.k_dim)
        if self.kind == "wiener":
            return wiener_element(to_complex(self.alpha), to_complex(self.xi))
        if self.kind == "poisson":
            return poisson_element(to_complex(self.alpha), to_complex(self.zeta))
        return canonical_element(self.mu, self.nu, to_array(self.coefficient), self.k_dim)


class RunConfig(_Config):
    model: Optional[ModelConfig] = None
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    observables: dict[str, Matrix] = Field(default_factory=dict)
    psi0: Optional[Vector] = None
    rho0: Optional[Matrix] = None
    output: OutputConfig = Field(default_factory=OutputConfig)
    elements: list[ItoElementConfig] = Field(default_factory=list)
    tol: float = Field(1e-10, gt=0)

    @model_validator(mode="after")
    def check_dimensions(self):
        if self.model is None:
            if self.observables or self.psi0 is not None or self.rho0 is not None:
                raise ValueError("observables and initial data need a model section")
            return self
        n = self.model.n
        for name, op in self.observables.items():
            _square(op, f"observables[{name!r}]", n)
        if self.psi0 is not None and len(self.psi0) != n:
            raise ValueError(f"psi0 must have length {n}, got {len(self.psi0)}")
        if self.rho0 is not None:
            _square(self.rho0, "rho0", n)
        return self

    def observable_arrays(self) -> dict[str, np.ndarray]:
        return {name: to_array(op) for name, op in self.observables.items()}

    def initial_state(self) -> np.ndarray:
        """psi0, or the ground state e_0 when none is given."""
        if self.psi0 is not None:
            return to_array(self.psi0)
        psi = np.zeros(self.model.n, dtype=complex)
        psi[0] = 1.0
        return psi

    def initial_density(self) -> np.ndarray:
        if self.rho0 is not None:
            return to_array(self.rho0)
        psi = self.initial_state()
        return np.outer(psi, psi.conj())
