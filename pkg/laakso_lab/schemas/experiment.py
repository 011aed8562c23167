"""
Experiment Schemas
Pydantic models for experiment configuration files
"""

from fractions import Fraction
from typing import Annotated, Any, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    field_validator,
    model_validator,
)

from laakso_lab.services import schedules
from laakso_lab.services.laakso import LaaksoParams


def _parse_rational(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("Booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"Not a rational: {value!r}") from e
    raise ValueError("Rationals are written as strings like \"3/8\" or as integers")


Rational = Annotated[
    Fraction,
    BeforeValidator(_parse_rational),
    PlainSerializer(lambda x: str(x), return_type=str),
    WithJsonSchema({"type": "string", "pattern": r"^-?\d+(/\d+)?$"}),
]

ExperimentName = Literal[
    "verify-metric",
    "verify-shortcuts",
    "schedule",
    "bad-maps",
    "cascade",
    "collapse",
    "diamond",
    "liplight",
    "density",
    "verify-cubes",
    "distortion",
    "energy-probe",
]

RANDOMIZED = {"verify-shortcuts", "cascade", "collapse", "liplight", "energy-probe"}


# Laakso parameters
class ParamsConfig(BaseModel):
    """M, N and depth; N is one even integer (constant) or the full list N_1..N_{n+1}"""

    model_config = ConfigDict(extra="forbid")

    M: int = Field(2, ge=2)
    N: int | List[int] = 4
    n: Optional[int] = Field(None, ge=1)

    @field_validator("N")
    @classmethod
    def validate_N(cls, v):
        values = [v] if isinstance(v, int) else v
        if not values:
            raise ValueError("N must not be empty")
        for x in values:
            if x < 4 or x % 2:
                raise ValueError(f"N entries must be even and >= 4, got {x}")
        return v

    @model_validator(mode="after")
    def validate_depth(self):
        if isinstance(self.N, int):
            if self.n is None:
                raise ValueError("n is required when N is a single integer")
        elif self.n is not None and self.n != len(self.N) - 1:
            raise ValueError(f"n = {self.n} disagrees with len(N) - 1 = {len(self.N) - 1}")
        elif len(self.N) < 2:
            raise ValueError("N needs at least two entries")
        return self

    def to_params(self) -> LaaksoParams:
        if isinstance(self.N, int):
            return LaaksoParams.constant(self.M, self.N, self.n)
        return LaaksoParams(self.M, tuple(self.N))


# η schedule
class EtaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["explicit", "power", "geometric", "block"] = "geometric"
    values: Optional[List[Rational]] = None
    c: float = Field(1.0, gt=0)
    exponent: float = Field(1.0, gt=0)
    ratio: float = Field(0.5, gt=0, le=1)
    blocks: List[List[int]] = Field(default_factory=list)
    value: float = Field(0.25, gt=0, le=1)

    @model_validator(mode="after")
    def validate_values(self):
        if self.kind == "explicit":
            if not self.values:
                raise ValueError("explicit η needs values")
            for x in self.values:
                if not 0 < x <= 1:
                    raise ValueError(f"η values must lie in (0, 1], got {x}")
        return self

    def resolve(self, levels: int) -> Tuple[Fraction, ...]:
        if self.kind == "explicit":
            return tuple(self.values)
        if self.kind == "power":
            return schedules.eta_power(levels, self.c, self.exponent)
        if self.kind == "geometric":
            return schedules.eta_geometric(levels, self.ratio)
        return schedules.eta_block(levels, self.blocks, self.value)


# α schedule
class AlphaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["power", "geometric", "constant", "explicit"] = "power"
    exponent: float = Field(1.0, gt=0)
    ratio: float = Field(0.5, gt=0)
    value: float = Field(1.0, ge=0)
    values: Optional[List[float]] = None
    length: int = Field(1000, ge=4)

    def resolve(self, length: Optional[int] = None) -> List[float]:
        if self.kind == "explicit":
            if not self.values:
                raise ValueError("explicit α needs values")
            return list(self.values)
        size = self.length if length is None else length
        return schedules.alpha_sequence(self.kind, size, self.exponent, self.ratio, self.value).tolist()


# Per-experiment options
class ExperimentOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    q: float = Field(2.0, ge=1)
    K: float = Field(1.0, ge=1)
    p: float = Field(2.0, gt=0)
    sigma: float = Field(1.0, gt=0, le=1)
    eps: List[float] = Field(default_factory=lambda: [1.0])
    alpha: AlphaConfig = Field(default_factory=AlphaConfig)
    compare_alpha: Optional[AlphaConfig] = None
    levels: Optional[List[int]] = None
    blocks: List[List[int]] = Field(default_factory=list)
    metric: Literal["base", "eta"] = "base"
    symmetrize: bool = False
    samples: int = Field(20, ge=1)
    anchors: int = Field(4, ge=1)
    lam: Optional[float] = Field(None, gt=0)
    intervals_per_level: Optional[int] = Field(None, ge=1)
    r_grid_exponent: float = Field(0.5, gt=0)
    tolerance: Optional[float] = Field(None, gt=0)
    max_iterations: Optional[int] = Field(None, ge=1)

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v: List[float]) -> List[float]:
        if not v or any(e <= 0 for e in v):
            raise ValueError("ε list must be nonempty and positive")
        return v


class ExperimentConfig(BaseModel):
    """One experiment run"""

    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentName
    params: ParamsConfig
    eta: EtaConfig = Field(default_factory=EtaConfig)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    output: Optional[str] = None
    options: ExperimentOptions = Field(default_factory=ExperimentOptions)

    @model_validator(mode="after")
    def validate_seed(self):
        if self.experiment in RANDOMIZED and self.seed is None:
            raise ValueError(f"experiment {self.experiment!r} is randomized and needs a seed")
        return self
