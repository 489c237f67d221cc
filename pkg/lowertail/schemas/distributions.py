import math
from typing import List

from pydantic import BaseModel, Field, field_validator, model_validator


# Masses must sum to one within this absolute tolerance, whatever the support size.
MASS_TOLERANCE = 1e-12


class BernoulliParam(BaseModel):
    """A Bernoulli parameter in [0, 1]."""

    value: float = Field(ge=0.0, le=1.0, description="Success probability")

    class Config:
        frozen = True


class FiniteDistribution(BaseModel):
    """Probability distribution on a finite set {0, ..., support_size - 1}."""

    mass: List[float] = Field(min_length=1, description="Probability of each point")

    @field_validator("mass")
    @classmethod
    def validate_mass(cls, mass: List[float]) -> List[float]:
        if any(m < 0 for m in mass):
            raise ValueError("masses must be nonnegative")
        if abs(math.fsum(mass) - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"masses sum to {math.fsum(mass)!r}, not 1")
        return mass

    @property
    def support_size(self) -> int:
        return len(self.mass)

    class Config:
        frozen = True


class JointBinaryDistribution(BaseModel):
    """Joint law of a binary X and a finite Z, as a 2 x |Z| mass table.

    Row 0 holds Pr(X = 0, Z = z), row 1 holds Pr(X = 1, Z = z).
    """

    mass: List[List[float]] = Field(description="mass[x][z] = Pr(X = x, Z = z)")

    @model_validator(mode="after")
    def validate_table(self) -> "JointBinaryDistribution":
        if len(self.mass) != 2:
            raise ValueError("the binary coordinate needs exactly two rows")
        width = len(self.mass[0])
        if width == 0 or len(self.mass[1]) != width:
            raise ValueError("both rows must cover the same nonempty Z-alphabet")
        flat = self.mass[0] + self.mass[1]
        if any(m < 0 for m in flat):
            raise ValueError("masses must be nonnegative")
        if abs(math.fsum(flat) - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"masses sum to {math.fsum(flat)!r}, not 1")
        return self

    @property
    def alphabet_size(self) -> int:
        return len(self.mass[0])

    class Config:
        frozen = True
