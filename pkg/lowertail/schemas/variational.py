from typing import List, Literal, Optional
from pydantic import BaseModel, Field, field_validator, model_validator


class ProductMeasure(BaseModel):
    """Independent retention probabilities q_v, one per vertex."""

    q: List[float] = Field(description="Retention probability of each vertex")

    @field_validator("q")
    @classmethod
    def validate_q(cls, q: List[float]) -> List[float]:
        for value in q:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"retention probability {value!r} is outside [0, 1]")
        return q


class TailSpec(BaseModel):
    """The lower-tail event e(H[R]) <= threshold.

    In relative mode the threshold is eta * p^r * e(H); in absolute mode it is t.
    """

    mode: Literal["relative", "absolute"] = "relative"
    eta: Optional[float] = Field(default=None, ge=0, description="Relative level")
    t: Optional[float] = Field(default=None, ge=0, description="Absolute threshold")

    @model_validator(mode="after")
    def validate_mode(self) -> "TailSpec":
        if self.mode == "relative" and self.eta is None:
            raise ValueError("relative mode needs eta")
        if self.mode == "absolute" and self.t is None:
            raise ValueError("absolute mode needs t")
        return self

    @classmethod
    def relative(cls, eta: float) -> "TailSpec":
        return cls(mode="relative", eta=eta)

    @classmethod
    def absolute(cls, t: float) -> "TailSpec":
        return cls(mode="absolute", t=t)

    class Config:
        frozen = True


SolutionStatus = Literal["optimal", "boundary_zero", "infeasibility_trivial"]


class VariationalSolution(BaseModel):
    """A minimizer candidate for Phi_p^H together with its certificate data."""

    q: List[float] = Field(description="Optimal product measure q*")
    theta: float = Field(ge=0, description="Dual multiplier of the constraint")
    phi: float = Field(ge=0, description="Objective value sum_v i_p(q_v)")
    constraint_value: float = Field(description="f(q*)")
    threshold: float = Field(description="Right-hand side of the constraint")
    kkt_residual: float = Field(description="Stationarity plus complementary-slackness defect")
    status: SolutionStatus
    start_index: Optional[int] = Field(
        default=None, description="Multi-start index that produced the solution"
    )
    converged: bool = True

    def to_solution_json(self) -> dict:
        """Serialize with the key set of the solution JSON format."""
        return {
            "phi": self.phi,
            "theta": self.theta,
            "q": list(self.q),
            "status": self.status,
            "kkt_residual": self.kkt_residual,
        }
