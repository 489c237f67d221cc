from pathlib import Path
from typing import List, Literal, Optional
from pydantic import BaseModel, Field, field_validator, model_validator

from lowertail.schemas.hypergraphs import APDegreeAuditReport
from lowertail.schemas.variational import TailSpec


class InstanceSpec(BaseModel):
    """One hypergraph instance of an experiment."""

    kind: Literal["pattern", "ap", "hypergraph"]
    id: Optional[str] = Field(default=None, description="Instance id used in report rows")
    pattern_file: Optional[str] = Field(default=None, description="Pattern JSON (kind=pattern)")
    n: Optional[int] = Field(default=None, ge=1, description="Host size (pattern and ap)")
    k: Optional[int] = Field(default=None, ge=3, description="Progression length (ap)")
    hypergraph_file: Optional[str] = Field(
        default=None, description="Hypergraph JSON (kind=hypergraph)"
    )

    @model_validator(mode="after")
    def validate_kind(self) -> "InstanceSpec":
        if self.kind == "pattern":
            if self.pattern_file is None or self.n is None:
                raise ValueError("pattern instances need pattern_file and n")
            if not Path(self.pattern_file).is_file():
                raise ValueError(f"pattern file {self.pattern_file} does not exist")
        elif self.kind == "ap":
            if self.k is None or self.n is None:
                raise ValueError("ap instances need k and n")
        else:
            if self.hypergraph_file is None:
                raise ValueError("hypergraph instances need hypergraph_file")
            if not Path(self.hypergraph_file).is_file():
                raise ValueError(f"hypergraph file {self.hypergraph_file} does not exist")
        return self

    @property
    def instance_id(self) -> str:
        if self.id:
            return self.id
        if self.kind == "pattern":
            return f"{Path(self.pattern_file).stem}-n{self.n}"
        if self.kind == "ap":
            return f"ap{self.k}-n{self.n}"
        return Path(self.hypergraph_file).stem


class ExperimentConfig(BaseModel):
    """A batch of (instance, p, threshold) rows and the oracles to run on them."""

    instances: List[InstanceSpec] = Field(min_length=1)
    p_grid: List[float] = Field(min_length=1, description="Densities, each in (0, 1)")
    eta_grid: Optional[List[float]] = Field(default=None, description="Relative levels")
    t_grid: Optional[List[float]] = Field(default=None, description="Absolute thresholds")
    epsilon: float = Field(default=0.3, gt=0, lt=1)
    oracle: Literal["exact", "mc", "both"] = "exact"
    samples: int = Field(default=100_000, ge=100)
    seed: int = 0
    p0: Optional[float] = Field(
        default=None, gt=0, lt=1, description="Upper density bound; defaults to max(p_grid)"
    )
    random_starts: Optional[int] = Field(default=None, ge=0)
    output: Optional[str] = None
    format: Literal["csv", "json"] = "csv"

    @field_validator("p_grid")
    @classmethod
    def validate_p_grid(cls, p_grid: List[float]) -> List[float]:
        for p in p_grid:
            if not 0 < p < 1:
                raise ValueError(f"p = {p!r} is outside (0, 1)")
        return p_grid

    @model_validator(mode="after")
    def validate_thresholds(self) -> "ExperimentConfig":
        grids = [g for g in (self.eta_grid, self.t_grid) if g is not None]
        if len(grids) != 1 or not grids[0]:
            raise ValueError("exactly one of eta_grid and t_grid must be given and nonempty")
        if any(x < 0 for x in grids[0]):
            raise ValueError("thresholds must be nonnegative")
        if self.p0 is not None and self.p0 < max(self.p_grid):
            raise ValueError("p0 must be at least every p in the grid")
        return self

    @property
    def tail_specs(self) -> List[TailSpec]:
        if self.eta_grid is not None:
            return [TailSpec.relative(eta) for eta in self.eta_grid]
        return [TailSpec.absolute(t) for t in self.t_grid]

    @property
    def upper_density(self) -> float:
        return self.p0 if self.p0 is not None else max(self.p_grid)


class SandwichReport(BaseModel):
    """Both sides of the lower-tail sandwich for one (instance, p, eta, epsilon)."""

    instance_id: str
    p: float
    eta: float
    epsilon: float
    log_prob: float = Field(description="log Pr(X <= eta E[X]) from the chosen oracle")
    log_prob_method: Literal["exact", "mc"]

    # -log Pr >= (1 - eps) Phi(eta + eps) - C, under the degree condition
    degree_condition_holds: bool
    K: float = Field(description="v(H) Delta_1(H) / e(H)")
    lam: float
    C_lower: float
    phi_lower_arg: float = Field(description="Phi(eta + eps)")
    lower_rhs: float
    lower_applicable: bool
    lower_holds: Optional[bool] = None
    lower_slack: Optional[float] = None
    lower_vacuous: bool

    # -log Pr <= (1 + eps) Phi((1 - eps) eta) + C'
    phi_upper_arg: float = Field(description="Phi((1 - eps) eta)")
    K_var: float
    C_upper: float
    upper_rhs: float
    upper_holds: bool
    upper_slack: float
    upper_vacuous: bool = Field(description="upper_rhs >= -v(H) log(1 - p)")

    tilt_log_lower_bound: Optional[float] = None
    tilt_method: Optional[Literal["exact", "mc"]] = None
    tilt_holds: Optional[bool] = Field(
        default=None, description="Bound <= exact log_prob; None unless checked exactly"
    )
    tilt_error: Optional[str] = None

    @property
    def holds(self) -> bool:
        return (
            self.lower_holds is not False
            and self.upper_holds
            and self.tilt_holds is not False
        )


class APDemoReport(BaseModel):
    """Sandwich checks across an eta grid on the k-AP hypergraph, with its degree audit."""

    k: int
    n: int
    p: float
    epsilon: float
    audit: APDegreeAuditReport
    sandwiches: List[SandwichReport]

    @property
    def holds(self) -> bool:
        return self.audit.holds and all(s.holds for s in self.sandwiches)


class TriangleCheckRow(BaseModel):
    """log Pr(X_n <= t) <= -Phi_n(t + n^(23/8)) + 2 n^(15/8) for the triangle count at p = 1/2."""

    n: int
    t: float
    log_prob: float = Field(description="Exact log Pr(X_n <= t)")
    phi_shifted: float = Field(description="Phi_n(t + n^(23/8))")
    rhs: float
    holds: bool
    slack: float = Field(description="rhs - log_prob")
    vacuous: bool = Field(description="rhs >= 0, so the bound says nothing")
    phi_t: float = Field(description="Phi_n(t)")
    gap: float = Field(description="-log_prob - Phi_n(t), diagnostic only")


class TriangleCheckReport(BaseModel):
    n: int
    rows: List[TriangleCheckRow]

    @property
    def holds(self) -> bool:
        return all(row.holds for row in self.rows)


class ReportRow(BaseModel):
    """One (instance, p, threshold) row of an experiment report.

    Boolean flags are None when the check does not apply to the row.
    """

    instance_id: str
    p: float
    mode: Literal["relative", "absolute"]
    eta: float
    t: float
    epsilon: float
    num_vertices: int
    num_edges: int

    phi: Optional[float] = None
    theta: Optional[float] = None
    kkt_residual: Optional[float] = None
    status: Optional[str] = None
    phi_symmetric: Optional[float] = None
    phi_zero: Optional[float] = None
    lower_certificate: Optional[float] = Field(
        default=None, description="eps^2/(2K^2) v p with eps = 1 - eta"
    )

    exact_log_prob: Optional[float] = None
    mc_log_prob: Optional[float] = None
    mc_ci_low: Optional[float] = None
    mc_ci_high: Optional[float] = None
    exact_in_mc_ci: Optional[bool] = Field(default=None, description="Informational only")
    tilt_log_lower_bound: Optional[float] = None

    lower_rhs: Optional[float] = None
    lower_slack: Optional[float] = None
    lower_vacuous: Optional[bool] = None
    upper_rhs: Optional[float] = None
    upper_slack: Optional[float] = None
    upper_vacuous: Optional[bool] = None

    symmetric_ok: Optional[bool] = None
    certificate_ok: Optional[bool] = None
    phi_zero_ok: Optional[bool] = None
    tilt_ok: Optional[bool] = None
    upper_ok: Optional[bool] = None
    lower_ok: Optional[bool] = None
    passed: bool = False
    error: Optional[str] = None
    solution: Optional[dict] = Field(
        default=None, description="Solver solution JSON; kept out of CSV reports"
    )

    class Config:
        ser_json_inf_nan = "constants"
