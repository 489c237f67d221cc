from fractions import Fraction
from typing import List, Optional
from pydantic import BaseModel, Field, model_validator


class HyperedgeDocument(BaseModel):
    """One weighted hyperedge in the hypergraph JSON format."""

    A: List[int] = Field(description="Vertex indices of the edge")
    d: float = Field(default=1.0, gt=0, description="Positive edge weight")


class HypergraphDocument(BaseModel):
    """Hypergraph JSON format: {"r": int, "v": int, "edges": [{"A": [ints], "d": float}]}."""

    r: int = Field(ge=1, description="Uniformity")
    v: int = Field(ge=0, description="Number of vertices")
    edges: List[HyperedgeDocument] = Field(default_factory=list)


class PatternHypergraph(BaseModel):
    """An unweighted s-uniform pattern H, as read from {"s": int, "v": int, "edges": [[ints]]}."""

    s: int = Field(ge=1, description="Uniformity of the pattern")
    v: int = Field(ge=1, description="Number of pattern vertices v_H")
    edges: List[List[int]] = Field(min_length=1, description="Distinct s-subsets of range(v)")

    @model_validator(mode="after")
    def validate_edges(self) -> "PatternHypergraph":
        seen = set()
        for edge in self.edges:
            key = frozenset(edge)
            if len(key) != self.s or len(edge) != self.s:
                raise ValueError(f"edge {edge} is not an {self.s}-set")
            if any(x < 0 or x >= self.v for x in edge):
                raise ValueError(f"edge {edge} leaves the vertex range 0..{self.v - 1}")
            if key in seen:
                raise ValueError(f"duplicate edge {sorted(edge)}")
            seen.add(key)
        return self

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    class Config:
        frozen = True


class DensityReport(BaseModel):
    """The s-density m_s(H) as an exact rational, with a subpattern achieving it."""

    numerator: int
    denominator: int = Field(gt=0)
    subpattern_vertices: List[int] = Field(description="Vertex set of the achieving F")
    subpattern_edges: List[List[int]] = Field(description="Edges of the achieving F")

    @property
    def value(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)


class DegreeConditionReport(BaseModel):
    """Outcome of checking Delta_s(H) <= K (lambda p)^(s-1) e(H) / v(H) for every s."""

    holds: bool
    worst_s: int = Field(description="The s maximizing the ratio")
    ratio: float = Field(description="Delta_s / ((lambda p)^(s-1) e(H)/v(H)) at worst_s")
    normalized_ratio: float = Field(description="ratio / K; the condition holds iff <= 1")
    ratios: List[float] = Field(description="The ratio for s = 1, ..., r")


class DegreeAuditRow(BaseModel):
    """One u in the copy-hypergraph degree audit."""

    u: int
    delta: float = Field(description="Observed Delta_u")
    bound: float = Field(description="(n^(-1/m_s))^(u-1) n^(v_H - s)")
    slack: Optional[float] = Field(description="bound / delta (None when delta = 0)")
    holds: bool


class DegreeAuditReport(BaseModel):
    """Degree audit of the copy hypergraph of a pattern in K_n^(s)."""

    n: int
    num_vertices: int
    num_edges: int
    delta_one: float
    expected_delta_one: float = Field(description="e_H e(H) / v(H)")
    delta_one_identity_holds: bool
    density_numerator: int
    density_denominator: int
    rows: List[DegreeAuditRow]

    @property
    def holds(self) -> bool:
        return self.delta_one_identity_holds and all(row.holds for row in self.rows)


class APDegreeAuditReport(BaseModel):
    """Degree audit of the k-AP hypergraph on [n]."""

    k: int
    n: int
    num_edges: int
    deltas: List[float] = Field(description="Observed Delta_u for u = 1, ..., k")
    delta_one_bound: int = Field(description="k n")
    pair_bound: int = Field(description="C(k, 2)")
    holds: bool
