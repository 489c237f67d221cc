import math
from typing import List, Literal, Optional
from pydantic import BaseModel, Field, model_validator


class TailEstimate(BaseModel):
    """A natural-log estimate of a lower-tail probability."""

    log_prob: float = Field(le=0, description="log Pr(tail event)")
    method: Literal["exact", "mc", "tilted_certificate"]
    ci_low: Optional[float] = Field(default=None, description="Lower 95% bound on log_prob")
    ci_high: Optional[float] = Field(default=None, description="Upper 95% bound on log_prob")
    samples: Optional[int] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def validate_interval(self) -> "TailEstimate":
        has_ci = self.ci_low is not None or self.ci_high is not None
        if self.method == "exact" and has_ci:
            raise ValueError("exact estimates carry no confidence interval")
        if self.ci_low is not None and self.ci_low > self.log_prob:
            raise ValueError("ci_low exceeds log_prob")
        if self.ci_high is not None and self.ci_high < self.log_prob:
            raise ValueError("ci_high is below log_prob")
        return self

    def to_row(self) -> dict:
        """Serialize as an estimate JSON row."""
        ci = None
        if self.ci_low is not None and self.ci_high is not None:
            ci = [self.ci_low, self.ci_high]
        return {
            "method": self.method,
            "log_prob": self.log_prob,
            "ci": ci,
            "samples": self.samples,
            "seed": self.seed,
        }

    class Config:
        ser_json_inf_nan = "constants"


class TiltCertificate(BaseModel):
    """Lower bound on log Pr(X <= threshold) from tilting Ber(p)^V towards q*."""

    q_star: List[float]
    epsilon: float = Field(gt=0, lt=1)
    K_var: float = Field(gt=0, description="Variance constant of the log-likelihood ratio")
    C_prime: float = Field(description="K_var / (2 epsilon^2)")
    C: float = Field(description="C_prime + log(2 / epsilon)")
    phi_hat: float = Field(ge=0, description="sum_v i_p(q*_v)")
    y2_threshold: float = Field(description="(1 + epsilon) phi_hat + C_prime")
    log_lower_bound: float = Field(le=0)
    empirical_Y1Y2: float = Field(ge=0, le=1, description="Pr(Y' in Y1 and Y2)")
    prob_y1: float = Field(ge=0, le=1, description="Pr(Y' in Y1)")
    prob_not_y2: float = Field(ge=0, le=1, description="Pr(Y' not in Y2)")
    method: Literal["exact", "mc"]
    confidence: Optional[float] = Field(
        default=None, description="Confidence of the one-sided bound (mc only)"
    )
    samples: Optional[int] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def validate_constants(self) -> "TiltCertificate":
        expected_prime = self.K_var / (2 * self.epsilon**2)
        if not math.isclose(self.C_prime, expected_prime, rel_tol=1e-12):
            raise ValueError("C_prime must equal K_var / (2 epsilon^2)")
        expected_c = self.C_prime + math.log(2 / self.epsilon)
        if not math.isclose(self.C, expected_c, rel_tol=1e-12):
            raise ValueError("C must equal C_prime + log(2 / epsilon)")
        return self

    class Config:
        ser_json_inf_nan = "constants"
