"""
Experiment driver: runs the solver and the oracles over a grid of instances and checks
the lower-tail inequalities at desk scale, with honest labelling of vacuous bounds.
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from loguru import logger
from pydantic import ValidationError
from scipy.special import logsumexp

from lowertail.core.config import get_settings
from lowertail.core.exceptions import (
    BudgetExceededError,
    ConfigError,
    InfeasibleMeasureError,
    LowerTailError,
    VacuousCertificateError,
)
from lowertail.schemas.experiments import (
    APDemoReport,
    ExperimentConfig,
    InstanceSpec,
    ReportRow,
    SandwichReport,
    TriangleCheckReport,
    TriangleCheckRow,
)
from lowertail.schemas.hypergraphs import PatternHypergraph
from lowertail.schemas.variational import TailSpec
from lowertail.services.builders import (
    ap_degree_audit,
    ap_hypergraph,
    copy_hypergraph,
    theorem_constants,
)
from lowertail.services.hypergraph import (
    WeightedHypergraph,
    degree_condition_check,
    load_hypergraph,
    max_degree,
    total_weight,
)
from lowertail.services.oracles import (
    exact_lower_tail,
    exact_weight_distribution,
    mc_lower_tail,
    tilted_lower_bound_certificate,
    variance_bound_constant,
)
from lowertail.services.variational import (
    phi_lower_certificate,
    phi_zero,
    solve_phi,
    solve_phi_symmetric,
    threshold,
    to_absolute,
    to_relative,
)

# Slack allowed in every asserted inequality
INEQUALITY_ATOL = 1e-9
SYMMETRIC_ATOL = 1e-8
CERTIFICATE_ATOL = 1e-8
PHI_ZERO_ATOL = 1e-6

TRIANGLE = PatternHypergraph(s=2, v=3, edges=[[0, 1], [0, 2], [1, 2]])


def load_pattern(path: str) -> PatternHypergraph:
    with open(path) as handle:
        return PatternHypergraph.model_validate_json(handle.read())


def load_config(path: str) -> ExperimentConfig:
    """Read an experiment configuration JSON file.

    Raises:
        ConfigError: If the file cannot be read or does not validate
    """
    try:
        with open(path) as handle:
            return ExperimentConfig.model_validate_json(handle.read())
    except (OSError, ValidationError) as e:
        raise ConfigError(f"invalid experiment configuration {path}: {e}") from e


def build_instance(spec: InstanceSpec) -> WeightedHypergraph:
    """Construct the hypergraph an instance spec refers to."""
    if spec.kind == "pattern":
        return copy_hypergraph(load_pattern(spec.pattern_file), spec.n)
    if spec.kind == "ap":
        return ap_hypergraph(spec.k, spec.n)
    return load_hypergraph(spec.hypergraph_file)


def _log_probability(
    H: WeightedHypergraph,
    p: float,
    spec: TailSpec,
    oracle: str,
    samples: int,
    seed: int,
) -> Tuple[float, str]:
    if oracle != "mc" and H.num_vertices <= get_settings().EXACT_VERTEX_BUDGET:
        return exact_lower_tail(H, p, spec).log_prob, "exact"
    return mc_lower_tail(H, p, spec, samples, seed).log_prob, "mc"


def sandwich_check(
    H: WeightedHypergraph,
    p: float,
    eta: float,
    epsilon: float,
    instance_id: str = "instance",
    p0: Optional[float] = None,
    oracle: str = "exact",
    samples: int = 100_000,
    seed: int = 0,
    random_starts: Optional[int] = None,
    log_prob: Optional[Tuple[float, str]] = None,
) -> SandwichReport:
    """Evaluate both sides of the lower-tail sandwich with explicit constants.

    Lower side: -log Pr(X <= eta E[X]) >= (1 - eps) Phi(eta + eps) - C, with lambda and
    C from theorem_constants at K = v(H) Delta_1(H) / e(H); not applicable when the
    degree condition fails for that K and lambda.

    Upper side: -log Pr(X <= eta E[X]) <= (1 + eps) Phi((1 - eps) eta) + C', with
    C' = K(p0)/(2 eps^2) + log(2/eps), together with the tilted certificate at the
    minimizer of Phi((1 - eps) eta).

    Args:
        log_prob: Precomputed (log Pr, method); computed with `oracle` otherwise
    """
    p0 = p if p0 is None else p0
    spec = TailSpec.relative(eta)
    if log_prob is None:
        log_prob = _log_probability(H, p, spec, oracle, samples, seed)
    value, method = log_prob
    cost = -value

    K = H.num_vertices * max_degree(H, 1) / total_weight(H)
    lam, C_lower = theorem_constants(H.uniformity, p0, epsilon, K)
    degree = degree_condition_check(H, p, K, lam)
    phi_lower_arg = solve_phi(H, p, TailSpec.relative(eta + epsilon), random_starts).phi
    lower_rhs = (1 - epsilon) * phi_lower_arg - C_lower
    applicable = degree.holds
    if not applicable:
        logger.info(
            f"{instance_id}: degree condition fails at s={degree.worst_s} "
            f"(ratio/K={degree.normalized_ratio:.3g}); lower side not applicable"
        )

    upper = solve_phi(H, p, TailSpec.relative((1 - epsilon) * eta), random_starts)
    K_var = variance_bound_constant(p0)
    C_upper = K_var / (2 * epsilon**2) + math.log(2 / epsilon)
    upper_rhs = (1 + epsilon) * upper.phi + C_upper
    trivial_cost = -H.num_vertices * math.log1p(-p)

    report = SandwichReport(
        instance_id=instance_id,
        p=p,
        eta=eta,
        epsilon=epsilon,
        log_prob=value,
        log_prob_method=method,
        degree_condition_holds=degree.holds,
        K=K,
        lam=lam,
        C_lower=C_lower,
        phi_lower_arg=phi_lower_arg,
        lower_rhs=lower_rhs,
        lower_applicable=applicable,
        lower_holds=cost >= lower_rhs - INEQUALITY_ATOL if applicable else None,
        lower_slack=cost - lower_rhs if applicable else None,
        lower_vacuous=lower_rhs <= 0,
        phi_upper_arg=upper.phi,
        K_var=K_var,
        C_upper=C_upper,
        upper_rhs=upper_rhs,
        upper_holds=cost <= upper_rhs + INEQUALITY_ATOL,
        upper_slack=upper_rhs - cost,
        upper_vacuous=upper_rhs >= trivial_cost,
    )

    try:
        certificate = tilted_lower_bound_certificate(
            H, p, spec, epsilon, upper.q, samples=samples, seed=seed, p0=p0
        )
        report.tilt_log_lower_bound = certificate.log_lower_bound
        report.tilt_method = certificate.method
        if certificate.method == "exact" and method == "exact":
            report.tilt_holds = certificate.log_lower_bound <= value + INEQUALITY_ATOL
    except (VacuousCertificateError, InfeasibleMeasureError) as e:
        logger.warning(f"{instance_id}: tilted certificate unavailable: {e}")
        report.tilt_error = str(e)
    return report


def ap_demo(
    k: int,
    n: int,
    p: float,
    eta_grid: Iterable[float],
    epsilon: float,
    **kwargs,
) -> APDemoReport:
    """Sandwich checks on the k-AP hypergraph of [n] for every eta, plus its degree audit."""
    H = ap_hypergraph(k, n)
    audit = ap_degree_audit(k, n)
    if not audit.holds:
        logger.warning(f"AP degree audit failed for k={k}, n={n}: {audit.deltas}")
    sandwiches = [
        sandwich_check(H, p, eta, epsilon, instance_id=f"ap{k}-n{n}", **kwargs)
        for eta in eta_grid
    ]
    return APDemoReport(k=k, n=n, p=p, epsilon=epsilon, audit=audit, sandwiches=sandwiches)


def theorem_triangles_check(
    n: int, t_grid: Optional[Iterable[float]] = None
) -> TriangleCheckReport:
    """Check log Pr(X_n <= t) <= -Phi_n(t + n^(23/8)) + 2 n^(15/8) for the triangle count.

    X_n counts triangles of G(n, 1/2); Phi_n is the absolute-mode rate on the triangle
    copy hypergraph of K_n. One exact enumeration of the law of X_n serves every t.

    Raises:
        BudgetExceededError: If n exceeds TRIANGLES_MAX_N
    """
    limit = get_settings().TRIANGLES_MAX_N
    if n > limit:
        raise BudgetExceededError(
            f"instance too large: the triangle suite is limited to n <= {limit}, got {n}"
        )
    p = 0.5
    G = copy_hypergraph(TRIANGLE, n)
    law = exact_weight_distribution(G, p)
    values = sorted(law)
    grid = list(t_grid) if t_grid is not None else list(range(math.comb(n, 3) + 1))
    shift = n ** (23 / 8)
    bonus = 2 * n ** (15 / 8)

    rows = []
    for t in grid:
        log_prob = min(0.0, float(logsumexp([law[x] for x in values if x <= t])))
        phi_shifted = solve_phi(G, p, TailSpec.absolute(t + shift)).phi
        phi_t = solve_phi(G, p, TailSpec.absolute(t)).phi
        rhs = -phi_shifted + bonus
        rows.append(
            TriangleCheckRow(
                n=n,
                t=t,
                log_prob=log_prob,
                phi_shifted=phi_shifted,
                rhs=rhs,
                holds=log_prob <= rhs + INEQUALITY_ATOL,
                slack=rhs - log_prob,
                vacuous=rhs >= 0,
                phi_t=phi_t,
                gap=-log_prob - phi_t,
            )
        )
    vacuous = sum(row.vacuous for row in rows)
    logger.info(f"Triangle suite n={n}: {len(rows)} thresholds, {vacuous} vacuous")
    return TriangleCheckReport(n=n, rows=rows)


def _row(
    instance_id: str,
    H: WeightedHypergraph,
    p: float,
    spec: TailSpec,
    config: ExperimentConfig,
) -> ReportRow:
    eta = to_relative(H, p, spec).eta
    row = ReportRow(
        instance_id=instance_id,
        p=p,
        mode=spec.mode,
        eta=eta,
        t=to_absolute(H, p, spec).t,
        epsilon=config.epsilon,
        num_vertices=H.num_vertices,
        num_edges=H.num_edges,
    )
    try:
        solution = solve_phi(H, p, spec, config.random_starts)
        row.phi = solution.phi
        row.theta = solution.theta
        row.kkt_residual = solution.kkt_residual
        row.status = solution.status
        row.solution = solution.to_solution_json()

        _, row.phi_symmetric = solve_phi_symmetric(H, p, spec)
        row.symmetric_ok = row.phi <= row.phi_symmetric + SYMMETRIC_ATOL

        if threshold(H, p, spec) <= 0:
            try:
                row.phi_zero = phi_zero(H, p)
                row.phi_zero_ok = abs(row.phi - row.phi_zero) <= PHI_ZERO_ATOL
            except BudgetExceededError as e:
                logger.info(f"{instance_id}: skipping phi_zero: {e}")
        if 0 <= eta < 1:
            row.lower_certificate = phi_lower_certificate(H, p, 1 - eta)
            row.certificate_ok = row.lower_certificate <= row.phi + CERTIFICATE_ATOL

        exact = None
        if config.oracle in ("exact", "both"):
            exact = exact_lower_tail(H, p, spec)
            row.exact_log_prob = exact.log_prob
        if config.oracle in ("mc", "both"):
            estimate = mc_lower_tail(H, p, spec, config.samples, config.seed)
            row.mc_log_prob = estimate.log_prob
            row.mc_ci_low = estimate.ci_low
            row.mc_ci_high = estimate.ci_high
            if exact is not None:
                row.exact_in_mc_ci = estimate.ci_low <= exact.log_prob <= estimate.ci_high

        log_prob = (
            (row.exact_log_prob, "exact")
            if exact is not None
            else (row.mc_log_prob, "mc")
        )
        sandwich = sandwich_check(
            H,
            p,
            eta,
            config.epsilon,
            instance_id=instance_id,
            p0=config.upper_density,
            samples=config.samples,
            seed=config.seed,
            random_starts=config.random_starts,
            log_prob=log_prob,
        )
        row.tilt_log_lower_bound = sandwich.tilt_log_lower_bound
        row.tilt_ok = sandwich.tilt_holds
        row.lower_rhs = sandwich.lower_rhs
        row.lower_slack = sandwich.lower_slack
        row.lower_vacuous = sandwich.lower_vacuous
        row.lower_ok = sandwich.lower_holds
        row.upper_rhs = sandwich.upper_rhs
        row.upper_slack = sandwich.upper_slack
        row.upper_vacuous = sandwich.upper_vacuous
        row.upper_ok = sandwich.upper_holds

        flags = (
            row.symmetric_ok,
            row.certificate_ok,
            row.phi_zero_ok,
            row.tilt_ok,
            row.upper_ok,
            row.lower_ok,
        )
        row.passed = all(flag is not False for flag in flags)
    except LowerTailError as e:
        logger.warning(f"{instance_id} p={p} {spec.mode}: {type(e).__name__}: {e}")
        row.error = f"{type(e).__name__}: {e}"
        row.passed = False
    return row


def run_experiment(config: ExperimentConfig) -> List[ReportRow]:
    """One report row per (instance, p, threshold), in config order.

    Raises:
        ConfigError: If an instance cannot be built or exceeds the exact-oracle budget
    """
    settings = get_settings()
    instances = []
    for spec in config.instances:
        try:
            H = build_instance(spec)
        except (LowerTailError, OSError, ValidationError) as e:
            raise ConfigError(f"cannot build instance {spec.instance_id}: {e}") from e
        if config.oracle != "mc" and H.num_vertices > settings.EXACT_VERTEX_BUDGET:
            raise ConfigError(
                f"instance {spec.instance_id} has {H.num_vertices} vertices, beyond the "
                f"exact budget of {settings.EXACT_VERTEX_BUDGET}; use the mc oracle"
            )
        instances.append((spec.instance_id, H))

    tasks = [
        (instance_id, H, p, spec)
        for instance_id, H in instances
        for p in config.p_grid
        for spec in config.tail_specs
    ]
    logger.info(f"Running {len(tasks)} rows with {settings.WORKERS} worker(s)")
    with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
        rows = list(pool.map(lambda task: _row(*task, config), tasks))

    failed = sum(not row.passed for row in rows)
    if failed:
        logger.warning(f"{failed} of {len(rows)} rows failed")
    else:
        logger.success(f"All {len(rows)} rows passed")
    return rows


def write_report(rows: List[ReportRow], path: str, format: str = "csv") -> None:
    """Write rows as CSV with a JSON sidecar of solver solutions, or as one JSON file."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if format == "json":
        target.write_text(
            json.dumps([row.model_dump() for row in rows], indent=2) + "\n"
        )
        return

    fields = [name for name in ReportRow.model_fields if name != "solution"]
    with open(target, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump(exclude={"solution"}))

    sidecar = [
        {
            "instance_id": row.instance_id,
            "p": row.p,
            "eta": row.eta,
            "t": row.t,
            "solution": row.solution,
        }
        for row in rows
    ]
    Path(f"{target}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    logger.info(f"Wrote {len(rows)} rows to {target}")
