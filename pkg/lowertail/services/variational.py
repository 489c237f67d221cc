"""
The mean-field lower-tail rate

    Phi_p^H(eta) = min { sum_v i_p(q_v) : q in [0, 1]^V, f(q) <= eta p^r e(H) },

where f is the expected induced weight of H under the product measure q.

Stationarity of the Lagrangian gives q_v = expit(logit p - theta d_v f(q)), so the
solver bisects on the multiplier theta and solves this logistic fixed point for each
theta by damped iteration. The feasible set is not convex, so several starting
points are tried and the best feasible KKT point is kept.

Where the problem has a duality gap no theta reaches the minimum, so the starts
grown from maximal independent sets are also polished directly in q with SLSQP.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import FrozenSet, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq, minimize
from scipy.special import expit, logit

from lowertail.core.config import get_settings
from lowertail.core.exceptions import (
    BudgetExceededError,
    DomainError,
    SolverConvergenceError,
)
from lowertail.schemas.variational import TailSpec, VariationalSolution
from lowertail.services.entropy import (
    Probability,
    open_probability,
    relative_entropy_bernoulli,
    relative_entropy_bernoulli_vector,
)
from lowertail.services.hypergraph import (
    WeightedHypergraph,
    evaluate_gradient,
    evaluate_polynomial,
    as_product_measure,
    heuristic_independent_set,
    max_degree,
    maximal_independent_set,
    maximum_independent_set,
    independence_number,
    total_weight,
)

MIN_GRID_STEP = 0.005

# Bisection on theta stops once the bracket is this tight relative to its upper end
DUAL_BRACKET_RTOL = 1e-15

# A threshold this close below p^r e(H) is treated as the mean itself
TRIVIAL_RTOL = 1e-12


def threshold(H: WeightedHypergraph, p: Probability, spec: TailSpec) -> float:
    """Right-hand side of the constraint: eta p^r e(H) or t."""
    p = open_probability(p)
    if spec.mode == "absolute":
        return float(spec.t)
    return float(spec.eta) * p**H.uniformity * total_weight(H)


def to_relative(H: WeightedHypergraph, p: Probability, spec: TailSpec) -> TailSpec:
    if spec.mode == "relative":
        return spec
    p = open_probability(p)
    return TailSpec.relative(spec.t / (p**H.uniformity * total_weight(H)))


def to_absolute(H: WeightedHypergraph, p: Probability, spec: TailSpec) -> TailSpec:
    if spec.mode == "absolute":
        return spec
    return TailSpec.absolute(threshold(H, p, spec))


def _objective(q: np.ndarray, p: float) -> float:
    return max(0.0, float(relative_entropy_bernoulli_vector(q, p).sum()))


def _require_edges(H: WeightedHypergraph) -> None:
    if H.num_edges == 0:
        raise DomainError("the variational problem needs a nonempty hypergraph")


def kkt_residual(
    H: WeightedHypergraph, p: Probability, spec: TailSpec, sol: VariationalSolution
) -> float:
    """Stationarity defect on the interior coordinates plus |theta (f(q) - threshold)|.

    Coordinates pinned at zero are exempt from stationarity.
    """
    p = open_probability(p)
    q = as_product_measure(H, sol.q)
    return _residual(H, p, threshold(H, p, spec), q, sol.theta)


def _residual(
    H: WeightedHypergraph, p: float, c: float, q: np.ndarray, theta: float
) -> float:
    target = expit(logit(p) - theta * evaluate_gradient(H, q))
    interior = q > get_settings().PIN_THRESHOLD
    stationarity = float(np.abs(q - target)[interior].max(initial=0.0))
    return stationarity + abs(theta * (evaluate_polynomial(H, q) - c))


@dataclass
class _Iterate:
    q: np.ndarray
    converged: bool


def _fixed_point(
    H: WeightedHypergraph, p: float, theta: float, start: np.ndarray
) -> _Iterate:
    """Damped iteration of q <- expit(logit p - theta grad f(q)) from start.

    The damping factor halves whenever the step grows, down to MIN_DAMPING.
    """
    settings = get_settings()
    base = logit(p)
    q = start.copy()
    omega = settings.DAMPING
    previous = math.inf
    for _ in range(settings.MAX_INNER_ITERATIONS):
        target = expit(base - theta * evaluate_gradient(H, q))
        step = float(np.abs(target - q).max(initial=0.0))
        if step < settings.FIXED_POINT_TOL:
            return _Iterate(q, True)
        if step > previous:
            omega = max(omega / 2, settings.MIN_DAMPING)
        previous = step
        q = (1 - omega) * q + omega * target
        q[q < settings.PIN_THRESHOLD] = 0.0
    return _Iterate(q, False)


@dataclass
class _StartResult:
    index: int
    q: np.ndarray
    theta: float
    phi: float
    feasible: bool
    converged: bool


def _solve_from(
    H: WeightedHypergraph, p: float, c: float, start: np.ndarray, index: int
) -> _StartResult:
    """Outer bisection on theta from one starting point, keeping the upper end feasible."""
    settings = get_settings()

    # Once the growth loop exits, f(upper.q) <= c holds throughout
    lo, hi = 0.0, 1.0
    upper = _fixed_point(H, p, hi, start)
    growth = 0
    while evaluate_polynomial(H, upper.q) > c:
        if growth >= settings.MAX_DUAL_GROWTH:
            logger.debug(f"Start {index}: theta_max did not reach feasibility")
            return _StartResult(
                index, upper.q, hi, _objective(upper.q, p), False, False
            )
        lo, hi = hi, 2 * hi
        upper = _fixed_point(H, p, hi, upper.q)
        growth += 1

    for _ in range(settings.MAX_DUAL_ITERATIONS):
        if hi - lo <= DUAL_BRACKET_RTOL * hi:
            break
        if c - evaluate_polynomial(H, upper.q) <= DUAL_BRACKET_RTOL * c:
            break
        mid = 0.5 * (lo + hi)
        trial = _fixed_point(H, p, mid, upper.q)
        if evaluate_polynomial(H, trial.q) <= c and trial.converged:
            hi, upper = mid, trial
        else:
            lo = mid

    return _StartResult(
        index, upper.q, hi, _objective(upper.q, p), True, upper.converged
    )


def _scale_into(H: WeightedHypergraph, q: np.ndarray, c: float) -> np.ndarray:
    """Shrink q onto f <= c; f is homogeneous of degree r, so the factor is explicit."""
    value = evaluate_polynomial(H, q)
    if value <= c:
        return q
    q = q * (c / value) ** (1 / H.uniformity)
    while evaluate_polynomial(H, q) > c:
        q = np.nextafter(q, 0.0)
    return q


def _independent_supports(H: WeightedHypergraph) -> List[FrozenSet[int]]:
    supports: List[FrozenSet[int]] = []
    for seed in range(min(H.num_vertices, get_settings().BOUNDARY_STARTS)):
        support = maximal_independent_set(H, seed)
        if support not in supports:
            supports.append(support)
    return supports


def _boundary_start(
    H: WeightedHypergraph, p: float, c: float, support: FrozenSet[int]
) -> np.ndarray:
    """p on an independent set and s p elsewhere, with s in (0, 1) solving f = c."""
    inside = np.zeros(H.num_vertices, dtype=bool)
    inside[sorted(support)] = True

    def point(s: float) -> np.ndarray:
        return np.where(inside, p, s * p)

    # No edge lies inside the support, so f vanishes at s = 0
    s = brentq(lambda s: evaluate_polynomial(H, point(s)) - c, 0.0, 1.0, xtol=1e-15)
    return _scale_into(H, point(s), c)


def _starts(
    H: WeightedHypergraph, p: float, c: float, random_starts: int
) -> List[np.ndarray]:
    """Constant starts, starts grown from maximal independent sets, then seeded random ones."""
    v = H.num_vertices
    eta = c / (p**H.uniformity * total_weight(H))
    starts = [np.full(v, p), np.full(v, p * eta ** (1 / H.uniformity))]
    starts.extend(_boundary_start(H, p, c, S) for S in _independent_supports(H))
    rng = np.random.default_rng(get_settings().MULTISTART_SEED)
    starts.extend(rng.uniform(0.0, p, size=v) for _ in range(random_starts))
    return starts


def _multiplier(H: WeightedHypergraph, p: float, q: np.ndarray) -> float:
    """Least-squares theta for logit p - logit q_v = theta d_v f(q) on interior coordinates."""
    grad = evaluate_gradient(H, q)
    interior = (q > get_settings().PIN_THRESHOLD) & (grad > 0)
    if not interior.any():
        return 0.0
    gap = logit(p) - logit(q[interior])
    g = grad[interior]
    return max(0.0, float(g @ gap / (g @ g)))


def _polish(
    H: WeightedHypergraph, p: float, c: float, start: np.ndarray, index: int
) -> _StartResult:
    """Local minimum of sum_v i_p(q_v) on [0, p]^V with f(q) <= c, by SLSQP in q."""
    settings = get_settings()
    floor = settings.PIN_THRESHOLD
    shift = logit(p)

    def objective(q: np.ndarray) -> float:
        return _objective(np.clip(q, 0.0, p), p)

    def gradient(q: np.ndarray) -> np.ndarray:
        return logit(np.clip(q, floor, p)) - shift

    constraint = {
        "type": "ineq",
        "fun": lambda q: c - evaluate_polynomial(H, np.clip(q, 0.0, p)),
        "jac": lambda q: -evaluate_gradient(H, np.clip(q, 0.0, p)),
    }
    result = minimize(
        objective,
        start,
        jac=gradient,
        method="SLSQP",
        bounds=[(0.0, p)] * H.num_vertices,
        constraints=[constraint],
        options={"ftol": settings.POLISH_FTOL, "maxiter": settings.POLISH_MAX_ITERATIONS},
    )
    q = np.clip(result.x, 0.0, p)
    q[q < floor] = 0.0
    q = _scale_into(H, q, c)
    if not result.success:
        logger.debug(f"Polish from start {index} stopped early: {result.message}")
    return _StartResult(
        index, q, _multiplier(H, p, q), _objective(q, p), True, bool(result.success)
    )


def _solution(
    H: WeightedHypergraph,
    p: float,
    c: float,
    q: np.ndarray,
    theta: float,
    start_index: Optional[int],
    converged: bool,
) -> VariationalSolution:
    status = "boundary_zero" if (q == 0).any() else "optimal"
    return VariationalSolution(
        q=q.tolist(),
        theta=theta,
        phi=_objective(q, p),
        constraint_value=evaluate_polynomial(H, q),
        threshold=c,
        kkt_residual=_residual(H, p, c, q, theta),
        status=status,
        start_index=start_index,
        converged=converged,
    )


def _trivial(H: WeightedHypergraph, p: float, c: float) -> VariationalSolution:
    q = np.full(H.num_vertices, p)
    return VariationalSolution(
        q=q.tolist(),
        theta=0.0,
        phi=0.0,
        constraint_value=evaluate_polynomial(H, q),
        threshold=c,
        kkt_residual=0.0,
        status="infeasibility_trivial",
        start_index=None,
    )


def _zero_threshold(H: WeightedHypergraph, p: float) -> VariationalSolution:
    """q = p on the largest independent set found and 0 on the vertex cover around it.

    Past INDEPENDENCE_VERTEX_BUDGET the set comes from local search and phi is an
    upper bound on Phi(0).
    """
    try:
        independent = maximum_independent_set(H)
    except BudgetExceededError as e:
        logger.warning(f"Zero threshold falls back to local search, phi is an upper bound: {e}")
        independent = heuristic_independent_set(H)
    q = np.zeros(H.num_vertices)
    q[sorted(independent)] = p
    return _solution(H, p, 0.0, q, 0.0, None, True)


def _symmetric_candidate(
    H: WeightedHypergraph, p: float, c: float
) -> VariationalSolution:
    """The constant point q 1 on the constraint, with the least-squares multiplier."""
    scalar, _ = _symmetric_point(H, p, c)
    q = np.full(H.num_vertices, scalar)
    theta = 0.0
    if 0 < scalar < p:
        grad = evaluate_gradient(H, q)
        active = grad > 0
        theta = float(((logit(p) - logit(scalar)) / grad[active]).mean())
    return _solution(H, p, c, q, theta, None, True)


def solve_phi(
    H: WeightedHypergraph,
    p: Probability,
    spec: TailSpec,
    random_starts: Optional[int] = None,
) -> VariationalSolution:
    """Compute Phi_p^H for a tail specification.

    Args:
        H: Nonempty weighted hypergraph
        p: Density in (0, 1)
        spec: Relative (eta) or absolute (t) threshold
        random_starts: Number of seeded random starts; defaults to MULTISTART_RANDOM

    Returns:
        The best feasible point found. A threshold at or above p^r e(H) (eta >= 1 in
        relative mode) gives q = p with status "infeasibility_trivial"; a zero threshold
        is solved on an independent set, exactly within INDEPENDENCE_VERTEX_BUDGET.

    Raises:
        DomainError: If p is not in (0, 1) or H has no edges
        SolverConvergenceError: If no start converged; the best iterate is attached
    """
    p = open_probability(p)
    _require_edges(H)
    settings = get_settings()
    c = threshold(H, p, spec)

    mean = evaluate_polynomial(H, np.full(H.num_vertices, p))
    if (spec.mode == "relative" and spec.eta >= 1) or c >= mean * (1 - TRIVIAL_RTOL):
        return _trivial(H, p, c)
    if c <= 0:
        return _zero_threshold(H, p)

    count = settings.MULTISTART_RANDOM if random_starts is None else random_starts
    starts = _starts(H, p, c, count)
    structured = starts[: len(starts) - count]
    logger.debug(
        f"Solving Phi on v={H.num_vertices}, e={H.num_edges}, threshold={c:g} "
        f"with {len(starts)} starts"
    )
    with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
        results = list(
            pool.map(lambda item: _solve_from(H, p, c, item[1], item[0]), enumerate(starts))
        )
        polished = list(
            pool.map(lambda item: _polish(H, p, c, item[1], item[0]), enumerate(structured))
        )

    candidates = [r for r in results if r.feasible]
    converged = [r for r in candidates if r.converged]
    eligible = converged or candidates or results
    best = min(eligible, key=lambda r: (r.phi, r.index))
    solution = _solution(H, p, c, best.q, best.theta, best.index, best.converged)

    if not converged:
        raise SolverConvergenceError(
            f"no start converged; best phi={solution.phi:.6g}, "
            f"residual={solution.kkt_residual:.3g}",
            best=solution,
        )

    symmetric = _symmetric_candidate(H, p, c)
    if symmetric.phi < solution.phi:
        logger.warning(
            f"Symmetric point beats every start: {symmetric.phi:.10g} < {solution.phi:.10g}"
        )
        solution = symmetric

    refined = min(polished, key=lambda r: (r.phi, r.index))
    if refined.phi < solution.phi - settings.PRIMAL_IMPROVEMENT_RTOL * max(1.0, solution.phi):
        logger.info(
            f"Polished start {refined.index} beats the dual path: "
            f"{refined.phi:.10g} < {solution.phi:.10g}"
        )
        solution = _solution(
            H, p, c, refined.q, refined.theta, refined.index, refined.converged
        )

    logger.debug(
        f"Phi={solution.phi:.10g} from start {solution.start_index}, "
        f"theta={solution.theta:.6g}, residual={solution.kkt_residual:.3g}"
    )
    return solution


def _symmetric_point(H: WeightedHypergraph, p: float, c: float) -> Tuple[float, float]:
    e = total_weight(H)
    r = H.uniformity
    if c >= p**r * e:
        return p, 0.0
    if c <= 0:
        scalar = 0.0
    else:
        # f(q 1) = q^r e(H), so the root is explicit; step down past rounding
        scalar = min(p, (c / e) ** (1 / r))
        while scalar > 0 and scalar**r * e > c:
            scalar = float(np.nextafter(scalar, 0.0))
    return scalar, H.num_vertices * relative_entropy_bernoulli(scalar, p)


def solve_phi_symmetric(
    H: WeightedHypergraph, p: Probability, spec: TailSpec
) -> Tuple[float, float]:
    """Best constant product measure q 1 with f(q 1) <= threshold.

    Returns:
        (q, v(H) i_p(q)), an upper bound on Phi
    """
    p = open_probability(p)
    _require_edges(H)
    return _symmetric_point(H, p, threshold(H, p, spec))


def phi_grid_oracle(
    H: WeightedHypergraph, p: Probability, spec: TailSpec, grid_step: float = 0.01
) -> float:
    """Brute-force minimum of sum_v i_p(q_v) over feasible points of a grid on [0, p]^V.

    The grid is {0, step, 2 step, ...} below p, plus p itself. The last three
    coordinates are evaluated as one broadcast block per setting of the others.

    Raises:
        BudgetExceededError: If v(H) or the number of grid points exceeds the budget
        DomainError: If grid_step < 0.005
    """
    p = open_probability(p)
    _require_edges(H)
    settings = get_settings()
    if grid_step < MIN_GRID_STEP:
        raise DomainError(f"grid_step must be at least {MIN_GRID_STEP}, got {grid_step}")
    v = H.num_vertices
    if v > settings.GRID_VERTEX_BUDGET:
        raise BudgetExceededError(
            f"instance too large: the grid oracle is limited to "
            f"{settings.GRID_VERTEX_BUDGET} vertices, got {v}"
        )
    grid = np.append(np.arange(0.0, p, grid_step), p)
    if len(grid) ** v > settings.GRID_POINT_BUDGET:
        raise BudgetExceededError(
            f"instance too large: {len(grid)}^{v} grid points exceed the budget"
        )
    c = threshold(H, p, spec)
    limit = c * (1 + settings.FEASIBILITY_RTOL)
    cost = relative_entropy_bernoulli_vector(grid, p)

    block = min(v, 3)
    outer = v - block
    axes = list(np.meshgrid(*([grid] * block), indexing="ij"))
    block_cost = sum(np.meshgrid(*([cost] * block), indexing="ij"))

    best = math.inf
    for prefix in product(range(len(grid)), repeat=outer):
        coords = [grid[i] for i in prefix] + axes
        f = np.zeros(axes[0].shape)
        for edge, weight in zip(H.edges, H.weights):
            term = np.full(axes[0].shape, weight)
            for u in edge:
                term = term * coords[u]
            f += term
        total = block_cost + sum(cost[i] for i in prefix)
        feasible = f <= limit
        if feasible.any():
            best = min(best, float(total[feasible].min()))
    return best


def phi_zero(H: WeightedHypergraph, p: Probability) -> float:
    """Phi_p^H(0) = (v(H) - alpha(H)) log(1 / (1 - p)), with alpha found exactly."""
    p = open_probability(p)
    return (H.num_vertices - independence_number(H)) * -math.log1p(-p)


def phi_lower_certificate(
    H: WeightedHypergraph, p: Probability, epsilon: float
) -> float:
    """epsilon^2 / (2 K^2) v(H) p with K = v(H) Delta_1(H) / e(H), a lower bound on Phi(1 - epsilon)."""
    p = open_probability(p)
    _require_edges(H)
    if not 0 < epsilon <= 1:
        raise DomainError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    K = H.num_vertices * max_degree(H, 1) / total_weight(H)
    return epsilon**2 / (2 * K**2) * H.num_vertices * p
