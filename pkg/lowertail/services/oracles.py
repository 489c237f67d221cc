"""
Ground-truth and certified estimates of lower-tail probabilities Pr(e(H[R]) <= threshold)
for R ~ Ber(p)^V.

Exact enumeration splits the vertex bits into a low block, handled as one numpy array,
and high bits walked in Gray-code order so each step toggles a single vertex and only
its incident edges change state.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import stats
from scipy.special import logsumexp

from lowertail.core.config import get_settings
from lowertail.core.exceptions import (
    BudgetExceededError,
    DomainError,
    InfeasibleMeasureError,
    VacuousCertificateError,
    ZeroProbabilityError,
)
from lowertail.schemas.estimates import TailEstimate, TiltCertificate
from lowertail.schemas.hypergraphs import PatternHypergraph
from lowertail.schemas.variational import ProductMeasure, TailSpec
from lowertail.services.builders import expected_copy_count
from lowertail.services.entropy import (
    Probability,
    open_probability,
    relative_entropy_bernoulli_vector,
)
from lowertail.services.hypergraph import (
    VertexSet,
    WeightedHypergraph,
    as_product_measure,
    evaluate_polynomial,
    total_weight,
    vertex_mask,
)
from lowertail.services.variational import threshold

# Edge weights within this absolute slack of the threshold count as in the tail
TAIL_ATOL = 1e-9

# Cap on low-block indicator entries (2^bits * edges)
BLOCK_ENTRY_BUDGET = 1 << 24

DEFAULT_CONFIDENCE = 0.95
MIN_SAMPLES = 100
DEFAULT_CERTIFICATE_SAMPLES = 100_000


def _in_tail(weights: np.ndarray, c: float) -> np.ndarray:
    return weights <= c + TAIL_ATOL * max(1.0, abs(c))


def _popcounts(bits: int) -> np.ndarray:
    sizes = np.zeros(1, dtype=np.int64)
    for _ in range(bits):
        sizes = np.concatenate([sizes, sizes + 1])
    return sizes


def _gray_flips(bits: int) -> Iterator[int]:
    """Index of the bit toggled at each step of the reflected Gray code on `bits` bits."""
    for step in range(1, 1 << bits):
        yield (step & -step).bit_length() - 1


class _SubsetEnumerator:
    """Yields (high_state, e(H[R]) for every low completion) over all R subset V.

    The state R has bits high_state << low_bits | low_state.
    """

    def __init__(self, H: WeightedHypergraph, block_bits: int):
        v = H.num_vertices
        edges = max(H.num_edges, 1)
        affordable = max(1, BLOCK_ENTRY_BUDGET.bit_length() - 1 - math.ceil(math.log2(edges)))
        self.low_bits = min(v, block_bits, affordable)
        self.high_bits = v - self.low_bits
        self.low_sizes = _popcounts(self.low_bits)
        self._H = H

        low_states = np.arange(1 << self.low_bits, dtype=np.int64)
        low_part = (1 << self.low_bits) - 1
        low_masks = np.array([m & low_part for m in H.masks], dtype=np.int64)
        self._contained = (
            (low_states[:, None] & low_masks[None, :]) == low_masks[None, :]
        ).astype(float)
        self._high_masks = [m >> self.low_bits for m in H.masks]

    def __iter__(self) -> Iterator[Tuple[int, np.ndarray]]:
        H = self._H
        state = 0
        active = np.where([hm == 0 for hm in self._high_masks], H.weights, 0.0)
        yield state, self._contained @ active
        for bit in _gray_flips(self.high_bits):
            state ^= 1 << bit
            for index in H.incident_edges(self.low_bits + bit):
                hm = self._high_masks[index]
                active[index] = H.weights[index] if hm & state == hm else 0.0
            yield state, self._contained @ active


def _check_budget(H: WeightedHypergraph, budget: int, what: str) -> None:
    if H.num_vertices > budget:
        raise BudgetExceededError(
            f"instance too large: {what} is limited to {budget} vertices, "
            f"got {H.num_vertices}"
        )


def _log_binomial_weights(v: int, p: float) -> np.ndarray:
    k = np.arange(v + 1)
    return k * math.log(p) + (v - k) * math.log1p(-p)


def exact_lower_tail(H: WeightedHypergraph, p: Probability, spec: TailSpec) -> TailEstimate:
    """log Pr(e(H[R]) <= threshold) by enumerating all 2^v(H) vertex subsets.

    Raises:
        BudgetExceededError: If v(H) exceeds EXACT_VERTEX_BUDGET
    """
    p = open_probability(p)
    settings = get_settings()
    _check_budget(H, settings.EXACT_VERTEX_BUDGET, "exact enumeration")
    c = threshold(H, p, spec)
    v = H.num_vertices

    enumerator = _SubsetEnumerator(H, settings.ENUMERATION_BLOCK_BITS)
    counts = np.zeros(v + 1, dtype=np.int64)
    for state, weights in enumerator:
        sizes = enumerator.low_sizes[_in_tail(weights, c)] + state.bit_count()
        counts += np.bincount(sizes, minlength=v + 1)

    present = counts > 0
    log_prob = logsumexp(
        np.log(counts[present]) + _log_binomial_weights(v, p)[present]
    )
    logger.debug(
        f"Exact tail on v={v}: {int(counts.sum())} of {1 << v} subsets in the tail"
    )
    return TailEstimate(log_prob=min(0.0, float(log_prob)), method="exact")


def exact_weight_distribution(H: WeightedHypergraph, p: Probability) -> Dict[int, float]:
    """The law of X = e(H[R]) as {value: log Pr(X = value)} for integer-weight H.

    Raises:
        DomainError: If some edge weight is not an integer
        BudgetExceededError: If v(H) exceeds EXACT_VERTEX_BUDGET
    """
    p = open_probability(p)
    settings = get_settings()
    if not H.has_integer_weights():
        raise DomainError("the weight distribution needs integer edge weights")
    _check_budget(H, settings.EXACT_VERTEX_BUDGET, "exact enumeration")
    v = H.num_vertices
    top = int(round(total_weight(H)))

    enumerator = _SubsetEnumerator(H, settings.ENUMERATION_BLOCK_BITS)
    counts = np.zeros((v + 1) * (top + 1), dtype=np.int64)
    for state, weights in enumerator:
        sizes = enumerator.low_sizes + state.bit_count()
        index = sizes * (top + 1) + np.rint(weights).astype(np.int64)
        counts += np.bincount(index, minlength=counts.size)
    table = counts.reshape(v + 1, top + 1)

    log_weights = _log_binomial_weights(v, p)
    law: Dict[int, float] = {}
    for value in range(top + 1):
        column = table[:, value]
        present = column > 0
        if present.any():
            law[value] = float(logsumexp(np.log(column[present]) + log_weights[present]))
    return law


def state_table(H: WeightedHypergraph) -> Tuple[np.ndarray, np.ndarray]:
    """(|R|, e(H[R])) for every R subset V, indexed by the bitmask of R.

    Raises:
        BudgetExceededError: If v(H) exceeds CONDITIONAL_VERTEX_BUDGET
    """
    settings = get_settings()
    _check_budget(H, settings.CONDITIONAL_VERTEX_BUDGET, "full state enumeration")
    enumerator = _SubsetEnumerator(H, settings.ENUMERATION_BLOCK_BITS)
    width = 1 << enumerator.low_bits
    sizes = _popcounts(H.num_vertices)
    weights = np.empty(1 << H.num_vertices)
    for state, block in enumerator:
        weights[state * width : (state + 1) * width] = block
    return sizes, weights


def _state_sums(ones: np.ndarray, zeros: np.ndarray) -> np.ndarray:
    """sum_v (ones_v if y_v = 1 else zeros_v) for every y in {0, 1}^V, vertex v as bit v."""
    sums = np.zeros(1)
    for one, zero in zip(ones, zeros):
        sums = np.concatenate([sums + zero, sums + one])
    return sums


def _conditioned_law(
    H: WeightedHypergraph, p: float, spec: TailSpec
) -> Tuple[np.ndarray, float]:
    sizes, weights = state_table(H)
    v = H.num_vertices
    law = np.exp(sizes * math.log(p) + (v - sizes) * math.log1p(-p))
    law[~_in_tail(weights, threshold(H, p, spec))] = 0.0
    mass = float(law.sum())
    return law / mass, mass


def _assignment_mask(
    H: WeightedHypergraph, W: Sequence[int], y_W: Union[Mapping[int, int], Sequence[int]]
) -> int:
    if isinstance(y_W, Mapping):
        if set(y_W) != set(W):
            raise DomainError("the assignment must give a value for exactly the vertices of W")
        values = [y_W[w] for w in W]
    else:
        values = list(y_W)
        if len(values) != len(W):
            raise DomainError("the assignment must give one value per vertex of W")
    if any(value not in (0, 1) for value in values):
        raise DomainError("assignments take values in {0, 1}")
    return vertex_mask(H, [w for w, value in zip(W, values) if value])


def conditional_moment(
    H: WeightedHypergraph,
    p: Probability,
    spec: TailSpec,
    W: VertexSet,
    y_W: Union[Mapping[int, int], Sequence[int]],
    A: VertexSet,
) -> float:
    """E[prod_{a in A} Y_a | tail event, Y_W = y_W], by exact enumeration.

    Args:
        W: Conditioning vertices
        y_W: Values on W, as a mapping or as a sequence aligned with sorted(W)
        A: Vertices outside W

    Raises:
        ZeroProbabilityError: If the conditioning event has probability zero
        DomainError: If A meets W
    """
    p = open_probability(p)
    W = sorted(set(W))
    A = set(A)
    if A & set(W):
        raise DomainError("A must be disjoint from W")
    w_mask = vertex_mask(H, W)
    y_mask = _assignment_mask(H, W, y_W)
    a_mask = vertex_mask(H, A)

    law, _ = _conditioned_law(H, p, spec)
    states = np.arange(law.size, dtype=np.int64)
    matching = (states & w_mask) == y_mask
    denominator = float(law[matching].sum())
    if denominator <= 0:
        raise ZeroProbabilityError(f"the tail event has no mass on Y_W = {y_W}")
    numerator = float(law[matching & ((states & a_mask) == a_mask)].sum())
    return numerator / denominator


def conditional_divergence_profile(
    H: WeightedHypergraph, p: Probability, spec: TailSpec, W: VertexSet
) -> float:
    """H(W) = sum over v outside W of I_p(Y_v | Y_W) under the tail-conditioned law."""
    p = open_probability(p)
    W = sorted(set(W))
    w_mask = vertex_mask(H, W)
    law, _ = _conditioned_law(H, p, spec)
    states = np.arange(law.size, dtype=np.int64)
    _, groups = np.unique(states & w_mask, return_inverse=True)
    group_mass = np.bincount(groups, weights=law)
    present = group_mass > 0

    total = 0.0
    for v in range(H.num_vertices):
        if (w_mask >> v) & 1:
            continue
        ones = np.bincount(groups, weights=law * ((states >> v) & 1))
        means = np.clip(ones[present] / group_mass[present], 0.0, 1.0)
        total += float(group_mass[present] @ relative_entropy_bernoulli_vector(means, p))
    return total


def wilson_interval(
    successes: int, trials: int, confidence: float = DEFAULT_CONFIDENCE
) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0 or not 0 <= successes <= trials:
        raise DomainError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    z = stats.norm.ppf(1 - (1 - confidence) / 2)
    phat = successes / trials
    denominator = 1 + z**2 / trials
    center = (phat + z**2 / (2 * trials)) / denominator
    half = z * math.sqrt(phat * (1 - phat) / trials + z**2 / (4 * trials**2)) / denominator
    return max(0.0, center - half), min(1.0, center + half)


def clopper_pearson_lower(successes: int, trials: int, alpha: float) -> float:
    """One-sided exact lower confidence bound of level 1 - alpha for a binomial proportion."""
    if trials <= 0 or not 0 <= successes <= trials:
        raise DomainError(f"need 0 <= successes <= trials, got {successes}/{trials}")
    if successes == 0:
        return 0.0
    return float(stats.beta.ppf(alpha, successes, trials - successes + 1))


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,)))
    )


def _sample_counts(
    H: WeightedHypergraph,
    q: np.ndarray,
    samples: int,
    seed: int,
    hit: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> int:
    """Number of samples Y ~ Ber(q)^V with hit(Y, e(H[Y])) true, drawn in seeded blocks."""
    settings = get_settings()
    size = settings.MC_BLOCK_SIZE
    blocks = [(i, min(size, samples - i * size)) for i in range(-(-samples // size))]

    def run(block: Tuple[int, int]) -> int:
        index, count = block
        Y = _block_rng(seed, index).random((count, H.num_vertices)) < q
        if H.num_edges:
            weights = Y[:, H.edge_matrix].all(axis=2).astype(float) @ H.weights
        else:
            weights = np.zeros(count)
        return int(hit(Y, weights).sum())

    with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
        return sum(pool.map(run, blocks))


def mc_lower_tail(
    H: WeightedHypergraph,
    p: Probability,
    spec: TailSpec,
    samples: int,
    seed: int = 0,
) -> TailEstimate:
    """Monte Carlo frequency of the tail event with a Wilson 95% interval on the log scale.

    A zero frequency gives log_prob = -inf and the rule-of-three upper end log(3/samples).
    """
    p = open_probability(p)
    if samples < MIN_SAMPLES:
        raise DomainError(f"at least {MIN_SAMPLES} samples are required, got {samples}")
    c = threshold(H, p, spec)
    hits = _sample_counts(
        H,
        np.full(H.num_vertices, p),
        samples,
        seed,
        lambda Y, weights: _in_tail(weights, c),
    )
    low, high = wilson_interval(hits, samples)
    if hits == 0:
        low, high = 0.0, 3 / samples
    logger.debug(f"MC tail: {hits}/{samples} hits with seed {seed}")
    return TailEstimate(
        log_prob=_log(hits / samples),
        method="mc",
        ci_low=_log(low),
        ci_high=min(0.0, _log(high)),
        samples=samples,
        seed=seed,
    )


def importance_weight(
    q: Union[ProductMeasure, Sequence[float]], p: Probability, y: VertexSet
) -> float:
    """J(y) = sum_{y_v = 1} log(q_v/p) + sum_{y_v = 0} log((1 - q_v)/(1 - p)).

    Equals log(Pr(Y' = y) / Pr(Y = y)); -inf when y hits a coordinate with q_v = 0.
    """
    p = open_probability(p)
    values = np.asarray(q.q if isinstance(q, ProductMeasure) else q, dtype=float)
    if (values >= 1).any() or (values < 0).any():
        raise DomainError("importance weights need 0 <= q_v < 1")
    chosen = np.zeros(values.size, dtype=bool)
    for v in y:
        if v < 0 or v >= values.size:
            raise DomainError(f"vertex {v} is outside 0..{values.size - 1}")
        chosen[v] = True
    return float(_log_ratios(values, p, chosen))


def _log_ratios(q: np.ndarray, p: float, chosen: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        ones = np.log(q / p)
    zeros = np.log1p(-q) - math.log1p(-p)
    return np.where(chosen, ones, zeros).sum(axis=-1)


def variance_bound_constant(p0: float) -> float:
    """K(p0) = max{2 ((2 - p0)/(1 - p0))^2, 8 (8/e^2 + log^2(1/(1 - p0)))}.

    For p <= p0 and q in [0, p], the log-likelihood ratio X of Ber(q) against Ber(p)
    has Var(X) <= K(p0) i_p(q).
    """
    if not 0 < p0 < 1:
        raise DomainError(f"p0 must lie in (0, 1), got {p0!r}")
    first = 2 * ((2 - p0) / (1 - p0)) ** 2
    second = 8 * (8 / math.e**2 + math.log1p(-p0) ** 2)
    return max(first, second)


def bernoulli_log_ratio_variance(q, p: float):
    """Var(X) = q (1 - q) i_p'(q)^2 for X the log-likelihood ratio of Ber(q) against Ber(p).

    Accepts scalars or arrays; the variance vanishes at q in {0, 1}.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    interior = (q > 0) & (q < 1)
    safe = np.where(interior, q, 0.5)
    derivative = np.log(safe / p) - np.log((1 - safe) / (1 - p))
    variance = np.where(interior, safe * (1 - safe) * derivative**2, 0.0)
    return float(variance) if variance.ndim == 0 else variance


def tilted_lower_bound_certificate(
    H: WeightedHypergraph,
    p: Probability,
    spec: TailSpec,
    epsilon: float,
    q_star: Union[ProductMeasure, Sequence[float]],
    samples: Optional[int] = None,
    seed: int = 0,
    p0: Optional[float] = None,
    confidence: float = DEFAULT_CONFIDENCE,
) -> TiltCertificate:
    """Lower bound on log Pr(e(H[R]) <= threshold) by tilting Ber(p)^V towards q*.

    With Y' ~ Ber(q*)^V, Y1 the tail event and Y2 = {J <= (1 + eps) Phi_hat + C'},

        Pr(tail) >= Pr(Y' in Y1 and Y2) exp(-(1 + eps) Phi_hat - C').

    The probability is computed exactly for v(H) <= CONDITIONAL_VERTEX_BUDGET, and
    otherwise replaced by a one-sided Clopper-Pearson bound from `samples` draws.

    Args:
        q_star: Product measure with f(q*) <= (1 - eps) threshold
        p0: Density used for the variance constant; defaults to p

    Raises:
        InfeasibleMeasureError: If q* violates the (1 - eps) constraint
        VacuousCertificateError: If Pr(Y' in Y1 and Y2) is zero
    """
    p = open_probability(p)
    settings = get_settings()
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    q = as_product_measure(H, q_star.q if isinstance(q_star, ProductMeasure) else q_star)
    if (q >= 1).any():
        raise DomainError("the tilted measure needs q_v < 1")
    p0 = p if p0 is None else p0
    if p0 < p:
        raise DomainError(f"p0 must be at least p, got p0={p0}, p={p}")

    c = threshold(H, p, spec)
    f_star = evaluate_polynomial(H, q)
    if f_star > (1 - epsilon) * c * (1 + settings.FEASIBILITY_RTOL):
        raise InfeasibleMeasureError(
            f"f(q*) = {f_star:.10g} exceeds (1 - eps) threshold = {(1 - epsilon) * c:.10g}"
        )

    K_var = variance_bound_constant(p0)
    C_prime = K_var / (2 * epsilon**2)
    C = C_prime + math.log(2 / epsilon)
    phi_hat = float(relative_entropy_bernoulli_vector(q, p).sum())
    y2_threshold = (1 + epsilon) * phi_hat + C_prime

    if H.num_vertices <= settings.CONDITIONAL_VERTEX_BUDGET:
        _, weights = state_table(H)
        with np.errstate(divide="ignore"):
            law = np.exp(_state_sums(np.log(q), np.log1p(-q)))
            ratios = _state_sums(np.log(q / p), np.log1p(-q) - math.log1p(-p))
        in_y2 = ratios <= y2_threshold
        in_y1 = _in_tail(weights, c)
        prob_y1 = min(1.0, float(law[in_y1].sum()))
        prob_not_y2 = min(1.0, float(law[~in_y2].sum()))
        probability = min(1.0, float(law[in_y1 & in_y2].sum()))
        method, samples, seed, level = "exact", None, None, None
    else:
        samples = samples or DEFAULT_CERTIFICATE_SAMPLES
        counts = {}
        for name, hit in (
            ("both", lambda Y, w: _in_tail(w, c) & (_log_ratios(q, p, Y) <= y2_threshold)),
            ("y1", lambda Y, w: _in_tail(w, c)),
            ("not_y2", lambda Y, w: _log_ratios(q, p, Y) > y2_threshold),
        ):
            counts[name] = _sample_counts(H, q, samples, seed, hit)
        prob_y1 = counts["y1"] / samples
        prob_not_y2 = counts["not_y2"] / samples
        probability = clopper_pearson_lower(counts["both"], samples, 1 - confidence)
        method, level = "mc", confidence

    if probability <= 0:
        raise VacuousCertificateError(
            f"Pr(Y' in Y1 and Y2) is zero (method={method}); the certificate is vacuous"
        )
    log_lower_bound = min(0.0, math.log(probability) - y2_threshold)
    logger.debug(
        f"Tilt certificate: Pr(Y1 and Y2)={probability:.6g}, Phi_hat={phi_hat:.6g}, "
        f"C'={C_prime:.6g}, bound={log_lower_bound:.6g}"
    )
    return TiltCertificate(
        q_star=q.tolist(),
        epsilon=epsilon,
        K_var=K_var,
        C_prime=C_prime,
        C=C,
        phi_hat=phi_hat,
        y2_threshold=y2_threshold,
        log_lower_bound=log_lower_bound,
        empirical_Y1Y2=probability,
        prob_y1=prob_y1,
        prob_not_y2=prob_not_y2,
        method=method,
        confidence=level,
        samples=samples,
        seed=seed,
    )


def harris_zero_bound(
    H: PatternHypergraph, n: int, p: Probability
) -> Tuple[float, List[List[int]]]:
    """Harris lower bound on log Pr(no copy of H) in the p-random s-uniform hypergraph on [n].

    Maximizes (number of copies of F in K_n^(s)) log(1 - p^e_F) over nonempty F subset H.

    Returns:
        (log bound, edges of the maximizing F)
    """
    p = open_probability(p)
    best = -math.inf
    best_edges: List[List[int]] = []
    for size in range(1, H.num_edges + 1):
        for subset in combinations(H.edges, size):
            F = PatternHypergraph(s=H.s, v=H.v, edges=[list(edge) for edge in subset])
            copies = expected_copy_count(F, n)
            value = copies * math.log1p(-(p**size)) if copies else 0.0
            if value > best:
                best, best_edges = value, [sorted(edge) for edge in subset]
    return best, best_edges
