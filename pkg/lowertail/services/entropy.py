"""
Information-theoretic primitives for lower-tail estimates.

All logarithms are natural. The convention 0 log 0 = 0 is applied through
scipy.special.rel_entr / entr, which define it explicitly instead of relying on
0 * -inf arithmetic. Inequalities from the theory are exposed as evaluatable
(lhs, rhs) gaps so they can be checked on random instances.
"""

import math
from itertools import combinations
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.special import entr, rel_entr

from lowertail.core.exceptions import (
    AbsoluteContinuityError,
    DomainError,
    NumericalError,
    PreconditionError,
    SupportViolationError,
    ZeroProbabilityError,
)
from lowertail.schemas.distributions import (
    BernoulliParam,
    FiniteDistribution,
    JointBinaryDistribution,
)

Probability = Union[float, BernoulliParam]

# Slack allowed when comparing a conditional mean against p'.
CONDITIONAL_MEAN_TOLERANCE = 1e-12

# Rounding allowed below zero for quantities that are nonnegative in exact arithmetic
NONNEGATIVE_SLACK = 1e-12


def _value(param: Probability) -> float:
    """Validate a Bernoulli parameter and return it as a float."""
    if isinstance(param, BernoulliParam):
        return param.value
    return BernoulliParam(value=param).value


def _nonnegative(value: float, name: str) -> float:
    if value < -NONNEGATIVE_SLACK:
        raise NumericalError(f"{name} came out at {value!r}, below zero beyond rounding")
    return max(float(value), 0.0)


def open_probability(p: Probability, name: str = "p") -> float:
    value = _value(p)
    if value <= 0.0 or value >= 1.0:
        raise DomainError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return value


def relative_entropy_bernoulli(q: Probability, p: Probability) -> float:
    """i_p(q) = D_KL(Ber(q) || Ber(p)).

    Args:
        q: Parameter of the tilted Bernoulli law, in [0, 1]
        p: Parameter of the reference law, in (0, 1)

    Returns:
        q log(q/p) + (1-q) log((1-q)/(1-p)), which is zero iff q = p

    Raises:
        DomainError: If p is 0 or 1
    """
    p = open_probability(p)
    q = _value(q)
    return float(rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p))


def relative_entropy_bernoulli_vector(q: np.ndarray, p: float) -> np.ndarray:
    """Elementwise i_p over an array of parameters; p is assumed valid."""
    q = np.asarray(q, dtype=float)
    return rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p)


def relative_entropy_bernoulli_derivatives(
    q: Probability, p: Probability
) -> Tuple[float, float]:
    """First and second derivatives of i_p at q.

    Raises:
        DomainError: If q or p is 0 or 1 (the derivative is infinite there)
    """
    p = open_probability(p)
    q = open_probability(q, name="q")
    first = math.log(q / p) - math.log((1.0 - q) / (1.0 - p))
    second = 1.0 / q + 1.0 / (1.0 - q)
    return first, second


def bernoulli_from_mass(q: Probability) -> FiniteDistribution:
    """Ber(q) as a distribution on {0, 1}."""
    q = _value(q)
    return FiniteDistribution(mass=[1.0 - q, q])


def kl_divergence(P: FiniteDistribution, Q: FiniteDistribution) -> float:
    """D_KL(P || Q) on a common finite support.

    Raises:
        DomainError: If the supports differ in size
        AbsoluteContinuityError: If P charges a point that Q does not
        NumericalError: If the sum comes out below -1e-12
    """
    if P.support_size != Q.support_size:
        raise DomainError(
            f"support sizes differ: {P.support_size} vs {Q.support_size}"
        )
    p = np.asarray(P.mass, dtype=float)
    q = np.asarray(Q.mass, dtype=float)
    bad = (p > 0) & (q == 0)
    if bad.any():
        raise AbsoluteContinuityError(
            f"P has mass on points {np.flatnonzero(bad).tolist()} where Q has none"
        )
    return _nonnegative(rel_entr(p, q).sum(), "D_KL(P || Q)")


def shannon_entropy(P: FiniteDistribution) -> float:
    """H(P) = -sum P(x) log P(x)."""
    return float(entr(np.asarray(P.mass, dtype=float)).sum())


def condition_on_event(Q: FiniteDistribution, event: Iterable[int]) -> FiniteDistribution:
    """Q conditioned on the event A (a set of support points).

    Raises:
        ZeroProbabilityError: If Q(A) = 0
    """
    q = np.asarray(Q.mass, dtype=float)
    indicator = np.zeros(q.size, dtype=bool)
    indicator[list(event)] = True
    restricted = np.where(indicator, q, 0.0)
    total = restricted.sum()
    if total <= 0:
        raise ZeroProbabilityError("cannot condition on an event of probability zero")
    conditioned = restricted / total
    # Renormalize once more so the sum is 1 to machine precision
    conditioned = conditioned / conditioned.sum()
    return FiniteDistribution(mass=conditioned.tolist())


def _table(J: JointBinaryDistribution) -> np.ndarray:
    return np.asarray(J.mass, dtype=float)


def conditional_entropy(J: JointBinaryDistribution) -> float:
    """H(X | Z) = sum_z Pr(Z = z) H(X | Z = z); null z-values contribute zero."""
    table = _table(J)
    pz = table.sum(axis=0)
    total = 0.0
    for z in np.flatnonzero(pz > 0):
        column = table[:, z] / pz[z]
        total += pz[z] * entr(column).sum()
    return float(total)


def mutual_information(J: JointBinaryDistribution) -> float:
    """H(X) - H(X | Z)."""
    table = _table(J)
    px = FiniteDistribution(mass=_renormalized(table.sum(axis=1)))
    return max(shannon_entropy(px) - conditional_entropy(J), 0.0)


def total_variation(P: FiniteDistribution, Q: FiniteDistribution) -> float:
    """d_TV(P, Q) = 1/2 sum |P(x) - Q(x)|."""
    if P.support_size != Q.support_size:
        raise DomainError(
            f"support sizes differ: {P.support_size} vs {Q.support_size}"
        )
    p = np.asarray(P.mass, dtype=float)
    q = np.asarray(Q.mass, dtype=float)
    return float(min(0.5 * np.abs(p - q).sum(), 1.0))


def _renormalized(mass: np.ndarray) -> List[float]:
    mass = np.clip(np.asarray(mass, dtype=float), 0.0, None)
    return (mass / mass.sum()).tolist()


def pinsker_gap(J: JointBinaryDistribution) -> Tuple[float, float]:
    """Both sides of d_TV((X, Z), X x Z)^2 <= 2 (H(X) - H(X | Z)).

    Returns:
        (lhs, rhs); the inequality guarantees lhs <= rhs
    """
    table = _table(J)
    product = np.outer(table.sum(axis=1), table.sum(axis=0))
    lhs = total_variation(
        FiniteDistribution(mass=_renormalized(table.ravel())),
        FiniteDistribution(mass=_renormalized(product.ravel())),
    )
    rhs = 2.0 * mutual_information(J)
    return lhs**2, rhs


def log_sum_gap(a: Sequence[float], b: Sequence[float]) -> float:
    """sum a_i log(a_i / b_i) - a log(a / b) with a = sum a_i and b = sum b_i.

    Raises:
        DomainError: If the vectors differ in length or have negative entries
        SupportViolationError: If a_i > 0 for some b_i = 0
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"vector shapes differ: {a.shape} vs {b.shape}")
    if (a < 0).any() or (b < 0).any():
        raise DomainError("log-sum vectors must be nonnegative")
    if ((a > 0) & (b == 0)).any():
        raise SupportViolationError("a_i must vanish wherever b_i does")
    gap = rel_entr(a, b).sum() - rel_entr(a.sum(), b.sum())
    return _nonnegative(gap, "the log-sum gap")


def conditional_p_divergence(J: JointBinaryDistribution, p: Probability) -> float:
    """I_p(X | Z) = E_z[i_p(Pr(X = 1 | Z = z))]."""
    p = open_probability(p)
    table = _table(J)
    pz = table.sum(axis=0)
    live = pz > 0
    conditional = np.clip(table[1, live] / pz[live], 0.0, 1.0)
    return float((pz[live] * relative_entropy_bernoulli_vector(conditional, p)).sum())


def key_lemma_gap(
    J: JointBinaryDistribution,
    events: Sequence[Iterable[int]],
    p: Probability,
    p_prime: float,
) -> Tuple[float, float]:
    """Both sides of the key conditioning inequality for a binary X.

    lhs = I_p(X | Z) - I_p(X) and
    rhs = 1/(2p') sum_i (Pr(X=1 | E_i) - mu)^2 Pr(E_i) - p'/2 sum_{i<j} Pr(E_i and E_j),
    where mu = Pr(X = 1) and each E_i is a set of Z-values.

    Raises:
        DomainError: If p' <= 0 or an event leaves the Z-alphabet
        PreconditionError: If Pr(X = 1 | Z = z) > p' for some z of positive mass
    """
    p = open_probability(p)
    if p_prime <= 0:
        raise DomainError(f"p' must be positive, got {p_prime!r}")
    table = _table(J)
    pz = table.sum(axis=0)
    live = pz > 0
    conditional = table[1, live] / pz[live]
    if (conditional > p_prime + CONDITIONAL_MEAN_TOLERANCE).any():
        raise PreconditionError(
            f"E[X | Z] reaches {conditional.max()!r}, above p' = {p_prime!r}"
        )

    mu = float(table[1].sum())
    # lhs is the mutual information of X and Z, hence nonnegative
    lhs = _nonnegative(
        conditional_p_divergence(J, p) - relative_entropy_bernoulli(min(mu, 1.0), p),
        "I_p(X | Z) - I_p(X)",
    )

    indicators = []
    for event in events:
        indicator = np.zeros(J.alphabet_size, dtype=bool)
        members = list(event)
        if any(z < 0 or z >= J.alphabet_size for z in members):
            raise DomainError(f"event {members} leaves the Z-alphabet")
        indicator[members] = True
        indicators.append(indicator)

    first = 0.0
    for indicator in indicators:
        prob = pz[indicator].sum()
        if prob <= 0:
            continue
        mean = table[1, indicator].sum() / prob
        first += (mean - mu) ** 2 * prob
    overlap = 0.0
    for left, right in combinations(indicators, 2):
        overlap += pz[left & right].sum()

    rhs = first / (2.0 * p_prime) - 0.5 * p_prime * overlap
    return float(lhs), float(rhs)


def binomial_tail_bound(n: int, p: Probability, q: Probability) -> Tuple[float, float]:
    """Chernoff-type bound Pr(Bin(n, p) <= nq) <= exp(-n i_p(q)) and the exact value.

    Returns:
        (bound, exact)

    Raises:
        DomainError: If n < 1, p is not in (0, 1) or q > p
    """
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    p = open_probability(p)
    q = _value(q)
    if q > p:
        raise DomainError(f"the lower-tail bound needs q <= p, got q={q!r} > p={p!r}")
    bound = math.exp(-n * relative_entropy_bernoulli(q, p))
    # nq is formed from decimal grids, so absorb representation error before flooring
    k = math.floor(n * q + 1e-9)
    exact = float(stats.binom.cdf(k, n, p))
    return bound, exact


def p_divergence(law: Sequence[float], p: Probability) -> float:
    """I_p(X) = D_KL(X || Ber(p)^k) for X on {0,1}^k.

    Args:
        law: Probability of each state; state x is encoded as the bitmask
            sum_j x_j 2^j, so len(law) must be 2^k
        p: Reference parameter in (0, 1)
    """
    p = open_probability(p)
    mass = np.asarray(law, dtype=float)
    k = _bit_width(mass.size)
    P = FiniteDistribution(mass=mass.tolist())
    Q = FiniteDistribution(mass=_product_law(k, p).tolist())
    return kl_divergence(P, Q)


def marginal_p_divergences(law: Sequence[float], p: Probability) -> List[float]:
    """i_p(E[X_j]) for each coordinate j of X on {0,1}^k."""
    p = open_probability(p)
    mass = np.asarray(law, dtype=float)
    k = _bit_width(mass.size)
    states = np.arange(mass.size)
    result = []
    for j in range(k):
        mean = float(mass[(states >> j) & 1 == 1].sum())
        result.append(relative_entropy_bernoulli(min(max(mean, 0.0), 1.0), p))
    return result


def _bit_width(size: int) -> int:
    k = size.bit_length() - 1
    if size < 2 or (1 << k) != size:
        raise DomainError(f"a law on {{0,1}}^k needs 2^k masses, got {size}")
    return k


def _product_law(k: int, p: float) -> np.ndarray:
    states = np.arange(1 << k)
    ones = np.zeros(states.size, dtype=int)
    for j in range(k):
        ones += (states >> j) & 1
    return np.power(p, ones) * np.power(1.0 - p, k - ones)
