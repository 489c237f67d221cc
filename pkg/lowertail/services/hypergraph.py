"""
Weighted uniform hypergraphs and the degree quantities of the lower-tail theory.

Vertices are dense indices 0..v-1. Every edge is stored as a sorted tuple, a
Python-int bitmask (for O(1) subset tests during enumeration) and a positive weight.
The multilinear polynomial f(q) = sum_A d_A prod_{v in A} q_v is evaluated on a
numpy (e, r) index matrix.
"""

import math
from collections import defaultdict
from itertools import combinations
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Hashable,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from loguru import logger

from lowertail.core.config import get_settings
from lowertail.core.exceptions import BudgetExceededError, DomainError
from lowertail.schemas.hypergraphs import (
    DegreeConditionReport,
    HyperedgeDocument,
    HypergraphDocument,
)

VertexSet = Iterable[int]

# Largest ground set accepted by telescoping_identity_residual
TELESCOPING_MAX_SIZE = 12


class WeightedHypergraph:
    """An r-uniform hypergraph on range(num_vertices) with positive edge weights.

    Duplicate edge sets are merged at construction by adding their weights.
    Instances are immutable.
    """

    __slots__ = (
        "_num_vertices",
        "_uniformity",
        "_edges",
        "_weights",
        "_masks",
        "_incidence",
        "_edge_matrix",
        "_labels",
    )

    def __init__(
        self,
        num_vertices: int,
        uniformity: int,
        edges: Iterable[Tuple[Iterable[int], float]],
        labels: Optional[Sequence[Hashable]] = None,
    ):
        """Build and validate a hypergraph.

        Args:
            num_vertices: Size of the vertex set
            uniformity: Number of vertices in every edge
            edges: (vertex collection, weight) pairs
            labels: Optional display label for each vertex

        Raises:
            DomainError: If an edge is not an r-set of vertices or a weight is not positive
        """
        if num_vertices < 0:
            raise DomainError(f"vertex count must be nonnegative, got {num_vertices}")
        if uniformity < 1:
            raise DomainError(f"uniformity must be positive, got {uniformity}")
        if labels is not None and len(labels) != num_vertices:
            raise DomainError("one label per vertex is required")

        merged: Dict[Tuple[int, ...], float] = {}
        for vertices, weight in edges:
            edge = tuple(sorted(vertices))
            if len(edge) != uniformity or len(set(edge)) != uniformity:
                raise DomainError(f"edge {edge} is not a {uniformity}-set")
            if edge[0] < 0 or edge[-1] >= num_vertices:
                raise DomainError(f"edge {edge} leaves the vertex range")
            if not weight > 0:
                raise DomainError(f"edge {edge} has non-positive weight {weight!r}")
            merged[edge] = merged.get(edge, 0.0) + float(weight)

        self._num_vertices = num_vertices
        self._uniformity = uniformity
        self._edges: Tuple[Tuple[int, ...], ...] = tuple(sorted(merged))
        self._weights = np.array([merged[e] for e in self._edges], dtype=float)
        self._weights.setflags(write=False)
        self._masks: Tuple[int, ...] = tuple(_mask(e) for e in self._edges)
        incidence: List[List[int]] = [[] for _ in range(num_vertices)]
        for index, edge in enumerate(self._edges):
            for v in edge:
                incidence[v].append(index)
        self._incidence = tuple(tuple(ids) for ids in incidence)
        self._edge_matrix = np.array(self._edges, dtype=np.intp).reshape(
            len(self._edges), uniformity
        )
        self._edge_matrix.setflags(write=False)
        self._labels = tuple(labels) if labels is not None else None

    @property
    def num_vertices(self) -> int:
        return self._num_vertices

    @property
    def uniformity(self) -> int:
        return self._uniformity

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def edges(self) -> Tuple[Tuple[int, ...], ...]:
        return self._edges

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def masks(self) -> Tuple[int, ...]:
        return self._masks

    @property
    def edge_matrix(self) -> np.ndarray:
        return self._edge_matrix

    @property
    def labels(self) -> Tuple[Hashable, ...]:
        if self._labels is None:
            return tuple(range(self._num_vertices))
        return self._labels

    def incident_edges(self, v: int) -> Tuple[int, ...]:
        """Indices of the edges containing v."""
        return self._incidence[v]

    def has_unit_weights(self) -> bool:
        return bool(np.all(self._weights == 1.0))

    def has_integer_weights(self) -> bool:
        return bool(np.all(self._weights == np.round(self._weights)))

    def __repr__(self) -> str:
        return (
            f"WeightedHypergraph(v={self._num_vertices}, r={self._uniformity}, "
            f"e={self.num_edges}, total_weight={total_weight(self):g})"
        )


def _mask(vertices: Iterable[int]) -> int:
    mask = 0
    for v in vertices:
        mask |= 1 << v
    return mask


def vertex_mask(H: WeightedHypergraph, vertices: VertexSet) -> int:
    """Bitmask of a vertex set, validated against the vertex range of H."""
    mask = 0
    for v in vertices:
        if v < 0 or v >= H.num_vertices:
            raise DomainError(f"vertex {v} is outside 0..{H.num_vertices - 1}")
        mask |= 1 << v
    return mask


def as_product_measure(H: WeightedHypergraph, q: Sequence[float]) -> np.ndarray:
    """Validate q as a product measure on V(H) and return it as an array.

    Raises:
        DomainError: If q has the wrong length or leaves [0, 1]
    """
    values = np.asarray(q, dtype=float)
    if values.shape != (H.num_vertices,):
        raise DomainError(
            f"a product measure on {H.num_vertices} vertices needs as many values, "
            f"got shape {values.shape}"
        )
    if (values < 0).any() or (values > 1).any() or np.isnan(values).any():
        raise DomainError("retention probabilities must lie in [0, 1]")
    return values


def total_weight(H: WeightedHypergraph) -> float:
    """e(H), the sum of all edge weights."""
    return float(H.weights.sum())


def degree(H: WeightedHypergraph, B: VertexSet) -> float:
    """deg_H B, the total weight of the edges containing B.

    Raises:
        DomainError: If B is empty or leaves V(H)
    """
    members = sorted(set(B))
    if not members:
        raise DomainError("degree needs a nonempty vertex set")
    b_mask = vertex_mask(H, members)
    total = 0.0
    for index in H.incident_edges(members[0]):
        if H.masks[index] & b_mask == b_mask:
            total += H.weights[index]
    return float(total)


def max_degree(H: WeightedHypergraph, s: int) -> float:
    """Delta_s(H), the largest degree of an s-set.

    Only s-subsets of edges are enumerated, since every other s-set has degree zero.

    Raises:
        DomainError: If s is not in [1, r]
    """
    if s < 1 or s > H.uniformity:
        raise DomainError(f"s must lie in [1, {H.uniformity}], got {s}")
    degrees: Dict[Tuple[int, ...], float] = defaultdict(float)
    for edge, weight in zip(H.edges, H.weights):
        for subset in combinations(edge, s):
            degrees[subset] += weight
    return float(max(degrees.values(), default=0.0))


def induced_weight(H: WeightedHypergraph, R: VertexSet) -> float:
    """e(H[R]), the total weight of the edges inside R."""
    r_mask = vertex_mask(H, R)
    total = 0.0
    for mask, weight in zip(H.masks, H.weights):
        if mask & r_mask == mask:
            total += weight
    return float(total)


def expected_induced_weight(H: WeightedHypergraph, q: Sequence[float]) -> float:
    """f(q) = sum_A d_A prod_{v in A} q_v = E[e(H[R^(q)])]."""
    values = as_product_measure(H, q)
    return evaluate_polynomial(H, values)


def evaluate_polynomial(H: WeightedHypergraph, q: np.ndarray) -> float:
    """f(q) for an already validated array q."""
    if H.num_edges == 0:
        return 0.0
    return float(H.weights @ q[H.edge_matrix].prod(axis=1))


def expected_weight_gradient(H: WeightedHypergraph, q: Sequence[float]) -> np.ndarray:
    """The gradient (d f / d q_v)_v of the multilinear polynomial at q."""
    values = as_product_measure(H, q)
    return evaluate_gradient(H, values)


def evaluate_gradient(H: WeightedHypergraph, q: np.ndarray) -> np.ndarray:
    grad = np.zeros(H.num_vertices, dtype=float)
    if H.num_edges == 0:
        return grad
    factors = q[H.edge_matrix]
    r = H.uniformity
    # Product of the other factors of each edge, with no division by q_v
    prefix = np.ones_like(factors)
    suffix = np.ones_like(factors)
    for j in range(1, r):
        prefix[:, j] = prefix[:, j - 1] * factors[:, j - 1]
        suffix[:, r - 1 - j] = suffix[:, r - j] * factors[:, r - j]
    others = prefix * suffix
    for j in range(r):
        np.add.at(grad, H.edge_matrix[:, j], H.weights * others[:, j])
    return grad


def partial_derivative(H: WeightedHypergraph, B: VertexSet, q: Sequence[float]) -> float:
    """d_B f(q) = sum_{A contains B} d_A prod_{v in A minus B} q_v.

    Raises:
        DomainError: If B is empty, larger than r, or leaves V(H)
    """
    members = set(B)
    if not members or len(members) > H.uniformity:
        raise DomainError(f"B must have between 1 and {H.uniformity} vertices")
    vertex_mask(H, members)
    values = as_product_measure(H, q)
    total = 0.0
    for edge, weight in zip(H.edges, H.weights):
        if members.issubset(edge):
            term = weight
            for v in edge:
                if v not in members:
                    term *= values[v]
            total += term
    return float(total)


def partial_derivative_at_one(H: WeightedHypergraph, B: VertexSet) -> float:
    """d_B f at the all-ones vector, which equals deg_H B."""
    return partial_derivative(H, B, np.ones(H.num_vertices))


def restriction(H: WeightedHypergraph, W: VertexSet) -> WeightedHypergraph:
    """H - W: the hypergraph induced on V minus W, with vertices renumbered in order."""
    w_mask = vertex_mask(H, W)
    keep = [v for v in range(H.num_vertices) if not (w_mask >> v) & 1]
    position = {v: i for i, v in enumerate(keep)}
    labels = H.labels
    edges = [
        ([position[v] for v in edge], weight)
        for edge, mask, weight in zip(H.edges, H.masks, H.weights)
        if mask & w_mask == 0
    ]
    return WeightedHypergraph(
        len(keep), H.uniformity, edges, labels=[labels[v] for v in keep]
    )


def degree_condition_check(
    H: WeightedHypergraph, p: float, K: float, lam: float
) -> DegreeConditionReport:
    """Check Delta_s(H) <= K (lambda p)^(s-1) e(H)/v(H) for every s in [1, r].

    Args:
        H: Nonempty hypergraph
        p: Density in (0, 1)
        K: Degree constant
        lam: The lambda of the condition

    Returns:
        Report with the worst s, its ratio Delta_s / ((lambda p)^(s-1) e(H)/v(H)),
        and whether the ratio is at most K
    """
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    if K <= 0 or lam <= 0:
        raise DomainError("K and lambda must be positive")
    e = total_weight(H)
    if e <= 0:
        raise DomainError("the degree condition needs a nonempty hypergraph")
    average = e / H.num_vertices
    ratios = [
        max_degree(H, s) / ((lam * p) ** (s - 1) * average)
        for s in range(1, H.uniformity + 1)
    ]
    worst = int(np.argmax(ratios))
    ratio = ratios[worst]
    return DegreeConditionReport(
        holds=ratio <= K,
        worst_s=worst + 1,
        ratio=ratio,
        normalized_ratio=ratio / K,
        ratios=ratios,
    )


class _IndependentSetSearch:
    """Branch and bound for a largest vertex set containing no edge."""

    def __init__(self, num_vertices: int, edges: List[FrozenSet[int]]):
        self.best: FrozenSet[int] = frozenset()
        self.nodes = 0
        self._num_vertices = num_vertices
        self._edges = edges

    def run(self) -> FrozenSet[int]:
        self._search(frozenset(range(self._num_vertices)), self._edges, frozenset())
        return self.best

    def _search(
        self,
        vertices: FrozenSet[int],
        edges: List[FrozenSet[int]],
        chosen: FrozenSet[int],
    ) -> None:
        self.nodes += 1
        # An edge reduced to one vertex forces that vertex out
        while True:
            if any(not edge for edge in edges):
                return
            forced = frozenset(next(iter(edge)) for edge in edges if len(edge) == 1)
            if not forced:
                break
            vertices = vertices - forced
            edges = [edge for edge in edges if not edge & forced]

        covered = frozenset().union(*edges) if edges else frozenset()
        chosen = chosen | (vertices - covered)
        vertices = vertices & covered

        if len(chosen) > len(self.best):
            self.best = chosen
        if not vertices or len(chosen) + len(vertices) <= len(self.best):
            return

        counts: Dict[int, int] = defaultdict(int)
        for edge in edges:
            for v in edge:
                counts[v] += 1
        pivot = max(sorted(vertices), key=lambda v: counts[v])

        # Take the pivot: every edge through it loses a vertex
        self._search(
            vertices - {pivot},
            [edge - {pivot} if pivot in edge else edge for edge in edges],
            chosen | {pivot},
        )
        # Leave the pivot out: edges through it can no longer be completed
        self._search(
            vertices - {pivot},
            [edge for edge in edges if pivot not in edge],
            chosen,
        )


def maximum_independent_set(
    H: WeightedHypergraph, vertex_budget: Optional[int] = None
) -> FrozenSet[int]:
    """A largest I with e(H[I]) = 0, found by exact branch and bound.

    Raises:
        BudgetExceededError: If v(H) exceeds the exact-search budget
    """
    budget = vertex_budget or get_settings().INDEPENDENCE_VERTEX_BUDGET
    if H.num_vertices > budget:
        raise BudgetExceededError(
            f"instance too large: independence search is limited to {budget} vertices, "
            f"got {H.num_vertices}"
        )
    search = _IndependentSetSearch(H.num_vertices, [frozenset(e) for e in H.edges])
    best = search.run()
    logger.debug(
        f"Independence search on v={H.num_vertices} explored {search.nodes} nodes, "
        f"alpha={len(best)}"
    )
    return best


def independence_number(H: WeightedHypergraph, vertex_budget: Optional[int] = None) -> int:
    """alpha(H), the largest size of an independent set."""
    return len(maximum_independent_set(H, vertex_budget))


def _members(mask: int) -> FrozenSet[int]:
    return frozenset(v for v in range(mask.bit_length()) if (mask >> v) & 1)


def _is_free(H: WeightedHypergraph, chosen: int, u: int) -> bool:
    grown = chosen | (1 << u)
    return all(H.masks[i] & grown != H.masks[i] for i in H.incident_edges(u))


def _fill(H: WeightedHypergraph, chosen: int, order: Sequence[int]) -> int:
    for u in order:
        if not (chosen >> u) & 1 and _is_free(H, chosen, u):
            chosen |= 1 << u
    return chosen


def _degree_order(H: WeightedHypergraph) -> List[int]:
    return sorted(range(H.num_vertices), key=lambda u: (len(H.incident_edges(u)), u))


def maximal_independent_set(H: WeightedHypergraph, seed: Optional[int] = None) -> FrozenSet[int]:
    """A maximal independent set grown greedily from seed, then by increasing degree."""
    order = _degree_order(H)
    if seed is not None:
        vertex_mask(H, [seed])
        order = [seed] + [u for u in order if u != seed]
    return _members(_fill(H, 0, order))


def improve_independent_set(H: WeightedHypergraph, independent: VertexSet) -> FrozenSet[int]:
    """Grow an independent set to a local optimum of (1, k)-swaps with k >= 2.

    Each pass drops one member, refills greedily, and keeps the result when it is larger.

    Raises:
        DomainError: If the given set contains an edge
    """
    chosen = vertex_mask(H, independent)
    if any(mask & chosen == mask for mask in H.masks):
        raise DomainError("the starting set contains an edge")
    order = _degree_order(H)
    chosen = _fill(H, chosen, order)
    improved = True
    while improved:
        improved = False
        for x in sorted(_members(chosen)):
            trial = _fill(H, chosen & ~(1 << x), [u for u in order if u != x])
            if trial.bit_count() > chosen.bit_count():
                chosen, improved = trial, True
                break
    return _members(chosen)


def heuristic_independent_set(
    H: WeightedHypergraph, restarts: Optional[int] = None
) -> FrozenSet[int]:
    """Largest local optimum over greedy sets seeded at the first `restarts` vertices.

    A lower bound on alpha(H) for instances beyond the exact-search budget.
    """
    limit = restarts or get_settings().INDEPENDENT_SET_RESTARTS
    best: FrozenSet[int] = frozenset()
    for seed in range(min(H.num_vertices, limit)):
        candidate = improve_independent_set(H, maximal_independent_set(H, seed))
        if len(candidate) > len(best):
            best = candidate
    logger.debug(f"Local search on v={H.num_vertices} found an independent set of {len(best)}")
    return best


def telescoping_identity_residual(
    F: Mapping[FrozenSet, float] | Callable[[FrozenSet], float],
    ground_set: Optional[Iterable[Hashable]] = None,
) -> float:
    """Residual of the subset telescoping identity for a set function F on P(A).

    Evaluates
        F(A) - prod_a F({a})
          - sum_{B subset A, |B| >= 2} sum_{b in B} (F(B) - F(B - b) F({b}))
                prod_{a in A - B} F({a}) / (C(|A|, |B|) |B|),
    which vanishes for every F.

    Args:
        F: Mapping from frozensets to reals, or a callable on frozensets
        ground_set: The set A; defaults to the union of the mapping's keys

    Raises:
        DomainError: If |A| is not in [1, 12]
    """
    if ground_set is None:
        if callable(F):
            raise DomainError("a callable set function needs an explicit ground set")
        ground = frozenset().union(*F.keys())
    else:
        ground = frozenset(ground_set)
    size = len(ground)
    if size < 1 or size > TELESCOPING_MAX_SIZE:
        raise DomainError(
            f"the ground set must have 1..{TELESCOPING_MAX_SIZE} elements, got {size}"
        )
    value = F if callable(F) else F.__getitem__

    elements = sorted(ground, key=repr)
    singles = {a: value(frozenset([a])) for a in elements}
    lhs = value(ground) - math.prod(singles.values())

    rhs = 0.0
    for k in range(2, size + 1):
        coefficient = 1.0 / (math.comb(size, k) * k)
        for subset in combinations(elements, k):
            B = frozenset(subset)
            outside = math.prod(singles[a] for a in elements if a not in B)
            F_B = value(B)
            inner = sum(F_B - value(B - {b}) * singles[b] for b in subset)
            rhs += coefficient * inner * outside
    return float(lhs - rhs)


def hypergraph_from_document(document: HypergraphDocument) -> WeightedHypergraph:
    """Build a hypergraph from its JSON document, merging duplicate edges."""
    return WeightedHypergraph(
        document.v, document.r, [(edge.A, edge.d) for edge in document.edges]
    )


def hypergraph_to_document(H: WeightedHypergraph) -> HypergraphDocument:
    return HypergraphDocument(
        r=H.uniformity,
        v=H.num_vertices,
        edges=[
            HyperedgeDocument(A=list(edge), d=float(weight))
            for edge, weight in zip(H.edges, H.weights)
        ],
    )


def load_hypergraph(path: str) -> WeightedHypergraph:
    """Read a hypergraph JSON file."""
    with open(path) as handle:
        document = HypergraphDocument.model_validate_json(handle.read())
    H = hypergraph_from_document(document)
    logger.info(f"Loaded {H!r} from {path}")
    return H
