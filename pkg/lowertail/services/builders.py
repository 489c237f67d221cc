"""
Builders for the application hypergraphs: copies of a fixed pattern in the complete
s-uniform hypergraph on [n], and k-term arithmetic progressions in [n].
"""

import math
from fractions import Fraction
from itertools import combinations, permutations
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from loguru import logger

from lowertail.core.config import get_settings
from lowertail.core.exceptions import BudgetExceededError, DomainError
from lowertail.schemas.hypergraphs import (
    APDegreeAuditReport,
    DegreeAuditReport,
    DegreeAuditRow,
    DensityReport,
    PatternHypergraph,
)
from lowertail.services.hypergraph import WeightedHypergraph, max_degree, total_weight

# Brute-force permutation search is limited to patterns this small
PATTERN_VERTEX_BUDGET = 8

AUDIT_RTOL = 1e-9

HostEdge = Tuple[int, ...]


def _pattern_edges(H: PatternHypergraph) -> List[FrozenSet[int]]:
    return [frozenset(edge) for edge in H.edges]


def _covered_vertices(edges: Iterable[FrozenSet[int]]) -> List[int]:
    return sorted(frozenset().union(*edges))


def _check_pattern_budget(num_vertices: int) -> None:
    if num_vertices > PATTERN_VERTEX_BUDGET:
        raise BudgetExceededError(
            f"instance too large: pattern search is limited to {PATTERN_VERTEX_BUDGET} "
            f"vertices, got {num_vertices}"
        )


def _automorphisms(edges: List[FrozenSet[int]], vertices: List[int]) -> int:
    edge_set = set(edges)
    count = 0
    for image in permutations(vertices):
        relabel = dict(zip(vertices, image))
        if all(frozenset(relabel[x] for x in edge) in edge_set for edge in edges):
            count += 1
    return count


def automorphism_count(H: PatternHypergraph) -> int:
    """|Aut(H)| by brute-force search over permutations of the non-isolated vertices.

    Isolated pattern vertices are ignored: copies are identified by their edge sets.
    """
    edges = _pattern_edges(H)
    vertices = _covered_vertices(edges)
    _check_pattern_budget(len(vertices))
    return _automorphisms(edges, vertices)


def expected_copy_count(H: PatternHypergraph, n: int) -> int:
    """v_H! / |Aut(H)| * C(n, v_H), the number of copies of H in K_n^(s)."""
    v = len(_covered_vertices(_pattern_edges(H)))
    return math.factorial(v) // automorphism_count(H) * math.comb(n, v)


def host_vertex_index(n: int, s: int) -> Dict[HostEdge, int]:
    """Index of every s-subset of range(n), in lexicographic order.

    These s-subsets are the vertices of the copy hypergraph.
    """
    if s < 1 or n < s:
        raise DomainError(f"need 1 <= s <= n, got s={s}, n={n}")
    return {subset: index for index, subset in enumerate(combinations(range(n), s))}


def copy_hypergraph(
    H: PatternHypergraph, n: int, edge_budget: Optional[int] = None
) -> WeightedHypergraph:
    """The e_H-uniform hypergraph whose edges are the edge sets of all copies of H in K_n^(s).

    Args:
        H: Pattern hypergraph
        n: Size of the host vertex set
        edge_budget: Largest number of copies to build; defaults to EDGE_BUDGET

    Raises:
        DomainError: If n < v_H
        BudgetExceededError: If the number of copies exceeds the budget
    """
    edges = _pattern_edges(H)
    vertices = _covered_vertices(edges)
    if n < len(vertices):
        raise DomainError(f"the host needs at least {len(vertices)} vertices, got n={n}")
    budget = edge_budget or get_settings().EDGE_BUDGET
    expected = expected_copy_count(H, n)
    if expected > budget:
        raise BudgetExceededError(
            f"instance too large: {expected} copies exceed the edge budget of {budget}"
        )

    index = host_vertex_index(n, H.s)
    copies: List[Tuple[int, ...]] = []
    for host in combinations(range(n), len(vertices)):
        seen: Set[Tuple[int, ...]] = set()
        # Copies on different host vertex sets are always distinct
        for image in permutations(host):
            relabel = dict(zip(vertices, image))
            copy = tuple(
                sorted(index[tuple(sorted(relabel[x] for x in edge))] for edge in edges)
            )
            seen.add(copy)
        copies.extend(sorted(seen))

    logger.info(
        f"Built copy hypergraph of a {H.s}-uniform pattern with {H.num_edges} edges "
        f"in K_{n}: v={len(index)}, e={len(copies)}"
    )
    return WeightedHypergraph(
        len(index), H.num_edges, [(copy, 1.0) for copy in copies], labels=list(index)
    )


def _host_edges(G: Iterable[Iterable[int]], n: int, s: int) -> Set[FrozenSet[int]]:
    host: Set[FrozenSet[int]] = set()
    for edge in G:
        key = frozenset(edge)
        if len(key) != s or any(x < 0 or x >= n for x in key):
            raise DomainError(f"host edge {sorted(key)} is not an {s}-subset of range({n})")
        host.add(key)
    return host


def count_copies(
    H: PatternHypergraph, G: Iterable[Iterable[int]], n: Optional[int] = None
) -> int:
    """N_H(G), the number of unlabeled copies of H in the host edge set G.

    Counts injective embeddings by backtracking and divides by |Aut(H)|. The host
    lives on range(n); n defaults to one more than the largest vertex of G, and
    passing it only adds a range check on G.
    """
    edges = _pattern_edges(H)
    vertices = _covered_vertices(edges)
    G = [tuple(edge) for edge in G]
    if n is None:
        n = max((x for edge in G for x in edge), default=-1) + 1
    host = _host_edges(G, n, H.s)
    if len(vertices) > n or not host:
        return 0

    # Each pattern edge is checked as soon as its last vertex is placed
    position = {x: i for i, x in enumerate(vertices)}
    closing: List[List[FrozenSet[int]]] = [[] for _ in vertices]
    for edge in edges:
        closing[max(position[x] for x in edge)].append(edge)

    assignment: Dict[int, int] = {}
    used: Set[int] = set()

    def extend(depth: int) -> int:
        if depth == len(vertices):
            return 1
        x = vertices[depth]
        total = 0
        for y in range(n):
            if y in used:
                continue
            assignment[x] = y
            if all(
                frozenset(assignment[z] for z in edge) in host for edge in closing[depth]
            ):
                used.add(y)
                total += extend(depth + 1)
                used.discard(y)
            del assignment[x]
        return total

    embeddings = extend(0)
    return embeddings // _automorphisms(edges, vertices)


def s_density(H: PatternHypergraph) -> DensityReport:
    """m_s(H), the max of (e_F - 1)/(v_F - s) over subpatterns F with e_F >= 2.

    Only induced subpatterns need to be searched: for a fixed vertex set the ratio
    grows with the number of edges. Equals 1/s when H has a single edge.
    """
    edges = _pattern_edges(H)
    vertices = _covered_vertices(edges)
    if len(edges) == 1:
        return DensityReport(
            numerator=1,
            denominator=H.s,
            subpattern_vertices=vertices,
            subpattern_edges=[sorted(edges[0])],
        )

    best: Optional[Fraction] = None
    best_vertices: Tuple[int, ...] = ()
    best_edges: List[FrozenSet[int]] = []
    for size in range(H.s + 1, len(vertices) + 1):
        for U in combinations(vertices, size):
            inside = [edge for edge in edges if edge.issubset(U)]
            if len(inside) < 2:
                continue
            ratio = Fraction(len(inside) - 1, size - H.s)
            if best is None or ratio > best:
                best, best_vertices, best_edges = ratio, U, inside

    return DensityReport(
        numerator=best.numerator,
        denominator=best.denominator,
        subpattern_vertices=list(best_vertices),
        subpattern_edges=[sorted(edge) for edge in best_edges],
    )


def two_density(H: PatternHypergraph) -> DensityReport:
    """m_2(H) of a graph pattern."""
    if H.s != 2:
        raise DomainError(f"two_density needs a graph pattern, got s={H.s}")
    return s_density(H)


def ap_hypergraph(k: int, n: int) -> WeightedHypergraph:
    """Unit-weight hypergraph on [n] whose edges are the k-term arithmetic progressions.

    Vertex i carries the label i + 1.
    """
    if k < 3:
        raise DomainError(f"progressions need k >= 3, got {k}")
    if n < k:
        raise DomainError(f"need n >= k, got k={k}, n={n}")
    edges = [
        (tuple(x + j * d for j in range(k)), 1.0)
        for d in range(1, (n - 1) // (k - 1) + 1)
        for x in range(n - (k - 1) * d)
    ]
    return WeightedHypergraph(n, k, edges, labels=list(range(1, n + 1)))


def count_aps(k: int, I: Iterable[int]) -> int:
    """A_k(I), the number of k-term arithmetic progressions (common difference >= 1) in I."""
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    members = set(I)
    if len(members) < k:
        return 0
    if k == 1:
        return len(members)
    top = max(members)
    count = 0
    for x in members:
        for d in range(1, (top - x) // (k - 1) + 1):
            if all(x + j * d in members for j in range(1, k)):
                count += 1
    return count


def degree_bound_audit(
    H: PatternHypergraph, n: int, edge_budget: Optional[int] = None
) -> DegreeAuditReport:
    """Check the copy-hypergraph degree identities on K_n^(s).

    Verifies Delta_1 = e_H e(G)/v(G) exactly and
    Delta_u <= (n^(-1/m_s(H)))^(u-1) n^(v_H - s) for every u in [2, e_H].
    """
    G = copy_hypergraph(H, n, edge_budget)
    density = s_density(H)
    m_s = float(density.value)
    v_H = len(_covered_vertices(_pattern_edges(H)))

    num_edges = int(round(total_weight(G)))
    delta_one = max_degree(G, 1)
    expected = H.num_edges * num_edges / G.num_vertices
    identity = int(round(delta_one)) * G.num_vertices == H.num_edges * num_edges

    rows = []
    for u in range(2, H.num_edges + 1):
        delta = max_degree(G, u)
        bound = n ** (-(u - 1) / m_s) * n ** (v_H - H.s)
        rows.append(
            DegreeAuditRow(
                u=u,
                delta=delta,
                bound=bound,
                slack=bound / delta if delta > 0 else None,
                holds=delta <= bound * (1 + AUDIT_RTOL),
            )
        )

    report = DegreeAuditReport(
        n=n,
        num_vertices=G.num_vertices,
        num_edges=num_edges,
        delta_one=delta_one,
        expected_delta_one=expected,
        delta_one_identity_holds=identity,
        density_numerator=density.numerator,
        density_denominator=density.denominator,
        rows=rows,
    )
    if not report.holds:
        logger.warning(f"Degree audit failed for n={n}: {report.model_dump()}")
    return report


def ap_degree_audit(k: int, n: int) -> APDegreeAuditReport:
    """Observed Delta_u of the k-AP hypergraph, checked against Delta_1 <= kn and Delta_2 <= C(k, 2)."""
    G = ap_hypergraph(k, n)
    deltas = [max_degree(G, u) for u in range(1, k + 1)]
    pair_bound = math.comb(k, 2)
    return APDegreeAuditReport(
        k=k,
        n=n,
        num_edges=G.num_edges,
        deltas=deltas,
        delta_one_bound=k * n,
        pair_bound=pair_bound,
        holds=deltas[0] <= k * n and deltas[1] <= pair_bound,
    )


def theorem_constants(r: int, p0: float, epsilon: float, K: float) -> Tuple[float, float]:
    """The lambda and C of the lower-tail sandwich theorem.

    lambda = 1e-5 K^-2 r^-4 epsilon^9 (1 - p0)
    C = 1e6 K^2 r^5 epsilon^-9 (1 - p0)^-1 log(1 / (1 - p0))

    Raises:
        DomainError: Outside 0 < p0 < 1, epsilon > 0, K > 0, r >= 1
    """
    if not 0 < p0 < 1:
        raise DomainError(f"p0 must lie in (0, 1), got {p0!r}")
    if epsilon <= 0 or K <= 0 or r < 1:
        raise DomainError("need epsilon > 0, K > 0 and r >= 1")
    lam = 1e-5 * K**-2 * r**-4 * epsilon**9 * (1 - p0)
    C = 1e6 * K**2 * r**5 * epsilon**-9 / (1 - p0) * -math.log1p(-p0)
    return lam, C
