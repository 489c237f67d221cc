import math

import numpy as np
import pytest

from lowertail.core.config import get_settings
from lowertail.core.exceptions import BudgetExceededError, DomainError
from lowertail.schemas.variational import TailSpec
from lowertail.services.entropy import relative_entropy_bernoulli
from lowertail.services.builders import ap_hypergraph, copy_hypergraph
from lowertail.services.hypergraph import (
    WeightedHypergraph,
    expected_induced_weight,
    load_hypergraph,
)
from lowertail.services.variational import (
    kkt_residual,
    phi_grid_oracle,
    phi_lower_certificate,
    phi_zero,
    solve_phi,
    solve_phi_symmetric,
    threshold,
    to_absolute,
    to_relative,
)

ETAS = [0.1, 0.3, 0.5, 0.7, 0.9]


def singletons(weights):
    return WeightedHypergraph(len(weights), 1, [((v,), w) for v, w in enumerate(weights)])


def single_edge(r=2):
    return WeightedHypergraph(r, r, [(tuple(range(r)), 1.0)])


def shared_pair():
    """Two triples meeting in the pair {0, 1}."""
    return WeightedHypergraph(4, 3, [((0, 1, 2), 1.0), ((0, 1, 3), 1.0)])


def assert_feasible(H, p, spec, sol):
    assert sol.constraint_value <= threshold(H, p, spec) * (1 + 1e-8) + 1e-15
    assert expected_induced_weight(H, sol.q) == pytest.approx(sol.constraint_value)
    assert max(sol.q) <= p + 1e-12
    assert min(sol.q) >= 0.0


class TestThresholds:
    def test_conversions(self, k4_triangles):
        spec = TailSpec.relative(0.5)
        assert threshold(k4_triangles, 0.5, spec) == pytest.approx(0.25)
        absolute = to_absolute(k4_triangles, 0.5, spec)
        assert absolute.mode == "absolute"
        assert absolute.t == pytest.approx(0.25)
        assert to_relative(k4_triangles, 0.5, absolute).eta == pytest.approx(0.5)

    def test_spec_needs_its_level(self):
        with pytest.raises(ValueError):
            TailSpec(mode="absolute", eta=0.5)
        with pytest.raises(ValueError):
            TailSpec.relative(-0.1)


class TestSolvePhi:
    @pytest.mark.parametrize("eta", [1.0, 1.5])
    def test_trivial_at_or_above_mean(self, k4_triangles, eta):
        sol = solve_phi(k4_triangles, 0.3, TailSpec.relative(eta))
        assert sol.phi == 0.0
        assert sol.q == [0.3] * 6
        assert sol.status == "infeasibility_trivial"
        assert sol.theta == 0.0

    @pytest.mark.parametrize("n", [4, 5])
    def test_unit_eta_on_copies(self, triangle, n):
        sol = solve_phi(copy_hypergraph(triangle, n), 0.3, TailSpec.relative(1.0))
        assert sol.status == "infeasibility_trivial"
        assert sol.phi == 0.0

    def test_unit_eta_on_progressions(self):
        sol = solve_phi(ap_hypergraph(3, 10), 0.4, TailSpec.relative(1.0))
        assert sol.status == "infeasibility_trivial"
        assert sol.phi == 0.0

    def test_absolute_mean_is_trivial(self, triangle):
        H = copy_hypergraph(triangle, 5)
        spec = to_absolute(H, 0.3, TailSpec.relative(1.0))
        assert solve_phi(H, 0.3, spec).status == "infeasibility_trivial"

    @pytest.mark.parametrize("n", [5, 10, 20])
    @pytest.mark.parametrize("p", [0.2, 0.5])
    @pytest.mark.parametrize("eta", [0.25, 0.5, 0.75])
    def test_singletons_closed_form(self, n, p, eta):
        H = singletons([1.0] * n)
        spec = TailSpec.relative(eta)
        sol = solve_phi(H, p, spec)
        assert_feasible(H, p, spec, sol)
        assert sol.phi == pytest.approx(n * relative_entropy_bernoulli(eta * p, p), rel=1e-8)
        assert sol.q == pytest.approx([eta * p] * n, abs=1e-8)
        assert sol.status == "optimal"
        assert sol.kkt_residual <= 1e-8

    def test_asymmetric_optimum_on_square(self, fixtures_dir):
        H = load_hypergraph(str(fixtures_dir / "square.json"))
        spec = TailSpec.relative(0.1)
        sol = solve_phi(H, 0.3, spec)
        _, phi_upper = solve_phi_symmetric(H, 0.3, spec)
        assert_feasible(H, 0.3, spec, sol)
        assert sol.phi < phi_upper - 0.01
        # One side of the bipartition stays near p, the other is pushed down
        q = np.asarray(sol.q)
        assert abs(q[0] + q[2] - q[1] - q[3]) > 0.2

    def test_zero_threshold_bounded_by_empty_set(self, k4_triangles):
        p = 0.3
        sol = solve_phi(k4_triangles, p, TailSpec.relative(0.0))
        assert sol.phi <= -6 * math.log(1 - p) + 1e-12
        assert sol.constraint_value == 0.0
        assert sol.status == "boundary_zero"

    @pytest.mark.parametrize("eta", [0.3, 0.5, 0.8])
    def test_k4_triangles(self, k4_triangles, eta):
        p = 0.3
        spec = TailSpec.relative(eta)
        sol = solve_phi(k4_triangles, p, spec)
        assert_feasible(k4_triangles, p, spec, sol)
        assert sol.phi > 0.0
        assert sol.theta > 0.0
        assert sol.kkt_residual <= 1e-8
        assert kkt_residual(k4_triangles, p, spec, sol) == pytest.approx(sol.kkt_residual)

    def test_monotone_in_eta(self, k4_triangles):
        values = [
            solve_phi(k4_triangles, 0.3, TailSpec.relative(eta)).phi for eta in ETAS[1:]
        ]
        assert all(a >= b - 1e-8 for a, b in zip(values, values[1:]))

    def test_monotone_in_eta_for_singletons(self):
        H = singletons([1.0, 2.0, 0.5])
        values = [solve_phi(H, 0.5, TailSpec.relative(eta)).phi for eta in ETAS]
        assert all(a >= b - 1e-8 for a, b in zip(values, values[1:]))

    def test_absolute_mode_matches_relative(self, k4_triangles):
        p = 0.5
        relative = solve_phi(k4_triangles, p, TailSpec.relative(0.5))
        absolute = solve_phi(k4_triangles, p, TailSpec.absolute(0.25))
        assert absolute.phi == pytest.approx(relative.phi, rel=1e-8)

    def test_scale_invariance(self):
        H = singletons([1.0, 2.0, 3.0])
        scaled = singletons([7.5, 15.0, 22.5])
        spec = TailSpec.relative(0.4)
        assert solve_phi(scaled, 0.3, spec).phi == pytest.approx(
            solve_phi(H, 0.3, spec).phi, rel=1e-6
        )

    def test_no_random_starts(self, k4_triangles):
        spec = TailSpec.relative(0.5)
        sol = solve_phi(k4_triangles, 0.3, spec, random_starts=0)
        assert_feasible(k4_triangles, 0.3, spec, sol)
        _, phi_upper = solve_phi_symmetric(k4_triangles, 0.3, spec)
        assert sol.phi <= phi_upper + 1e-8

    def test_domain(self, k4_triangles):
        with pytest.raises(DomainError):
            solve_phi(k4_triangles, 1.0, TailSpec.relative(0.5))
        with pytest.raises(DomainError):
            solve_phi(WeightedHypergraph(3, 2, []), 0.5, TailSpec.relative(0.5))

    def test_solution_json(self, k4_triangles):
        payload = solve_phi(k4_triangles, 0.3, TailSpec.relative(0.5)).to_solution_json()
        assert set(payload) == {"phi", "theta", "q", "status", "kkt_residual"}


class TestSymmetric:
    def test_trivial(self, k4_triangles):
        assert solve_phi_symmetric(k4_triangles, 0.3, TailSpec.relative(1.0)) == (0.3, 0.0)

    @pytest.mark.parametrize("eta", ETAS)
    def test_homogeneous_root(self, k4_triangles, eta):
        q, phi_upper = solve_phi_symmetric(k4_triangles, 0.3, TailSpec.relative(eta))
        assert q == pytest.approx(eta ** (1 / 3) * 0.3, rel=1e-12)
        assert 4 * q**3 <= eta * 0.3**3 * 4
        assert phi_upper == pytest.approx(6 * relative_entropy_bernoulli(q, 0.3))

    @pytest.mark.parametrize("eta", ETAS)
    def test_singletons_agree_with_solver(self, eta):
        H = singletons([1.0] * 4)
        spec = TailSpec.relative(eta)
        _, phi_upper = solve_phi_symmetric(H, 0.4, spec)
        assert phi_upper == pytest.approx(solve_phi(H, 0.4, spec).phi, rel=1e-6)

    @pytest.mark.parametrize("eta", ETAS)
    def test_dominates_solver(self, k4_triangles, eta):
        spec = TailSpec.relative(eta)
        _, phi_upper = solve_phi_symmetric(k4_triangles, 0.3, spec)
        assert solve_phi(k4_triangles, 0.3, spec).phi <= phi_upper + 1e-8


class TestGridOracle:
    def test_trivial(self):
        assert phi_grid_oracle(single_edge(), 0.5, TailSpec.relative(1.0)) == 0.0

    def test_single_vertex(self):
        H = singletons([1.0])
        value = phi_grid_oracle(H, 0.5, TailSpec.relative(0.5))
        assert value == pytest.approx(relative_entropy_bernoulli(0.25, 0.5), abs=1e-9)

    @pytest.mark.parametrize("weights", [[1.0, 1.0], [1.0, 2.0, 0.5], [0.3, 1.0, 1.0, 2.0]])
    @pytest.mark.parametrize("eta", [0.2, 0.6])
    def test_dominates_solver_on_linear_constraints(self, weights, eta):
        H = singletons(weights)
        spec = TailSpec.relative(eta)
        grid = phi_grid_oracle(H, 0.5, spec)
        assert solve_phi(H, 0.5, spec).phi <= grid + 2e-3

    @pytest.mark.parametrize("eta", [0.5, 0.9])
    def test_dominates_solver_on_single_edge(self, eta):
        spec = TailSpec.relative(eta)
        grid = phi_grid_oracle(single_edge(), 0.5, spec)
        assert solve_phi(single_edge(), 0.5, spec).phi <= grid + 2e-3

    @pytest.mark.parametrize("p", [0.3, 0.5])
    def test_dominates_solver_on_square(self, fixtures_dir, p):
        H = load_hypergraph(str(fixtures_dir / "square.json"))
        spec = TailSpec.relative(0.1)
        grid = phi_grid_oracle(H, p, spec)
        sol = solve_phi(H, p, spec)
        assert_feasible(H, p, spec, sol)
        assert sol.phi <= grid + 2e-3

    @pytest.mark.parametrize("p", [0.5, 0.8])
    def test_dominates_solver_on_shared_pair(self, p):
        H = shared_pair()
        spec = TailSpec.relative(0.1)
        grid = phi_grid_oracle(H, p, spec)
        sol = solve_phi(H, p, spec)
        assert_feasible(H, p, spec, sol)
        assert sol.phi <= grid + 2e-3

    @pytest.mark.parametrize("eta", [0.3, 0.7])
    def test_dominates_solver_on_weighted_triples(self, fixtures_dir, eta):
        H = load_hypergraph(str(fixtures_dir / "triple.json"))
        spec = TailSpec.relative(eta)
        grid = phi_grid_oracle(H, 0.5, spec, grid_step=0.02)
        assert solve_phi(H, 0.5, spec).phi <= grid + 2e-3

    def test_zero_threshold(self, fixtures_dir):
        H = load_hypergraph(str(fixtures_dir / "square.json"))
        grid = phi_grid_oracle(H, 0.5, TailSpec.relative(0.0), grid_step=0.05)
        assert grid == pytest.approx(phi_zero(H, 0.5), abs=1e-12)

    def test_budgets(self, k4_triangles):
        with pytest.raises(BudgetExceededError):
            phi_grid_oracle(k4_triangles, 0.5, TailSpec.relative(0.5))
        with pytest.raises(DomainError):
            phi_grid_oracle(single_edge(), 0.5, TailSpec.relative(0.5), grid_step=0.001)


class TestPhiZero:
    def test_single_edge(self):
        assert phi_zero(single_edge(3), 0.4) == pytest.approx(-math.log(0.6))

    def test_k4_triangles(self, k4_triangles):
        assert phi_zero(k4_triangles, 0.3) == pytest.approx(2 * math.log(1 / 0.7))

    def test_agrees_with_solver(self, k4_triangles, fixtures_dir):
        instances = [
            k4_triangles,
            ap_hypergraph(3, 5),
            load_hypergraph(str(fixtures_dir / "square.json")),
            load_hypergraph(str(fixtures_dir / "triple.json")),
        ]
        for H in instances:
            sol = solve_phi(H, 0.3, TailSpec.relative(0.0))
            assert abs(sol.phi - phi_zero(H, 0.3)) <= 1e-6

    def test_local_search_past_the_budget(self, monkeypatch, k4_triangles, fixtures_dir):
        instances = [k4_triangles, load_hypergraph(str(fixtures_dir / "square.json"))]
        exact = [phi_zero(H, 0.3) for H in instances]
        monkeypatch.setenv("INDEPENDENCE_VERTEX_BUDGET", "1")
        get_settings.cache_clear()
        for H, expected in zip(instances, exact):
            sol = solve_phi(H, 0.3, TailSpec.relative(0.0))
            assert sol.phi == pytest.approx(expected, abs=1e-12)
            assert sol.constraint_value == 0.0
            assert sol.status == "boundary_zero"
            assert sol.theta == 0.0

    def test_large_copy_hypergraph(self, triangle):
        H = copy_hypergraph(triangle, 10)
        sol = solve_phi(H, 0.3, TailSpec.relative(0.0))
        assert sol.constraint_value == 0.0
        assert sol.status == "boundary_zero"
        # A triangle-free graph on 10 vertices has at most 25 edges; a star already has 9
        unit = -math.log(0.7)
        assert 20 * unit - 1e-9 <= sol.phi <= 36 * unit + 1e-9


class TestCertificates:
    def test_k4_triangles(self, k4_triangles):
        certificate = phi_lower_certificate(k4_triangles, 0.3, 0.5)
        assert certificate == pytest.approx(0.025)
        assert certificate <= solve_phi(k4_triangles, 0.3, TailSpec.relative(0.5)).phi

    def test_regular_hypergraph(self):
        H = singletons([1.0] * 4)
        assert phi_lower_certificate(H, 0.2, 0.4) == pytest.approx(0.16 / 2 * 4 * 0.2)

    def test_vanishes_with_epsilon(self, k4_triangles):
        assert phi_lower_certificate(k4_triangles, 0.3, 1e-6) < 1e-12

    @pytest.mark.parametrize("epsilon", [0.0, 1.5])
    def test_domain(self, k4_triangles, epsilon):
        with pytest.raises(DomainError):
            phi_lower_certificate(k4_triangles, 0.3, epsilon)

    def test_below_solver_on_epsilon_grid(self, k4_triangles):
        instances = [k4_triangles, singletons([1.0, 2.0, 0.5])]
        for H in instances:
            for epsilon in [0.1 * i for i in range(1, 10)]:
                sol = solve_phi(H, 0.3, TailSpec.relative(1 - epsilon))
                assert phi_lower_certificate(H, 0.3, epsilon) <= sol.phi + 1e-8


class TestKKTResidual:
    def test_trivial_point(self, k4_triangles):
        spec = TailSpec.relative(1.0)
        sol = solve_phi(k4_triangles, 0.3, spec)
        assert kkt_residual(k4_triangles, 0.3, spec, sol) == pytest.approx(0.0, abs=1e-15)

    def test_perturbed_solution(self, k4_triangles):
        spec = TailSpec.relative(0.5)
        sol = solve_phi(k4_triangles, 0.3, spec)
        q = np.asarray(sol.q)
        q[0] += 0.01
        perturbed = sol.model_copy(update={"q": q.tolist()})
        assert kkt_residual(k4_triangles, 0.3, spec, perturbed) > 1e-4
