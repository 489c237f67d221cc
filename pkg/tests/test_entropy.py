import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

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
from lowertail.services import entropy
from lowertail.services.entropy import (
    bernoulli_from_mass,
    binomial_tail_bound,
    condition_on_event,
    conditional_entropy,
    conditional_p_divergence,
    key_lemma_gap,
    kl_divergence,
    log_sum_gap,
    marginal_p_divergences,
    mutual_information,
    p_divergence,
    pinsker_gap,
    relative_entropy_bernoulli,
    relative_entropy_bernoulli_derivatives,
    shannon_entropy,
    total_variation,
)
from tests.conftest import random_joint

GRID = [round(0.1 * i, 1) for i in range(1, 10)]
interior = st.floats(min_value=1e-3, max_value=1 - 1e-3)
unit = st.floats(min_value=0.0, max_value=1.0)


class TestDistributions:
    def test_mass_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            FiniteDistribution(mass=[0.5, 0.5 + 1e-10])

    def test_tolerance_does_not_grow_with_support(self):
        FiniteDistribution(mass=[1 / 1000] * 1000)
        with pytest.raises(ValidationError):
            FiniteDistribution(mass=[1 / 1000] * 999 + [1 / 1000 + 5e-10])

    def test_joint_table_tolerance(self):
        JointBinaryDistribution(mass=[[0.01] * 50, [0.01] * 50])
        with pytest.raises(ValidationError):
            JointBinaryDistribution(mass=[[0.01] * 50, [0.01] * 49 + [0.01 + 5e-11]])


class TestRelativeEntropyBernoulli:
    def test_zero_at_reference(self):
        assert relative_entropy_bernoulli(0.5, 0.5) == 0.0

    def test_at_zero_is_minus_log_one_minus_p(self):
        assert relative_entropy_bernoulli(0.0, 0.5) == pytest.approx(math.log(2), abs=1e-12)

    def test_closed_form_value(self):
        assert relative_entropy_bernoulli(0.25, 0.5) == pytest.approx(0.130812, abs=1e-6)

    def test_accepts_bernoulli_params(self):
        value = relative_entropy_bernoulli(BernoulliParam(value=0.25), BernoulliParam(value=0.5))
        assert value == pytest.approx(relative_entropy_bernoulli(0.25, 0.5))

    @pytest.mark.parametrize("p", [0.0, 1.0])
    def test_rejects_degenerate_reference(self, p):
        with pytest.raises(DomainError):
            relative_entropy_bernoulli(0.5, p)

    def test_rejects_out_of_range_q(self):
        with pytest.raises(ValidationError):
            relative_entropy_bernoulli(1.5, 0.5)

    @given(q=unit, p=interior)
    def test_nonnegative(self, q, p):
        assert relative_entropy_bernoulli(q, p) >= 0.0

    @given(q=unit, p=interior)
    def test_positive_away_from_p(self, q, p):
        if abs(q - p) > 1e-3:
            assert relative_entropy_bernoulli(q, p) > 0.0


class TestDerivatives:
    def test_vanishes_at_p(self):
        first, second = relative_entropy_bernoulli_derivatives(0.3, 0.3)
        assert first == pytest.approx(0.0, abs=1e-15)
        assert second == pytest.approx(1 / 0.3 + 1 / 0.7)

    @pytest.mark.parametrize("p", GRID)
    def test_second_derivative_at_half(self, p):
        assert relative_entropy_bernoulli_derivatives(0.5, p)[1] == pytest.approx(4.0)

    def test_first_derivative_value(self):
        first, _ = relative_entropy_bernoulli_derivatives(0.25, 0.5)
        assert first == pytest.approx(math.log(0.5) - math.log(1.5), abs=1e-12)
        assert first == pytest.approx(-1.098612, abs=1e-6)

    @pytest.mark.parametrize("q", [0.0, 1.0])
    def test_rejects_boundary(self, q):
        with pytest.raises(DomainError):
            relative_entropy_bernoulli_derivatives(q, 0.5)

    @pytest.mark.parametrize("q", GRID)
    @pytest.mark.parametrize("p", GRID)
    def test_matches_central_difference(self, q, p):
        h = 1e-6
        numeric = (
            relative_entropy_bernoulli(q + h, p) - relative_entropy_bernoulli(q - h, p)
        ) / (2 * h)
        assert relative_entropy_bernoulli_derivatives(q, p)[0] == pytest.approx(numeric, abs=1e-6)


class TestKLDivergence:
    def test_equal_uniform(self):
        U = FiniteDistribution(mass=[0.25] * 4)
        assert kl_divergence(U, U) == 0.0

    @given(q=unit, p=interior)
    def test_consistent_with_bernoulli(self, q, p):
        value = kl_divergence(bernoulli_from_mass(q), bernoulli_from_mass(p))
        assert value == pytest.approx(relative_entropy_bernoulli(q, p), abs=1e-12)

    @pytest.mark.parametrize("n", [2, 5, 17])
    def test_point_mass_against_uniform(self, n):
        point = FiniteDistribution(mass=[1.0] + [0.0] * (n - 1))
        uniform = FiniteDistribution(mass=[1.0 / n] * n)
        assert kl_divergence(point, uniform) == pytest.approx(math.log(n), rel=1e-12)

    def test_absolute_continuity_violation(self):
        with pytest.raises(AbsoluteContinuityError):
            kl_divergence(
                FiniteDistribution(mass=[0.5, 0.5]), FiniteDistribution(mass=[1.0, 0.0])
            )

    def test_support_size_mismatch(self):
        with pytest.raises(DomainError):
            kl_divergence(FiniteDistribution(mass=[1.0]), FiniteDistribution(mass=[0.5, 0.5]))

    def test_rounding_below_zero_is_clamped(self, monkeypatch):
        monkeypatch.setattr(entropy, "rel_entr", lambda p, q: np.full(np.shape(p), -1e-14))
        U = FiniteDistribution(mass=[0.5, 0.5])
        assert kl_divergence(U, U) == 0.0

    def test_negative_sum_raises(self, monkeypatch):
        monkeypatch.setattr(entropy, "rel_entr", lambda p, q: np.full(np.shape(p), -1e-6))
        U = FiniteDistribution(mass=[0.5, 0.5])
        with pytest.raises(NumericalError):
            kl_divergence(U, U)

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(200):
            size = int(rng.integers(1, 8))
            P = FiniteDistribution(mass=rng.dirichlet(np.ones(size)).tolist())
            Q = FiniteDistribution(mass=rng.dirichlet(np.ones(size)).tolist())
            assert kl_divergence(P, Q) >= 0.0

    def test_conditioning_identity(self, rng):
        for _ in range(200):
            size = int(rng.integers(2, 10))
            Q = FiniteDistribution(mass=rng.dirichlet(np.ones(size)).tolist())
            event = [i for i in range(size) if rng.random() < 0.5] or [0]
            prob = sum(Q.mass[i] for i in event)
            value = kl_divergence(condition_on_event(Q, event), Q)
            assert value == pytest.approx(-math.log(prob), rel=1e-10, abs=1e-14)

    def test_conditioning_on_null_event(self):
        with pytest.raises(ZeroProbabilityError):
            condition_on_event(FiniteDistribution(mass=[1.0, 0.0]), [1])


class TestEntropies:
    def test_point_mass(self):
        assert shannon_entropy(FiniteDistribution(mass=[0.0, 1.0, 0.0])) == 0.0

    def test_fair_coin(self):
        assert shannon_entropy(FiniteDistribution(mass=[0.5, 0.5])) == pytest.approx(math.log(2))

    def test_bernoulli_quarter(self):
        assert shannon_entropy(bernoulli_from_mass(0.25)) == pytest.approx(0.562335, abs=1e-6)

    def test_bounded_by_log_support(self, rng):
        for _ in range(100):
            size = int(rng.integers(1, 12))
            P = FiniteDistribution(mass=rng.dirichlet(np.ones(size)).tolist())
            assert 0.0 <= shannon_entropy(P) <= math.log(size) + 1e-12

    def test_conditional_entropy_of_independent_pair(self):
        px, pz = [0.3, 0.7], [0.2, 0.5, 0.3]
        J = JointBinaryDistribution(mass=np.outer(px, pz).tolist())
        assert conditional_entropy(J) == pytest.approx(
            shannon_entropy(FiniteDistribution(mass=px)), abs=1e-12
        )
        assert mutual_information(J) == pytest.approx(0.0, abs=1e-12)

    def test_conditional_entropy_of_function(self):
        J = JointBinaryDistribution(mass=[[0.2, 0.0, 0.3], [0.0, 0.5, 0.0]])
        assert conditional_entropy(J) == pytest.approx(0.0, abs=1e-15)

    def test_conditional_entropy_matches_definition(self, rng):
        for _ in range(50):
            J = random_joint(rng, 3)
            table = np.asarray(J.mass)
            expected = 0.0
            for z in range(3):
                pz = table[0, z] + table[1, z]
                for x in range(2):
                    cond = table[x, z] / pz
                    expected -= pz * cond * math.log(cond)
            assert conditional_entropy(J) == pytest.approx(expected, abs=1e-12)
            hx = shannon_entropy(FiniteDistribution(mass=table.sum(axis=1).tolist()))
            assert conditional_entropy(J) <= hx + 1e-12

    def test_null_columns_contribute_nothing(self):
        J = JointBinaryDistribution(mass=[[0.25, 0.0], [0.75, 0.0]])
        assert conditional_entropy(J) == pytest.approx(
            shannon_entropy(bernoulli_from_mass(0.75))
        )


class TestTotalVariationAndPinsker:
    def test_identical(self):
        P = FiniteDistribution(mass=[0.1, 0.9])
        assert total_variation(P, P) == 0.0

    def test_disjoint_point_masses(self):
        assert total_variation(
            FiniteDistribution(mass=[1.0, 0.0]), FiniteDistribution(mass=[0.0, 1.0])
        ) == pytest.approx(1.0)

    def test_bernoullis(self):
        assert total_variation(bernoulli_from_mass(0.2), bernoulli_from_mass(0.5)) == pytest.approx(
            0.3
        )

    def test_independent_pair(self):
        J = JointBinaryDistribution(mass=np.outer([0.4, 0.6], [0.5, 0.5]).tolist())
        lhs, rhs = pinsker_gap(J)
        assert lhs == pytest.approx(0.0, abs=1e-12)
        assert rhs == pytest.approx(0.0, abs=1e-12)

    def test_correlated_fair_bits(self):
        J = JointBinaryDistribution(mass=[[0.5, 0.0], [0.0, 0.5]])
        lhs, rhs = pinsker_gap(J)
        assert lhs == pytest.approx(0.25)
        assert rhs == pytest.approx(2 * math.log(2))

    def test_random_joints(self, rng):
        for _ in range(1000):
            lhs, rhs = pinsker_gap(random_joint(rng, int(rng.integers(1, 6))))
            assert lhs <= rhs + 1e-12


class TestLogSum:
    def test_equal_vectors(self):
        assert log_sum_gap([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(0.0, abs=1e-12)

    def test_worked_value(self):
        assert log_sum_gap([2.0, 2.0], [1.0, 3.0]) == pytest.approx(0.575364, abs=1e-6)

    def test_proportional(self):
        assert log_sum_gap([1.0, 4.0, 0.0], [0.5, 2.0, 0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_mass_where_a_vanishes(self):
        # b = (0.5, 2, 3) against a = (1, 4, 0): 5 log 2 - 5 log(5 / 5.5)
        expected = 5 * math.log(2) - 5 * math.log(5 / 5.5)
        assert log_sum_gap([1.0, 4.0, 0.0], [0.5, 2.0, 3.0]) == pytest.approx(expected)

    def test_support_violation(self):
        with pytest.raises(SupportViolationError):
            log_sum_gap([1.0, 1.0], [1.0, 0.0])

    def test_negative_entries(self):
        with pytest.raises(DomainError):
            log_sum_gap([-1.0, 1.0], [1.0, 1.0])

    @given(
        st.lists(
            st.tuples(st.floats(0.0, 10.0), st.floats(1e-3, 10.0)), min_size=1, max_size=8
        )
    )
    def test_nonnegative(self, pairs):
        a, b = zip(*pairs)
        assert log_sum_gap(a, b) >= 0.0


class TestConditionalPDivergence:
    def test_independent(self):
        J = JointBinaryDistribution(mass=np.outer([0.7, 0.3], [0.25, 0.75]).tolist())
        assert conditional_p_divergence(J, 0.4) == pytest.approx(
            relative_entropy_bernoulli(0.3, 0.4), abs=1e-12
        )

    def test_equal_fair_bits(self):
        J = JointBinaryDistribution(mass=[[0.5, 0.0], [0.0, 0.5]])
        assert conditional_p_divergence(J, 0.5) == pytest.approx(math.log(2))

    def test_conditioning_increases_divergence(self, rng):
        for _ in range(500):
            J = random_joint(rng, int(rng.integers(1, 6)))
            p = float(rng.uniform(0.05, 0.95))
            mu = min(sum(J.mass[1]), 1.0)
            assert conditional_p_divergence(J, p) >= relative_entropy_bernoulli(mu, p) - 1e-12

    def test_superadditivity(self, rng):
        for _ in range(500):
            law = rng.dirichlet(np.ones(4))
            p = float(rng.uniform(0.05, 0.95))
            joint = p_divergence(law.tolist(), p)
            assert joint >= sum(marginal_p_divergences(law.tolist(), p)) - 1e-12

    def test_superadditivity_equality_for_products(self):
        a, b, p = 0.2, 0.7, 0.4
        # state x = x0 + 2 x1
        law = [(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b]
        assert p_divergence(law, p) == pytest.approx(
            sum(marginal_p_divergences(law, p)), abs=1e-12
        )

    def test_law_size_must_be_power_of_two(self):
        with pytest.raises(DomainError):
            p_divergence([0.5, 0.25, 0.25], 0.5)


class TestKeyLemma:
    def test_no_events(self, rng):
        lhs, rhs = key_lemma_gap(random_joint(rng, 3), [], 0.5, 1.0)
        assert rhs == 0.0
        assert lhs >= rhs

    def test_x_identically_zero(self):
        J = JointBinaryDistribution(mass=[[0.3, 0.7], [0.0, 0.0]])
        lhs, rhs = key_lemma_gap(J, [[0], [0, 1]], 0.3, 0.1)
        assert lhs == pytest.approx(0.0, abs=1e-15)
        assert lhs >= rhs

    def test_precondition_violation(self):
        J = JointBinaryDistribution(mass=[[0.4, 0.1], [0.1, 0.4]])
        with pytest.raises(PreconditionError):
            key_lemma_gap(J, [[0]], 0.5, 0.5)

    def test_negative_divergence_gap_raises(self, monkeypatch):
        monkeypatch.setattr(entropy, "conditional_p_divergence", lambda J, p: 0.0)
        J = JointBinaryDistribution(mass=[[0.3, 0.3], [0.2, 0.2]])
        with pytest.raises(NumericalError):
            key_lemma_gap(J, [[0]], 0.5, 0.5)

    def test_event_outside_alphabet(self):
        J = JointBinaryDistribution(mass=[[0.5, 0.3], [0.1, 0.1]])
        with pytest.raises(DomainError):
            key_lemma_gap(J, [[2]], 0.5, 0.9)

    def test_random_disjoint_events(self, rng):
        for _ in range(1000):
            width = int(rng.integers(2, 7))
            J = random_joint(rng, width)
            table = np.asarray(J.mass)
            p_prime = float((table[1] / table.sum(axis=0)).max())
            labels = rng.integers(-1, 3, size=width)
            events = [np.flatnonzero(labels == i).tolist() for i in range(3)]
            lhs, rhs = key_lemma_gap(J, events, float(rng.uniform(0.05, 0.95)), p_prime)
            assert lhs >= rhs - 1e-12

    def test_random_overlapping_events(self, rng):
        for _ in range(300):
            width = int(rng.integers(2, 6))
            J = random_joint(rng, width)
            table = np.asarray(J.mass)
            p_prime = float((table[1] / table.sum(axis=0)).max())
            events = [
                [z for z in range(width) if rng.random() < 0.5] for _ in range(3)
            ]
            lhs, rhs = key_lemma_gap(J, events, 0.5, p_prime)
            assert lhs >= rhs - 1e-12


class TestBinomialTail:
    def test_tight_at_zero(self):
        bound, exact = binomial_tail_bound(10, 0.3, 0.0)
        assert exact == pytest.approx(0.7**10, rel=1e-12)
        assert bound == pytest.approx(exact, rel=1e-12)

    def test_at_mean(self):
        bound, exact = binomial_tail_bound(10, 0.5, 0.5)
        assert bound == pytest.approx(1.0)
        assert exact <= bound

    def test_worked_example(self):
        bound, exact = binomial_tail_bound(20, 0.5, 0.25)
        assert exact == pytest.approx(21700 / 2**20, rel=1e-10)
        assert exact == pytest.approx(0.0207, abs=1e-4)
        assert bound == pytest.approx(0.0731, abs=1e-4)

    def test_rejects_q_above_p(self):
        with pytest.raises(DomainError):
            binomial_tail_bound(10, 0.3, 0.5)

    def test_rejects_empty_trial_count(self):
        with pytest.raises(DomainError):
            binomial_tail_bound(0, 0.3, 0.1)

    def test_domination_grid(self):
        for n in range(1, 31):
            for p in GRID:
                for step in range(int(round(p / 0.05)) + 1):
                    q = min(0.05 * step, p)
                    bound, exact = binomial_tail_bound(n, p, q)
                    assert exact <= bound * (1 + 1e-12)
