from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import flat_requirement, forbid_rule
from cvlearn.domain.hypotheses import LabelTable, ScoringHypothesis, TabulatedHypothesis, margin
from cvlearn.domain.losses import (
    FiniteDistribution,
    Sample,
    additive_surrogate_loss,
    empirical_margin_loss,
    empirical_zero_one_loss,
    empirical_zero_one_with_split,
    exact_risk,
    exact_surrogate_risk,
    hamming_loss,
    multiplicative_surrogate_loss,
    phi_rho,
    phi_star,
    structured_hamming_loss,
    zero_one_from_margin,
    zero_one_loss,
)
from cvlearn.domain.requirements import Requirement
from cvlearn.errors import LengthMismatch, NonpositiveRho
from cvlearn.harness.generators import random_chain_model, random_flat_requirement
from cvlearn.structured.decoding import loss_augmented_max
from cvlearn.structured.factor_graph import chain_model
from cvlearn.verifier.concurrent import Strategy, wrap

X0, X1 = (0.0,), (1.0,)


class TestSamples:
    def test_sample_validation(self):
        with pytest.raises(ValueError):
            Sample(())
        with pytest.raises(ValueError):
            Sample((((0.0,), 1), ((1.0,), (1, 2))))
        with pytest.raises(LengthMismatch):
            Sample.from_pairs([(0.0,)], [1, 2])
        S = Sample.from_pairs([(0.0,), (1.0,)], [(1, 2), (2, 2)])
        assert S.structured and S.m == 2
        assert S.xs.shape == (2, 1)

    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            FiniteDistribution(((X0, 1, 0.5), (X1, 1, 0.4)))
        with pytest.raises(ValueError):
            FiniteDistribution(((X0, 1, 1.5), (X1, 1, -0.5)))
        D = FiniteDistribution(((X0, 1, 0.25), (X0, 2, 0.25), (X1, 1, 0.5)))
        assert D.inputs() == [X0, X1]
        S = D.sample(7, np.random.default_rng(0))
        assert S.m == 7


class TestZeroOne:
    def test_zero_one_loss(self):
        f = LabelTable({X0: 1}, 2)
        assert zero_one_loss(f, X0, 1) == 0
        assert zero_one_loss(f, X0, 2) == 1

    def test_zero_margin_counts_as_error(self):
        h = TabulatedHypothesis({X0: (0.5, 0.5)}, 2)
        assert zero_one_loss(h, X0, 1) == 0
        assert zero_one_from_margin(h, X0, 1) == 1

    def test_exact_risk_examples(self):
        f = LabelTable({X0: 1, X1: 1}, 2)
        point = FiniteDistribution(((X0, 1, 1.0),))
        assert exact_risk(f, point) == 0.0
        uniform = FiniteDistribution(((X0, 1, 0.5), (X1, 2, 0.5)))
        assert exact_risk(f, uniform) == 0.5

    def test_bayes_optimal_is_minimal(self):
        xs = [(0.0,), (1.0,), (2.0,)]
        D = FiniteDistribution((
            (xs[0], 1, 0.2), (xs[0], 2, 0.1),
            (xs[1], 1, 0.05), (xs[1], 2, 0.25),
            (xs[2], 1, 0.2), (xs[2], 2, 0.2),
        ))
        bayes = D.bayes_optimal(2)
        assert bayes.predict(xs[2]) == 1  # 同点は最小ラベル
        best = exact_risk(bayes, D)
        for labels in itertools.product((1, 2), repeat=3):
            other = LabelTable(dict(zip(xs, labels)), 2)
            assert best <= exact_risk(other, D) + 1e-15
        assert best == pytest.approx(0.35)

    def test_empirical_risk_converges(self):
        f = LabelTable({X0: 1, X1: 1}, 2)
        D = FiniteDistribution(((X0, 1, 0.3), (X1, 2, 0.7)))
        risk = exact_risk(f, D)
        m = 10_000
        S = D.sample(m, np.random.default_rng(2024))
        se = math.sqrt(risk * (1 - risk) / m)
        assert abs(empirical_zero_one_loss(f, S) - risk) <= 5 * se


class TestMarginLoss:
    def test_phi_rho_examples(self):
        assert phi_rho(0.0, 2.0) == 1.0
        assert phi_rho(2.0, 2.0) == 0.0
        assert phi_rho(1.0, 2.0) == 0.5
        assert phi_rho(-3.0, 2.0) == 1.0
        np.testing.assert_allclose(phi_rho(np.array([0.0, 1.0, 5.0]), 2.0), [1.0, 0.5, 0.0])
        with pytest.raises(NonpositiveRho):
            phi_rho(0.0, 0.0)

    def test_phi_rho_is_lipschitz(self, rng):
        rho = 0.7
        a = rng.uniform(-3.0, 3.0, size=10_000)
        b = rng.uniform(-3.0, 3.0, size=10_000)
        gap = np.abs(phi_rho(a, rho) - phi_rho(b, rho))
        assert np.all(gap <= np.abs(a - b) / rho + 1e-12)

    def test_empirical_margin_loss_examples(self):
        rho = 1.0
        h = ScoringHypothesis(np.eye(2))
        S = Sample((((0.5, 0.0), 1), ((2.0, 0.0), 1)))
        assert empirical_margin_loss(h, S, rho) == pytest.approx(0.25)
        wide = Sample((((1.0, 0.0), 1), ((3.0, 0.0), 1)))
        assert empirical_margin_loss(h, wide, rho) == 0.0
        wrong = Sample((((1.0, 0.0), 2), ((0.0, 0.0), 1)))
        assert empirical_margin_loss(h, wrong, rho) == 1.0
        with pytest.raises(NonpositiveRho):
            empirical_margin_loss(h, S, -1.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
    def test_margin_loss_dominates_zero_one(self, seed, rho):
        rng = np.random.default_rng(seed)
        h = ScoringHypothesis(rng.normal(size=(3, 2)))
        x = tuple(rng.uniform(-1.0, 1.0, size=2))
        for y in (1, 2, 3):
            assert zero_one_from_margin(h, x, y) <= phi_rho(margin(h, x, y), rho)


class TestSplitLoss:
    def test_trivial_requirement(self, rng):
        h = ScoringHypothesis(rng.normal(size=(3, 2)))
        X = rng.uniform(-1.0, 1.0, size=(30, 2))
        S = Sample.from_pairs(X, rng.integers(1, 4, size=30))
        vh = wrap(h, Requirement.trivial(3), inputs_for_M=X)
        split = empirical_zero_one_with_split(vh, S)
        assert split.n_s0 == 0
        assert split.loss == empirical_zero_one_loss(h, S)

    def test_violating_example_always_counts(self):
        req = flat_requirement(2, forbid_rule(0, "<", 0.5, {2}))
        S = Sample(((X0, 2), (X1, 1)))
        for scores in ((0.0, 1.0), (1.0, 0.0)):
            h = TabulatedHypothesis({X0: scores, X1: (1.0, 0.0)}, 2)
            split = empirical_zero_one_with_split(wrap(h, req, inputs_for_M=[X0, X1]), S)
            assert split.n_s0 == 1
            assert split.loss == 0.5

    @given(st.integers(0, 2**32 - 1), st.sampled_from(list(Strategy)))
    def test_split_matches_direct_loss_and_budget(self, seed, strategy):
        rng = np.random.default_rng(seed)
        K = 3
        h = ScoringHypothesis(rng.normal(size=(K, 2)))
        X = rng.uniform(-1.0, 1.0, size=(25, 2))
        req = random_flat_requirement(rng, K, 2, X)
        S = Sample.from_pairs(X, rng.integers(1, K + 1, size=25))
        vh = wrap(h, req, strategy, inputs_for_M=X)
        split = empirical_zero_one_with_split(vh, S)
        assert split.loss == empirical_zero_one_loss(vh, S)
        assert split.queries <= K * split.n_s1 + split.n_s0
        assert vh.query_report().loss == split.queries


class TestStructuredLosses:
    def test_hamming(self):
        assert hamming_loss((1, 2, 3), (1, 2, 3)) == 0.0
        assert hamming_loss((1, 1), (2, 2)) == 1.0
        assert hamming_loss((1, 2, 3), (1, 2, 4)) == pytest.approx(1 / 3)
        with pytest.raises(LengthMismatch):
            hamming_loss((1,), (1, 2))

    def test_phi_star(self):
        B = 2.0
        assert phi_star(-1.0, B) == 0.0
        assert phi_star(B + 1.0, B) == B
        assert phi_star(B / 2, B) == B / 2
        with pytest.raises(ValueError):
            phi_star(0.0, -1.0)

    @pytest.mark.parametrize(
        "scores, expected",
        [((1.0, 0.0), 0.0), ((0.0, 1.0), 1.0)],
    )
    def test_flat_toy(self, scores, expected):
        h = TabulatedHypothesis({X0: scores}, 2)
        S = Sample(((X0, 1),))
        assert additive_surrogate_loss(h, S, 1.0) == expected
        assert multiplicative_surrogate_loss(h, S, 1.0) == expected

    @pytest.mark.parametrize(
        "unary, expected",
        [([1.0, 0.0], 0.0), ([0.0, 1.0], 1.0)],
    )
    def test_chain_of_one_toy(self, unary, expected):
        h = chain_model([unary], [])
        S = Sample(((X0, (1,)),))
        assert additive_surrogate_loss(h, S, 1.0) == pytest.approx(expected)
        assert multiplicative_surrogate_loss(h, S, 1.0) == pytest.approx(expected)

    def test_single_sequence_alphabet(self):
        h = chain_model([[0.5]], [])
        S = Sample(((X0, (1,)),))
        assert loss_augmented_max(h, X0, (1,), 1.0) == -np.inf
        assert additive_surrogate_loss(h, S, 1.0) == 0.0
        assert multiplicative_surrogate_loss(h, S, 1.0) == 0.0

    def test_large_margins_clamp_to_zero(self):
        h = chain_model([[5.0, 0.0], [5.0, 0.0]], [np.zeros((2, 2))])
        S = Sample(((X0, (1, 1)),))
        assert additive_surrogate_loss(h, S, 1.0) == 0.0

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 4.0))
    def test_task_loss_below_surrogates(self, seed, rho):
        rng = np.random.default_rng(seed)
        model = random_chain_model(rng, 2, 1)
        x = tuple(rng.integers(-2, 3, size=3).astype(float))
        y = tuple(int(v) for v in rng.integers(1, 3, size=3))
        task = structured_hamming_loss(model, x, y)
        for mode in ("add", "mult"):
            sur = phi_star(loss_augmented_max(model, x, y, rho, mode=mode), 1.0)
            assert task <= sur + 1e-12

    def test_exact_surrogate_risk_on_uniform_support(self, rng):
        model = random_chain_model(rng, 2, 1)
        xs = [(1.0, -1.0), (0.0, 2.0)]
        ys = [(1, 2), (2, 2)]
        D = FiniteDistribution(tuple((x, y, 0.5) for x, y in zip(xs, ys)))
        S = Sample.from_pairs(xs, ys)
        for mode, fn in (("add", additive_surrogate_loss), ("mult", multiplicative_surrogate_loss)):
            assert exact_surrogate_risk(model, D, 1.0, mode=mode) == pytest.approx(fn(model, S, 1.0))
        assert exact_risk(model, D, loss_fn=structured_hamming_loss) <= exact_surrogate_risk(model, D, 1.0) + 1e-12
