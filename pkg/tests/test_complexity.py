from __future__ import annotations

import math

import numpy as np
import pytest

from cvlearn.complexity.estimators import (
    ComplexityEstimate,
    all_sign_vectors,
    empirical_gaussian,
    empirical_local_rademacher,
    empirical_rademacher,
    exact_rademacher,
    factor_graph_rademacher,
    local_scales,
    rademacher_draws,
)
from cvlearn.complexity.inequalities import (
    check_contraction,
    check_gaussian_comparison,
    check_gaussian_comparison_linear,
    check_local_monotone,
    check_masked_leq,
    check_max_subadditivity,
    masked_max_values,
    stacked_ball_oracle,
)
from cvlearn.complexity.oracles import (
    FactoredLinearClass,
    FactorTerm,
    FiniteClassOracle,
    LabelSweepOracle,
    LinearBallOracle,
    MaskedLinearBallOracle,
    ProjectionClassOracle,
    ScaledOracle,
    dual_exponent,
    projected_ascent_sup,
    sup_linear_ball,
    sup_of,
)
from cvlearn.errors import DimensionMismatch, InvalidP


# -----------------------------
# oracles
# -----------------------------

class TestLinearBall:
    def test_examples(self):
        assert sup_linear_ball(np.zeros((3, 2)), np.ones((3, 4)), 2.0) == 0.0
        assert sup_linear_ball(np.array([[1.0]]), np.array([[1.0, 0.0]]), 2.0) == 1.0

    def test_dual_exponent(self):
        assert dual_exponent(2.0) == 2.0
        assert math.isinf(dual_exponent(1.0))
        assert dual_exponent(1.5) == pytest.approx(3.0)
        with pytest.raises(InvalidP):
            dual_exponent(2.5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sup_linear_ball(np.ones((3, 2)), np.ones((4, 2)), 2.0)

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_closed_form_matches_projected_ascent(self, p):
        rng = np.random.default_rng([7, int(10 * p)])
        for _ in range(30):
            m, K, D = (int(v) for v in rng.integers(1, 6, size=3))
            coeff = rng.normal(size=(m, K))
            features = rng.normal(size=(m, D))
            want = sup_linear_ball(coeff, features, p)
            got = projected_ascent_sup(coeff, features, p)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-6)

    def test_projected_ascent_climbs_from_a_moderate_step(self):
        # p = 1 で行ノルムが異なると, 初回の刻みでは最適な頂点に届かない
        coeff = np.eye(2)
        features = np.array([[3.0, 0.0], [0.0, 1.0]])
        want = sup_linear_ball(coeff, features, 1.0)
        assert want == pytest.approx(3.0)
        first = projected_ascent_sup(coeff, features, 1.0, steps=1)
        assert 0.0 < first < want - 1e-3
        assert projected_ascent_sup(coeff, features, 1.0) == pytest.approx(want, rel=1e-9)
        assert projected_ascent_sup(np.zeros((2, 2)), features, 1.0) == 0.0

    def test_oracle_matches_closed_form(self, rng):
        X = rng.normal(size=(6, 3))
        y = rng.integers(1, 4, size=6)
        oracle = LinearBallOracle(X, y, 3, p=1.5)
        c = rng.choice([-1.0, 1.0], size=6)
        coeff = np.zeros((6, 3))
        coeff[np.arange(6), y - 1] = c
        assert sup_of(oracle, c) == pytest.approx(sup_linear_ball(coeff, X, 1.5))

    def test_masked_oracle_adds_constant_for_forbidden_terms(self, rng):
        X = rng.normal(size=(4, 2))
        base = LinearBallOracle(X, np.array([1, 2, 1, 2]), 2)
        feasible = np.array([True, False, True, False])
        masked = MaskedLinearBallOracle(base, feasible, 5.0)
        c = np.array([1.0, -1.0, 1.0, -1.0])
        kept = np.array([1.0, 0.0, 1.0, 0.0])
        assert sup_of(masked, c) == pytest.approx(sup_of(base, kept) + 10.0)
        with pytest.raises(DimensionMismatch):
            MaskedLinearBallOracle(base, np.ones(3, dtype=bool), 5.0)

    def test_projection_class_is_l2_norm(self, rng):
        X = rng.normal(size=(5, 3))
        c = rng.normal(size=5)
        assert sup_of(ProjectionClassOracle(X), c) == pytest.approx(np.linalg.norm(c @ X))

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_label_sweep_matches_projection_class(self, rng, p):
        X = rng.normal(size=(6, 3))
        C = rng.normal(size=(8, 6))
        swept = LabelSweepOracle(X, 4, p).sup_batch(C)
        np.testing.assert_allclose(swept, ProjectionClassOracle(X).sup_batch(C), rtol=1e-12)

    def test_finite_class(self):
        with pytest.raises(ValueError):
            FiniteClassOracle(np.zeros((0, 3)))
        oracle = FiniteClassOracle(np.array([[1.0, 0.0], [0.0, 2.0]]))
        assert sup_of(oracle, [1.0, 1.0]) == 2.0
        assert sup_of(oracle, [1.0, -1.0]) == 1.0


# -----------------------------
# estimators
# -----------------------------

class TestRademacher:
    def test_draws_are_deterministic_and_prefix_stable(self):
        a = rademacher_draws(7, 20, seed=3)
        b = rademacher_draws(7, 20, seed=3)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(rademacher_draws(7, 10, seed=3), a[:10])
        assert set(np.unique(a)) <= {-1.0, 1.0}
        with pytest.raises(ValueError):
            rademacher_draws(3, 0, seed=0)

    def test_singleton_class_is_zero(self, rng):
        oracle = FiniteClassOracle(rng.normal(size=(1, 12)))
        est = empirical_rademacher(oracle, trials=4000, seed=1)
        assert abs(est.mean) <= 4 * est.std_error
        assert exact_rademacher(FiniteClassOracle(rng.normal(size=(1, 6)))).mean == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_pair(self, rng):
        g = rng.normal(size=9)
        oracle = FiniteClassOracle(np.vstack([g, -g]))
        sigma = rademacher_draws(9, 50, seed=2)
        np.testing.assert_allclose(oracle.sup_batch(sigma), np.abs(sigma @ g))

    def test_single_unit_term(self):
        oracle = LinearBallOracle(np.array([[1.0]]), np.array([1]), 1, p=2.0)
        est = empirical_rademacher(oracle, trials=100, seed=0)
        assert est.mean == 1.0
        assert est.std_error == 0.0
        assert est.kind == "rademacher"

    def test_same_seed_same_estimate(self, rng):
        oracle = LinearBallOracle(rng.normal(size=(10, 3)), rng.integers(1, 3, size=10), 2)
        a = empirical_rademacher(oracle, trials=200, seed=9)
        b = empirical_rademacher(oracle, trials=200, seed=9)
        assert a == b
        assert ComplexityEstimate.from_dict(a.to_dict()) == a
        assert set(a.to_dict()) == {"kind", "mean", "std_error", "trials", "seed"}

    def test_exact_enumeration(self):
        assert all_sign_vectors(3).shape == (8, 3)
        with pytest.raises(ValueError):
            all_sign_vectors(21)
        # {g, -g} with g = (1, 1): E|σ1 + σ2| = 1
        est = exact_rademacher(FiniteClassOracle(np.array([[1.0, 1.0], [-1.0, -1.0]])))
        assert est.mean == pytest.approx(1.0)
        assert est.kind == "rademacher_exact"


class TestGaussian:
    def test_singleton_class_is_zero(self, rng):
        est = empirical_gaussian(FiniteClassOracle(rng.normal(size=(1, 10))), trials=4000, seed=4)
        assert abs(est.mean) <= 4 * est.std_error

    def test_scaling(self, rng):
        base = LinearBallOracle(rng.normal(size=(8, 2)), rng.integers(1, 4, size=8), 3)
        a = empirical_gaussian(base, trials=300, seed=5)
        b = empirical_gaussian(ScaledOracle(base, 2.5), trials=300, seed=5)
        assert b.mean == pytest.approx(2.5 * a.mean, rel=1e-12)

    def test_includes_one_over_m(self):
        oracle = LinearBallOracle(np.ones((4, 1)), np.ones(4, dtype=int), 1)
        g = empirical_gaussian(oracle, trials=50, seed=0)
        unnormalized = empirical_gaussian(oracle, trials=50, seed=0, normalizer=1)
        assert g.mean == pytest.approx(unnormalized.mean / 4)

    def test_rademacher_below_scaled_gaussian(self, rng):
        values = rng.normal(size=(5, 10))
        oracle = FiniteClassOracle(values)
        r = empirical_rademacher(oracle, trials=4000, seed=6)
        g = empirical_gaussian(oracle, trials=4000, seed=7)
        c = math.sqrt(math.pi / 2) * 10
        assert r.mean <= c * g.mean + 4 * (r.std_error + c * g.std_error)


class TestLocalRademacher:
    def test_zero_radius(self, rng):
        values = rng.normal(size=(4, 6))
        est = empirical_local_rademacher(values, 0.0, trials=100, seed=0)
        assert est.mean == 0.0
        np.testing.assert_array_equal(local_scales(values, 0.0), np.zeros(4))

    def test_large_radius_is_plain_rademacher(self, rng):
        values = rng.normal(size=(4, 6))
        r = float(np.max(np.mean(values ** 2, axis=1))) + 1.0
        local = empirical_local_rademacher(values, r, trials=300, seed=8)
        # {a g : a ∈ [0, 1]} の sup は g と 0 の sup
        plain = empirical_rademacher(FiniteClassOracle(np.vstack([values, np.zeros((1, 6))])), trials=300, seed=8)
        assert local.mean == pytest.approx(plain.mean, rel=1e-12)
        assert local.extras["r"] == r

    def test_grid_never_exceeds_exact(self, rng):
        values = rng.normal(size=(5, 8))
        est = empirical_local_rademacher(values, 0.3, a_grid_size=11, trials=200, seed=1)
        assert est.extras["grid_mean"] <= est.mean + 1e-9

    def test_monotone_in_radius(self, rng):
        values = rng.normal(size=(6, 8))
        out = check_local_monotone(values, np.linspace(0.0, 3.0, 7), trials=200, seed=2)
        assert out["monotone"]
        assert out["means"][0] == 0.0

    def test_distribution_weights(self, rng):
        values = rng.normal(size=(3, 4))
        est = empirical_local_rademacher(values, 0.5, trials=50, seed=0, weights=np.array([0.1, 0.2, 0.3, 0.4]))
        assert est.kind == "local_rademacher_distribution"
        with pytest.raises(ValueError):
            empirical_local_rademacher(values, -0.1)


class TestFactorGraphRademacher:
    def test_single_unit_factor(self):
        oracle = FactoredLinearClass([FactorTerm(0, "f", 1, (1.0,))], 1)
        est = factor_graph_rademacher(oracle, trials=100, seed=0)
        assert est.mean == 1.0

    def test_zero_features(self):
        oracle = FactoredLinearClass([FactorTerm(0, "f", 2, (0.0, 0.0)), FactorTerm(1, "f", 2, (0.0, 0.0))], 2)
        assert factor_graph_rademacher(oracle, trials=50, seed=0).mean == 0.0

    def test_extra_zero_factor_scales_by_sqrt_count(self):
        one = FactoredLinearClass([FactorTerm(0, "u", 1, (1.0,))], 1)
        two = FactoredLinearClass([FactorTerm(0, "u", 1, (1.0,)), FactorTerm(0, "z", 1, (0.0,))], 1)
        assert factor_graph_rademacher(one, trials=50, seed=0).mean == 1.0
        assert factor_graph_rademacher(two, trials=50, seed=0).mean == pytest.approx(math.sqrt(2.0))

    def test_shared_chain_closed_form(self, rng):
        xs = [(0.5, -1.5)]
        oracle = FactoredLinearClass.for_shared_chain(xs, 2, 1)
        # emission 2 位置 x 2 ラベル + transition 1 x 4
        assert oracle.n_terms == 8
        eps = rng.choice([-1.0, 1.0], size=8)
        w = math.sqrt(3.0)
        V_e = w * (eps[0:2] * 0.5 + eps[2:4] * -1.5)
        V_t = w * eps[4:8]
        assert sup_of(oracle, eps) == pytest.approx(np.linalg.norm(V_e) + np.linalg.norm(V_t))

    def test_shared_chain_variable_lengths(self):
        xs = [tuple(range(6)), tuple(range(4))]
        oracle = FactoredLinearClass.for_shared_chain(xs, 2, 2)
        assert oracle.n_terms == (3 * 2 + 2 * 4) + (2 * 2 + 1 * 4)
        assert oracle.n_examples == 2

    def test_divides_by_examples(self):
        oracle = FactoredLinearClass([FactorTerm(0, "f", 1, (1.0,)), FactorTerm(1, "f", 1, (1.0,))], 2)
        sigma = rademacher_draws(2, 40, seed=3)
        est = factor_graph_rademacher(oracle, trials=40, seed=3)
        assert est.mean == pytest.approx(np.mean(np.abs(sigma.sum(axis=1))) / 2)


# -----------------------------
# inequality checks
# -----------------------------

class TestInequalities:
    def test_identical_oracles(self, rng):
        oracle = LinearBallOracle(rng.normal(size=(6, 2)), rng.integers(1, 3, size=6), 2)
        rep = check_masked_leq(oracle, oracle, trials=100, seed=0)
        assert rep.diff_mean == 0.0
        assert rep.holds
        assert rep.name == "masked_rademacher_leq"

    def test_masked_linear_ball(self, rng):
        m, K = 30, 3
        X = rng.normal(size=(m, 2))
        base = LinearBallOracle(X, rng.integers(1, K + 1, size=m), K)
        feasible = rng.uniform(size=m) < 0.7
        M = float(np.linalg.norm(X, axis=1).max()) + 1.0
        rep = check_masked_leq(base, MaskedLinearBallOracle(base, feasible, M), trials=4000, seed=1)
        assert rep.holds

    def test_masked_finite_class_exact(self, rng):
        values = rng.normal(size=(4, 8))
        feasible = rng.uniform(size=8) < 0.6
        masked = np.where(feasible[None, :], values, -3.0)
        rep = check_masked_leq(FiniteClassOracle(values), FiniteClassOracle(masked), exact=True)
        assert rep.exact
        assert rep.trials == 2 ** 8
        assert rep.holds

    def test_mismatched_samples(self):
        with pytest.raises(ValueError):
            check_masked_leq(FiniteClassOracle(np.ones((1, 3))), FiniteClassOracle(np.ones((1, 4))))

    def test_contraction_exact(self, rng):
        values = rng.normal(size=(3, 8))
        rep = check_contraction(values, 0.5, exact=True)
        assert rep.holds

    def test_max_subadditivity_exact(self, rng):
        rep = check_max_subadditivity(rng.normal(size=(3, 7)), rng.normal(size=(2, 7)), exact=True)
        assert rep.holds
        with pytest.raises(ValueError):
            check_max_subadditivity(np.ones((1, 3)), np.ones((1, 4)))

    def test_masked_max_values(self):
        values = np.array([[[1.0, 2.0], [3.0, -1.0]]])  # N=1, K=2, m=2
        feasible = np.array([[True, False], [True, True]])  # (m, K)
        np.testing.assert_array_equal(masked_max_values(values, feasible, 10.0), [[1.0, 2.0]])

    def test_gaussian_comparison_single_label(self, rng):
        values = rng.normal(size=(3, 1, 10))
        rep = check_gaussian_comparison(values, np.ones((10, 1), dtype=bool), 5.0, trials=4000, seed=3)
        assert rep.holds

    def test_gaussian_comparison_two_labels(self, rng):
        values = rng.normal(size=(4, 2, 10))
        feasible = rng.uniform(size=(10, 2)) < 0.7
        feasible[:, 0] = True
        rep = check_gaussian_comparison(values, feasible, 5.0, trials=4000, seed=4)
        assert rep.holds
        assert set(rep.to_dict()) >= {"name", "lhs_mean", "rhs_mean", "slack", "holds"}

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_gaussian_comparison_linear_ball(self, rng, p):
        X = rng.uniform(-1.0, 1.0, size=(10, 3))
        feasible = rng.uniform(size=(10, 3)) < 0.6
        feasible[:, 0] = True
        M = float(np.linalg.norm(X, axis=1).max()) + 1.0
        rep = check_gaussian_comparison_linear(X, feasible, 3, p, M, members=64, trials=2000, seed=5)
        assert rep.name == "gaussian_comparison_linear"
        assert rep.holds
        with pytest.raises(DimensionMismatch):
            check_gaussian_comparison_linear(X, feasible[:, :2], 3, p, M, trials=10)

    def test_stacked_ball_matches_closed_form(self, rng):
        X = rng.normal(size=(5, 2))
        g = rng.normal(size=3 * 5)
        coeff = g.reshape(3, 5).T  # coeff[i, j] = g[j * m + i]
        assert sup_of(stacked_ball_oracle(X, 3, 1.5), g) == pytest.approx(sup_linear_ball(coeff, X, 1.5))
