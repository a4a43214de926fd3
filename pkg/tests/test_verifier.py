from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import flat_requirement, forbid_rule
from cvlearn.domain.hypotheses import (
    LabelTable,
    ScoringHypothesis,
    TabulatedHypothesis,
    margin,
    predict,
)
from cvlearn.domain.requirements import (
    FLAT,
    STRUCTURED,
    AtomicPredicate,
    Requirement,
    Rule,
    evaluate,
    feasibility_matrix,
    feasible_labels,
)
from cvlearn.errors import InfeasibleInput, KindMismatch, MaskConstantViolated
from cvlearn.harness.generators import random_flat_requirement
from cvlearn.verifier.concurrent import (
    QueryCounter,
    Strategy,
    infer,
    mask_score_matrix,
    mask_scores,
    mask_constant_over,
    query_report,
    verified_label_matrix,
    wrap,
)

STRATEGIES = [Strategy.MIN_INDEX, Strategy.CONSTRAINED_ARGMAX]


def identity_h(K: int) -> ScoringHypothesis:
    return ScoringHypothesis(np.eye(K))


@st.composite
def wrapped_instances(draw):
    """(h, c, X) で c が X のすべての入力で実行可能なもの."""
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 5))
    d = 3
    h = ScoringHypothesis(rng.normal(size=(K, d)))
    X = rng.uniform(-1.0, 1.0, size=(6, d))
    req = random_flat_requirement(rng, K, d, X)
    return h, req, X


class TestWrap:
    def test_trivial_requirement_is_identity(self, rng):
        h = ScoringHypothesis(rng.normal(size=(3, 2)))
        X = rng.uniform(-1.0, 1.0, size=(20, 2))
        for strategy in STRATEGIES:
            vh = wrap(h, Requirement.trivial(3), strategy, inputs_for_M=X)
            assert [vh.predict(x) for x in X] == [h.predict(x) for x in X]

    def test_mask_constant_from_reference_inputs(self):
        h = ScoringHypothesis(np.eye(2))
        vh = wrap(h, Requirement.trivial(2), inputs_for_M=[(0.9, 0.1), (-0.5, 0.3)])
        assert vh.mask_constant == pytest.approx(1.9)
        assert mask_constant_over(h, []) == 1.0

    def test_infeasible_reference_input(self):
        req = flat_requirement(2, forbid_rule(0, ">", 0.0, {1, 2}))
        with pytest.raises(InfeasibleInput) as e:
            wrap(identity_h(2), req, inputs_for_M=[(-1.0, 0.0), (1.0, 0.0)])
        assert e.value.report.violations == (1,)
        assert e.value.inputs == [(1.0, 0.0)]

    def test_rejects_mismatches(self):
        with pytest.raises(KindMismatch):
            wrap(identity_h(2), Requirement.trivial(2, kind=STRUCTURED))
        with pytest.raises(ValueError):
            wrap(identity_h(2), Requirement.trivial(3))
        with pytest.raises(TypeError):
            wrap(LabelTable({(0.0,): 1}, 2), Requirement.trivial(2), Strategy.CONSTRAINED_ARGMAX)
        # min_index はラベルだけの予測器でも包める
        vh = wrap(LabelTable({(0.0,): 1}, 2), Requirement.trivial(2), "min_index")
        assert vh.predict((0.0,)) == 1


class TestInfer:
    def test_feasible_prediction_is_kept(self):
        vh = wrap(identity_h(3), Requirement.trivial(3))
        res = infer(vh, (0.9, 0.1, 0.5))
        assert (res.label, res.queries_used) == (1, 1)

    def test_min_index_fallback(self):
        req = flat_requirement(3, forbid_rule(0, ">", 0.5, {1}))
        vh = wrap(identity_h(3), req, Strategy.MIN_INDEX)
        res = vh.infer((0.9, 0.1, 0.5))
        assert res.label == 2
        assert res.queries_used == 2

    def test_constrained_argmax_fallback(self):
        req = flat_requirement(3, forbid_rule(0, ">", 0.5, {1}))
        vh = wrap(identity_h(3), req, Strategy.CONSTRAINED_ARGMAX)
        res = vh.infer((0.9, 0.1, 0.5))
        assert res.label == 3
        assert res.queries_used <= 3

    def test_query_report(self):
        req = flat_requirement(3, forbid_rule(0, ">", 0.5, {1}))
        vh = wrap(identity_h(3), req, Strategy.MIN_INDEX)
        assert query_report(vh).total == 0
        vh.infer((0.9, 0.1, 0.5))
        vh.infer((0.1, 0.9, 0.5))
        rep = query_report(vh)
        assert rep.inference == 3
        assert rep.loss == 0
        assert rep.infer_calls == 2
        assert rep.max_per_infer == 2

    def test_infeasible_at_inference(self):
        req = flat_requirement(2, forbid_rule(0, ">", 0.0, {1, 2}))
        vh = wrap(identity_h(2), req, inputs_for_M=[(-1.0, 0.0)])
        with pytest.raises(InfeasibleInput):
            vh.infer((1.0, 0.0))
        assert vh.query_report().max_per_infer == 2

    @given(wrapped_instances())
    def test_output_is_always_feasible_and_within_k_queries(self, inst):
        h, req, X = inst
        for strategy in STRATEGIES:
            vh = wrap(h, req, strategy, inputs_for_M=X)
            for x in X:
                res = vh.infer(x)
                assert evaluate(req, x, res.label) == 1
                assert 1 <= res.queries_used <= req.K
                if evaluate(req, x, h.predict(x)):
                    assert res.label == h.predict(x)
            assert vh.query_report().max_per_infer <= req.K

    @given(wrapped_instances())
    def test_constrained_argmax_is_argmax_over_feasible(self, inst):
        h, req, X = inst
        vh = wrap(h, req, Strategy.CONSTRAINED_ARGMAX, inputs_for_M=X)
        for x in X:
            allowed = sorted(feasible_labels(req, x))
            s = h.scores(x)
            best = max(allowed, key=lambda y: (s[y - 1], -y))
            assert vh.predict(x) == best

    @given(wrapped_instances())
    def test_label_matrix_agrees_with_infer(self, inst):
        h, req, X = inst
        F = feasibility_matrix(req, X)
        S = h.score_matrix(X)
        for strategy in STRATEGIES:
            vh = wrap(h, req, strategy, inputs_for_M=X)
            got = verified_label_matrix(S, F, strategy)
            assert list(got) == [vh.predict(x) for x in X]

    def test_counter_is_thread_safe(self):
        counter = QueryCounter()

        def work(_):
            for _ in range(1000):
                counter.add("inference")
                counter.record_infer(1)

        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(work, range(8)))
        rep = counter.snapshot()
        assert rep.inference == 8000
        assert rep.infer_calls == 8000
        with pytest.raises(ValueError):
            counter.add("inference", -1)

    def test_shared_verifier_across_threads(self, rng):
        h = ScoringHypothesis(rng.normal(size=(3, 2)))
        X = rng.uniform(-1.0, 1.0, size=(200, 2))
        req = flat_requirement(3, forbid_rule(0, ">", 0.0, {1}))
        vh = wrap(h, req, Strategy.MIN_INDEX, inputs_for_M=X)
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(vh.infer, X))
        rep = vh.query_report()
        assert rep.infer_calls == 200
        assert rep.inference == sum(r.queries_used for r in results)


class TestMasking:
    def test_trivial_requirement_keeps_scores(self, rng):
        h = ScoringHypothesis(rng.normal(size=(3, 2)))
        mh = mask_scores(h, Requirement.trivial(3), 100.0)
        x = (0.3, -0.2)
        np.testing.assert_array_equal(mh.scores(x), h.scores(x))

    def test_forbidden_label_gets_minus_m(self):
        h = ScoringHypothesis(np.eye(2))
        req = flat_requirement(2, forbid_rule(0, ">", 0.0, {2}))
        mh = mask_scores(h, req, 2.0)
        np.testing.assert_allclose(mh.scores((0.3, 0.8)), [0.3, -2.0])
        assert mh.predict((0.3, 0.8)) == 1

    def test_mask_constant_violated(self):
        with pytest.raises(MaskConstantViolated):
            mask_score_matrix(np.array([[0.5, 2.0]]), np.ones((1, 2), dtype=bool), 2.0)
        mh = mask_scores(identity_h(2), Requirement.trivial(2), 1.0)
        with pytest.raises(MaskConstantViolated):
            mh.scores((1.5, 0.0))

    def test_structured_requirement_rejected(self):
        with pytest.raises(KindMismatch):
            mask_scores(identity_h(2), Requirement.trivial(2, kind=STRUCTURED), 2.0)

    @given(wrapped_instances())
    def test_forbidden_labels_have_negative_margin(self, inst):
        h, req, X = inst
        vh = wrap(h, req, Strategy.CONSTRAINED_ARGMAX, inputs_for_M=X)
        mh = vh.masked()
        for x in X:
            for y in range(1, req.K + 1):
                if not evaluate(req, x, y):
                    assert margin(mh, x, y) < 0.0
            # 制約付き argmax = マスク付きスコアの argmax
            assert vh.predict(x) == predict(mh, x)

    def test_masked_class_is_not_inside_linear_class(self):
        # h_c(x, 2) は x_0 > 0 で -M, それ以外で 0.5 x_0. 1 本の直線では表せない
        h = ScoringHypothesis(np.array([[0.5], [0.5]]))
        req = Requirement(FLAT, 2, (Rule(conditions=(AtomicPredicate(0, ">", 0.0),), forbid=frozenset({2})),))
        vh = wrap(h, req, inputs_for_M=[(1.0,), (-1.0,)])
        assert vh.mask_constant == pytest.approx(1.5)
        mh = vh.masked()
        xs = np.array([-1.0, -0.5, 0.5, 1.0])
        vals = np.array([mh.scores((v,))[1] for v in xs])
        np.testing.assert_allclose(vals, [-0.5, -0.25, -1.5, -1.5])
        # 線形 (切片なし) で合わせても誤差が残る
        w = np.linalg.lstsq(xs[:, None], vals, rcond=None)[0]
        assert np.abs(xs * w[0] - vals).max() > 0.1


class TestTabulatedBase:
    def test_verified_tabulated_hypothesis(self):
        x0, x1 = (0.0,), (1.0,)
        h = TabulatedHypothesis({x0: (0.0, 1.0), x1: (1.0, 0.0)}, 2)
        req = flat_requirement(2, forbid_rule(0, "<", 0.5, {2}))
        vh = wrap(h, req, inputs_for_M=[x0, x1])
        assert vh.predict(x0) == 1
        assert vh.predict(x1) == 1
        assert vh.mask_constant == 2.0
