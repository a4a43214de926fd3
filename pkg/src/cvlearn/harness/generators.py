from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from cvlearn.domain.hypotheses import (
    FiniteHypothesisClass,
    LabelTable,
    ScoringHypothesis,
    TabulatedHypothesis,
    sample_unit_ball,
)
from cvlearn.domain.losses import FiniteDistribution
from cvlearn.domain.requirements import (
    FLAT,
    STRUCTURED,
    AtomicPredicate,
    Requirement,
    Rule,
    check_feasibility,
)
from cvlearn.structured.factor_graph import SharedChainModel

logger = logging.getLogger(__name__)

MAX_RETRIES = 100


# -----------------------------
# Instances
# -----------------------------

@dataclass(frozen=True)
class RealizableInstance:
    """有限台の分布 D と真のラベル関数 f (L_D(f) = 0) と有限仮説クラス H."""
    distribution: FiniteDistribution
    truth: LabelTable
    hypothesis_class: FiniteHypothesisClass
    truth_index: int
    inputs: Tuple[Tuple[float, ...], ...]

    @property
    def num_labels(self) -> int:
        return self.truth.num_labels


@dataclass(frozen=True)
class CounterexampleInstance:
    """H = {h0, h1} が D で実現可能でない固定インスタンス."""
    distribution: FiniteDistribution
    hypothesis_class: FiniteHypothesisClass
    truth: LabelTable
    requirement: Requirement


@dataclass(frozen=True)
class StructuredInstance:
    """(x, y 系列) 上の有限分布. x は長さ l * d_pos."""
    distribution: FiniteDistribution
    truth: SharedChainModel
    alphabet_size: int
    d_pos: int
    length: int


# -----------------------------
# Finite linear classes
# -----------------------------

def finite_linear_class(K: int, d: int, n_members: int, seed: int, p: float = 2.0) -> FiniteHypothesisClass:
    """ℓ_{2,p} 単位球からシード付きで n_members 個取り出した有限クラス."""
    if n_members < 1:
        raise ValueError(f"n_members must be >= 1, got {n_members}")
    members = [sample_unit_ball(d, K, p, seed=[int(seed), 1, j]) for j in range(n_members)]
    return FiniteHypothesisClass(tuple(members))


def _dirichlet(rng: np.random.Generator, n: int) -> np.ndarray:
    probs = rng.dirichlet(np.ones(n))
    # 和の丸め誤差を最後の要素で吸収する
    probs[-1] = 1.0 - probs[:-1].sum()
    if probs[-1] < 0:
        probs = np.full(n, 1.0 / n)
    return probs


def gen_realizable(
    seed: int,
    support_size: int = 8,
    K: int = 3,
    d: int = 5,
    noise: float = 0.0,
    n_members: int = 32,
    p: float = 2.0,
) -> RealizableInstance:
    """
    x_1..x_n を [-1, 1]^d から取り, f をクラスの 1 メンバーにとってラベルを付ける.
    noise > 0 のときは各 x のラベルを確率 noise で別ラベルに置き換える
    (f はその置き換え後の表なので L_D(f) = 0 のまま. H による実現可能性は失われうる).
    """
    if support_size < 1:
        raise ValueError(f"support_size must be >= 1, got {support_size}")
    rng = np.random.default_rng([int(seed), 0])
    H = finite_linear_class(K, d, n_members, seed, p)
    truth_index = int(rng.integers(len(H)))
    source: ScoringHypothesis = H[truth_index]

    X = rng.uniform(-1.0, 1.0, size=(support_size, d))
    labels = np.argmax(source.score_matrix(X), axis=1) + 1
    if noise > 0 and K > 1:
        flip = rng.uniform(size=support_size) < noise
        shift = rng.integers(1, K, size=support_size)
        labels = np.where(flip, (labels - 1 + shift) % K + 1, labels)

    probs = _dirichlet(rng, support_size)
    inputs = tuple(tuple(float(v) for v in row) for row in X)
    support = tuple((x, int(y), float(pr)) for x, y, pr in zip(inputs, labels, probs))
    truth = LabelTable({x: int(y) for x, y in zip(inputs, labels)}, K)
    logger.debug("gen_realizable: seed=%d n=%d K=%d truth=#%d", seed, support_size, K, truth_index)
    return RealizableInstance(FiniteDistribution(support), truth, H, truth_index, inputs)


def gen_counterexample() -> CounterexampleInstance:
    """
    X = {x0, x1} 一様, Y = {1, 2}, f ≡ 1.
    h0 は x0 で 2 (誤り), h1 は x1 で 2 (誤り). c は x0 でラベル 2 を禁止する.
    """
    x0, x1 = (0.0,), (1.0,)
    D = FiniteDistribution(((x0, 1, 0.5), (x1, 1, 0.5)))
    h0 = TabulatedHypothesis({x0: (0.0, 1.0), x1: (1.0, 0.0)}, 2)
    h1 = TabulatedHypothesis({x0: (1.0, 0.0), x1: (0.0, 1.0)}, 2)
    f = LabelTable({x0: 1, x1: 1}, 2)
    c = Requirement(
        kind=FLAT,
        label_count=2,
        rules=(Rule(conditions=(AtomicPredicate(0, "<", 0.5),), forbid=frozenset({2})),),
    )
    return CounterexampleInstance(D, FiniteHypothesisClass((h0, h1)), f, c)


# -----------------------------
# Random requirements
# -----------------------------

def _random_condition(rng: np.random.Generator, d: int) -> AtomicPredicate:
    op = str(rng.choice(["<", "<=", ">", ">="]))
    return AtomicPredicate(int(rng.integers(d)), op, float(np.round(rng.uniform(-1.0, 1.0), 3)))


def _random_subset(rng: np.random.Generator, K: int, max_size: int) -> frozenset:
    size = int(rng.integers(1, max(1, max_size) + 1))
    return frozenset(int(v) + 1 for v in rng.choice(K, size=min(size, K), replace=False))


def random_flat_requirement(
    rng: np.random.Generator,
    K: int,
    d: int,
    inputs: Sequence[Sequence[float]] = (),
    n_rules: int = 3,
) -> Requirement:
    """
    1 条件のルールを n_rules 本. 効果は forbid (K-1 個まで) か allow_only.
    inputs 上で実行不能な x が出たら引き直す. MAX_RETRIES 回で諦めて c ≡ 1.
    """
    for _ in range(MAX_RETRIES):
        rules: List[Rule] = []
        for _ in range(n_rules):
            cond = (_random_condition(rng, d),)
            if K > 1 and rng.uniform() < 0.75:
                rules.append(Rule(conditions=cond, forbid=_random_subset(rng, K, K - 1)))
            else:
                rules.append(Rule(conditions=cond, allow_only=_random_subset(rng, K, K)))
        req = Requirement(FLAT, K, tuple(rules))
        if check_feasibility(req, inputs).ok:
            return req
    logger.warning("random_flat_requirement: no feasible draw after %d tries, using c = 1", MAX_RETRIES)
    return Requirement.trivial(K)


def consistent_requirement(
    rng: np.random.Generator,
    truth: Any,
    inputs: Sequence[Sequence[float]],
    K: int,
) -> Requirement:
    """
    f と矛盾しない要求: 各 x を x_0 == 値 で特定し, f(x) 以外のラベルをランダムに禁止する.
    """
    rules: List[Rule] = []
    for x in inputs:
        y = int(truth.predict(x))
        others = [v for v in range(1, K + 1) if v != y]
        if not others or rng.uniform() < 0.3:
            continue
        size = int(rng.integers(1, len(others) + 1))
        banned = frozenset(int(v) for v in rng.choice(others, size=size, replace=False))
        cond = tuple(AtomicPredicate(j, "==", float(v)) for j, v in enumerate(x))
        rules.append(Rule(conditions=cond, forbid=banned))
    return Requirement(FLAT, K, tuple(rules))


def random_structured_requirement(
    rng: np.random.Generator,
    alphabet_size: int,
    d: int,
    length: int,
    inputs: Sequence[Sequence[float]] = (),
    n_rules: int = 3,
    max_must_include: int = 4,
) -> Requirement:
    """位置付き forbid, forbid_pairs, must_include を混ぜた要求. inputs で実行可能になるまで引き直す."""
    A = int(alphabet_size)
    for _ in range(MAX_RETRIES):
        rules: List[Rule] = []
        for _ in range(n_rules):
            cond = (_random_condition(rng, d),) if rng.uniform() < 0.8 else ()
            kind = int(rng.integers(3))
            if kind == 0 and A > 1:
                n_pos = int(rng.integers(1, length + 1))
                positions = tuple(sorted(int(k) + 1 for k in rng.choice(length, size=n_pos, replace=False)))
                rules.append(Rule(conditions=cond, forbid=_random_subset(rng, A, A - 1), positions=positions))
            elif kind == 1:
                a, b = (int(v) + 1 for v in rng.integers(A, size=2))
                rules.append(Rule(conditions=cond, forbid_pairs=frozenset({(a, b)})))
            else:
                need = _random_subset(rng, A, min(max_must_include, A, length))
                rules.append(Rule(conditions=cond, must_include=need))
        req = Requirement(STRUCTURED, A, tuple(rules))
        if check_feasibility(req, inputs, lengths=length).ok:
            return req
    logger.warning("random_structured_requirement: no feasible draw after %d tries, using c = 1", MAX_RETRIES)
    return Requirement.trivial(A, kind=STRUCTURED)


# -----------------------------
# Structured
# -----------------------------

def random_chain_model(rng: np.random.Generator, alphabet_size: int, d_pos: int, scale: float = 1.0) -> SharedChainModel:
    """整数値の重み. 同点が実際に起きるので復号器の辞書順規則を検査できる."""
    E = rng.integers(-2, 3, size=(alphabet_size, d_pos)).astype(float) * scale
    T = rng.integers(-2, 3, size=(alphabet_size, alphabet_size)).astype(float) * scale
    return SharedChainModel(E, T)


def sample_chain_ball(alphabet_size: int, d_pos: int, seed: Any) -> SharedChainModel:
    """
    emission, transition をそれぞれ Frobenius 単位球から一様に取る.
    FactoredLinearClass.for_shared_chain と同じテンプレートごとの球.
    """
    rng = np.random.default_rng(seed)
    out = []
    for shape in ((alphabet_size, d_pos), (alphabet_size, alphabet_size)):
        g = rng.normal(size=shape)
        n = float(np.linalg.norm(g))
        r = rng.uniform() ** (1.0 / g.size)
        out.append(g / n * r if n > 0 else g)
    return SharedChainModel(out[0], out[1])


def gen_structured(
    seed: int,
    support_size: int = 8,
    alphabet_size: int = 2,
    d_pos: int = 2,
    length: int = 3,
    noise: float = 0.1,
) -> StructuredInstance:
    """
    位置特徴 x_k ∈ [-1, 1]^{d_pos} と, 真の鎖モデルの Viterbi 出力にノイズを乗せたラベル系列.
    同じ x に 1 つの系列を割り当てる.
    """
    rng = np.random.default_rng([int(seed), 2])
    E = rng.normal(size=(alphabet_size, d_pos))
    T = rng.normal(scale=0.5, size=(alphabet_size, alphabet_size))
    truth = SharedChainModel(E, T)
    X = rng.uniform(-1.0, 1.0, size=(support_size, length * d_pos))
    probs = _dirichlet(rng, support_size)
    support = []
    for row, pr in zip(X, probs):
        x = tuple(float(v) for v in row)
        y = list(truth.predict(x))
        for k in range(length):
            if alphabet_size > 1 and rng.uniform() < noise:
                y[k] = (y[k] - 1 + int(rng.integers(1, alphabet_size))) % alphabet_size + 1
        support.append((x, tuple(y), float(pr)))
    return StructuredInstance(FiniteDistribution(tuple(support)), truth, alphabet_size, d_pos, length)
