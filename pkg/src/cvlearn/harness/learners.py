from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from cvlearn.domain.hypotheses import FiniteHypothesisClass, sample_unit_ball
from cvlearn.domain.losses import (
    Sample,
    empirical_margin_loss,
    empirical_zero_one_loss,
    empirical_zero_one_with_split,
)
from cvlearn.domain.requirements import Requirement, feasibility_matrix
from cvlearn.verifier.concurrent import Strategy, VerifiedHypothesis, verified_label_matrix, wrap

logger = logging.getLogger(__name__)

ZERO_ONE = "zero_one"
MARGIN = "margin"


@dataclass(frozen=True, eq=False)
class ErmResult:
    """
    ERM の結果. with_cv のときは verified に h_c が入り,
    queries / query_budget は勝者の損失評価 1 回分の問い合わせ数と K|S_1| + |S_0|.
    """
    hypothesis: Any
    index: int
    loss: float
    losses: np.ndarray
    verified: Optional[VerifiedHypothesis] = None
    queries: int = 0
    query_budget: int = 0

    @property
    def predictor(self) -> Any:
        return self.verified if self.verified is not None else self.hypothesis

    @property
    def within_budget(self) -> bool:
        return self.queries <= self.query_budget


def _pick(losses: np.ndarray, tie_break: str) -> int:
    if tie_break == "first":
        return int(np.argmin(losses))
    if tie_break == "last":
        return int(len(losses) - 1 - np.argmin(losses[::-1]))
    raise ValueError(f"Unknown tie_break: {tie_break!r}")


def _budget(req: Requirement, S: Sample) -> int:
    """K|S_1| + |S_0|"""
    F = feasibility_matrix(req, S.xs)
    ys = np.asarray(S.ys, dtype=int)
    in_s1 = F[np.arange(S.m), ys - 1]
    n_s1 = int(in_s1.sum())
    return req.K * n_s1 + (S.m - n_s1)


def _vectorized_zero_one(candidates: Sequence[Any], S: Sample, req: Optional[Requirement], strategy: Strategy) -> Optional[np.ndarray]:
    """すべて score_matrix を持つなら行列演算で経験 0-1 損失を出す. そうでなければ None."""
    if not all(hasattr(h, "score_matrix") for h in candidates):
        return None
    X = S.xs
    ys = np.asarray(S.ys, dtype=int)
    F = feasibility_matrix(req, X) if req is not None else None
    out = np.empty(len(candidates))
    for j, h in enumerate(candidates):
        scores = h.score_matrix(X)
        if F is None:
            pred = np.argmax(scores, axis=1) + 1
        else:
            pred = verified_label_matrix(scores, F, strategy)
        out[j] = np.mean(pred != ys)
    return out


def learn_erm(
    hypotheses: Sequence[Any],
    S: Sample,
    loss: str = ZERO_ONE,
    rho: float = 1.0,
    requirement: Optional[Requirement] = None,
    strategy: Strategy | str = Strategy.CONSTRAINED_ARGMAX,
    tie_break: str = "first",
) -> ErmResult:
    """
    有限の候補集合上の経験損失最小化. requirement を渡すと H_c 上で学習する (LTV).

    - zero_one: L_S(h_c) を S_0 / S_1 分解で評価する
    - margin  : L_{S,ρ}(h_c), h_c はマスク付きスコア
    """
    candidates = list(hypotheses)
    if not candidates:
        raise ValueError("learn_erm needs at least one candidate")
    strategy = Strategy.parse(strategy)
    if S.structured:
        raise TypeError("learn_erm handles flat labels")

    losses: Optional[np.ndarray] = None
    if loss == ZERO_ONE:
        losses = _vectorized_zero_one(candidates, S, requirement, strategy)
    elif loss != MARGIN:
        raise ValueError(f"Unknown loss: {loss!r}")

    if losses is None:
        vals: List[float] = []
        for h in candidates:
            if requirement is None:
                target = h
            else:
                target = wrap(h, requirement, strategy, inputs_for_M=S.xs)
            if loss == ZERO_ONE:
                vals.append(empirical_zero_one_loss(target, S) if requirement is None
                            else empirical_zero_one_with_split(target, S).loss)
            else:
                vals.append(empirical_margin_loss(target if requirement is None else target.masked(), S, rho))
        losses = np.asarray(vals)

    j = _pick(losses, tie_break)
    best = candidates[j]
    result = ErmResult(hypothesis=best, index=j, loss=float(losses[j]), losses=losses)
    if requirement is None:
        return result

    # 勝者は検証器経由で評価し直し, 問い合わせ数を数える
    vh = wrap(best, requirement, strategy, inputs_for_M=S.xs)
    budget = _budget(requirement, S)
    split = empirical_zero_one_with_split(vh, S)
    queries = split.queries
    # 損失が margin でも S_0 / S_1 の振り分けは同じ問い合わせで決まる
    verified_loss = split.loss if loss == ZERO_ONE else empirical_margin_loss(vh.masked(), S, rho)
    if abs(verified_loss - result.loss) > 1e-12:
        logger.warning("learn_erm: candidate loss %.6g != verified loss %.6g", result.loss, verified_loss)
    if queries > budget:
        logger.warning("learn_erm: %d queries exceed the budget K|S_1| + |S_0| = %d", queries, budget)
    return ErmResult(
        hypothesis=best,
        index=j,
        loss=float(losses[j]),
        losses=losses,
        verified=vh,
        queries=queries,
        query_budget=budget,
    )


# -----------------------------
# Pluggable learners (config: {module, class, params})
# -----------------------------

class Learner(Protocol):
    """
    有限クラス H とサンプル S から仮説を選ぶ学習アルゴリズム A.
    """

    def fit(self, hypothesis_class: FiniteHypothesisClass, S: Sample, requirement: Optional[Requirement] = None) -> ErmResult:
        ...


@dataclass
class EnumerationLearner:
    """有限クラスの全列挙による厳密 ERM."""
    loss: str = ZERO_ONE
    rho: float = 1.0
    strategy: str = Strategy.CONSTRAINED_ARGMAX.value
    tie_break: str = "first"

    def fit(self, hypothesis_class: FiniteHypothesisClass, S: Sample, requirement: Optional[Requirement] = None) -> ErmResult:
        return learn_erm(
            hypothesis_class,
            S,
            loss=self.loss,
            rho=self.rho,
            requirement=requirement,
            strategy=self.strategy,
            tie_break=self.tie_break,
        )


@dataclass
class RandomSearchLearner:
    """
    ℓ_{2,p} 単位球からのシード付きランダム探索 (候補 candidates 個) で経験損失を最小化する.
    hypothesis_class は次元と K を知るためだけに使う.
    """
    candidates: int = 4096
    seed: int = 0
    p: float = 2.0
    loss: str = ZERO_ONE
    rho: float = 1.0
    strategy: str = Strategy.CONSTRAINED_ARGMAX.value
    _pools: Dict[Tuple[int, int, float], List[Any]] = field(default_factory=dict, init=False, repr=False)

    def pool(self, d: int, K: int) -> List[Any]:
        key = (int(d), int(K), float(self.p))
        if key not in self._pools:
            self._pools[key] = [sample_unit_ball(d, K, self.p, seed=[int(self.seed), 3, j]) for j in range(self.candidates)]
        return self._pools[key]

    def fit(self, hypothesis_class: FiniteHypothesisClass, S: Sample, requirement: Optional[Requirement] = None) -> ErmResult:
        ref = hypothesis_class[0]
        cands = self.pool(ref.input_dim, ref.num_labels)
        return learn_erm(cands, S, loss=self.loss, rho=self.rho, requirement=requirement, strategy=self.strategy)
