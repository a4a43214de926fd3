from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import logging
import threading
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cvlearn.domain.hypotheses import argmax_first
from cvlearn.domain.requirements import (
    FLAT,
    Requirement,
    check_feasibility,
    evaluate,
)
from cvlearn.errors import InfeasibleInput, KindMismatch, MaskConstantViolated

logger = logging.getLogger(__name__)

INFERENCE = "inference"
LOSS = "loss"


class Strategy(str, Enum):
    """c(x, h(x)) = 0 のときの代替ラベル y_c の選び方."""
    MIN_INDEX = "min_index"
    CONSTRAINED_ARGMAX = "constrained_argmax"

    @classmethod
    def parse(cls, v: Any) -> "Strategy":
        if isinstance(v, Strategy):
            return v
        try:
            return cls(str(v))
        except ValueError:
            raise ValueError(f"Unknown strategy: {v!r} (expected one of {[s.value for s in cls]})") from None


# -----------------------------
# Query accounting
# -----------------------------

class QueryCounter:
    """フェーズ別の単調な問い合わせカウンタ. スレッド間で共有してよい."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: Dict[str, int] = {INFERENCE: 0, LOSS: 0}
        self._infer_calls = 0
        self._max_per_infer = 0

    def add(self, phase: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("query counts are monotone")
        with self._lock:
            self._counts[phase] = self._counts.get(phase, 0) + n

    def record_infer(self, used: int) -> None:
        with self._lock:
            self._infer_calls += 1
            self._max_per_infer = max(self._max_per_infer, used)

    def snapshot(self) -> "QueryReport":
        with self._lock:
            return QueryReport(
                total=sum(self._counts.values()),
                inference=self._counts.get(INFERENCE, 0),
                loss=self._counts.get(LOSS, 0),
                infer_calls=self._infer_calls,
                max_per_infer=self._max_per_infer,
            )


@dataclass(frozen=True)
class QueryReport:
    total: int
    inference: int
    loss: int
    infer_calls: int
    max_per_infer: int

    def to_dict(self) -> Dict[str, int]:
        return {
            "total": self.total,
            "inference": self.inference,
            "loss": self.loss,
            "infer_calls": self.infer_calls,
            "max_per_infer": self.max_per_infer,
        }


@dataclass(frozen=True)
class InferenceResult:
    label: int
    queries_used: int


# -----------------------------
# Masking
# -----------------------------

def mask_score_matrix(S: np.ndarray, F: np.ndarray, M: float) -> np.ndarray:
    """h_c(x, y) = h(x, y) if c(x, y) = 1 else -M (行列版)."""
    S = np.asarray(S, dtype=float)
    if np.abs(S).max(initial=0.0) >= M:
        raise MaskConstantViolated(f"max |score| = {np.abs(S).max():.6g} >= M = {M:.6g}")
    return np.where(F, S, -float(M))


@dataclass(frozen=True, eq=False)
class MaskedHypothesis:
    base: Any
    requirement: Requirement
    M: float

    @property
    def num_labels(self) -> int:
        return int(self.base.num_labels)

    def scores(self, x: Sequence[float]) -> np.ndarray:
        s = np.asarray(self.base.scores(x), dtype=float)
        F = np.array([evaluate(self.requirement, x, y) == 1 for y in range(1, s.shape[0] + 1)])
        return mask_score_matrix(s[None, :], F[None, :], self.M)[0]

    def predict(self, x: Sequence[float]) -> int:
        return argmax_first(self.scores(x)) + 1


def mask_scores(h: Any, req: Requirement, M: float) -> MaskedHypothesis:
    if req.kind != FLAT:
        raise KindMismatch("mask_scores takes a flat requirement; use structured.mask_structured")
    if req.K != h.num_labels:
        raise ValueError(f"requirement has K={req.K} but hypothesis has K={h.num_labels}")
    return MaskedHypothesis(h, req, float(M))


# -----------------------------
# Verified hypothesis
# -----------------------------

class VerifiedHypothesis:
    """
    h_c: 基底予測器 h と要求 c を組み合わせた予測器.
    出力が c を満たさないときは strategy に従って置き換える.
    """

    def __init__(
        self,
        base: Any,
        requirement: Requirement,
        strategy: Strategy,
        mask_constant: float,
        reference_inputs: Sequence[Sequence[float]] = (),
    ):
        self.base = base
        self.requirement = requirement
        self.strategy = Strategy.parse(strategy)
        self.mask_constant = float(mask_constant)
        self.reference_inputs: Tuple[Tuple[float, ...], ...] = tuple(tuple(float(v) for v in x) for x in reference_inputs)
        self.counter = QueryCounter()

    @property
    def num_labels(self) -> int:
        return self.requirement.K

    def _query(self, x: Sequence[float], y: int, phase: str, known: Dict[int, int]) -> int:
        if y not in known:
            known[y] = evaluate(self.requirement, x, y)
            self.counter.add(phase)
        return known[y]

    def _fallback_order(self, x: Sequence[float], y0: int) -> List[int]:
        K = self.num_labels
        if self.strategy is Strategy.MIN_INDEX:
            return [y for y in range(1, K + 1) if y != y0]
        s = np.asarray(self.base.scores(x), dtype=float)
        return [y for y in sorted(range(1, K + 1), key=lambda y: (-s[y - 1], y)) if y != y0]

    def _resolve(self, x: Sequence[float], phase: str, known: Dict[int, int]) -> int:
        y0 = int(self.base.predict(x))
        if self._query(x, y0, phase, known):
            return y0
        for y in self._fallback_order(x, y0):
            if self._query(x, y, phase, known):
                return y
        report = check_feasibility(self.requirement, [x])
        raise InfeasibleInput(f"no feasible label for input {tuple(x)}", report=report, inputs=[x])

    def infer(self, x: Sequence[float]) -> InferenceResult:
        known: Dict[int, int] = {}
        try:
            label = self._resolve(x, INFERENCE, known)
        finally:
            self.counter.record_infer(len(known))
        return InferenceResult(label=label, queries_used=len(known))

    def predict(self, x: Sequence[float]) -> int:
        return self.infer(x).label

    def classify_example(self, x: Sequence[float], y: int) -> Tuple[bool, bool]:
        """
        学習時の損失評価: (y ∈ S_1 か, h_c(x) = y か).
        c(x, y) を 1 回問い合わせ, S_0 ならそこで打ち切る. 1 例あたり高々 K 回.
        """
        known: Dict[int, int] = {}
        if not self._query(x, int(y), LOSS, known):
            return False, False
        return True, self._resolve(x, LOSS, known) == int(y)

    def masked(self) -> MaskedHypothesis:
        if not hasattr(self.base, "scores"):
            raise TypeError("masking needs a scoring base hypothesis")
        return mask_scores(self.base, self.requirement, self.mask_constant)

    def query_report(self) -> QueryReport:
        return self.counter.snapshot()


def mask_constant_over(h: Any, inputs: Sequence[Sequence[float]]) -> float:
    """M = max_{x ∈ inputs, y} |h(x, y)| + 1. inputs が空なら 1."""
    if len(inputs) == 0 or not hasattr(h, "scores"):
        return 1.0
    if hasattr(h, "score_matrix"):
        top = float(np.abs(h.score_matrix(np.asarray(inputs, dtype=float))).max())
    else:
        top = max(float(np.abs(h.scores(x)).max()) for x in inputs)
    return top + 1.0


def wrap(
    h: Any,
    req: Requirement,
    strategy: Strategy | str = Strategy.CONSTRAINED_ARGMAX,
    inputs_for_M: Sequence[Sequence[float]] = (),
) -> VerifiedHypothesis:
    if req.kind != FLAT:
        raise KindMismatch("the verifier wraps flat requirements; structured CV lives in cvlearn.structured")
    strategy = Strategy.parse(strategy)
    if req.K != h.num_labels:
        raise ValueError(f"requirement has K={req.K} but hypothesis has K={h.num_labels}")
    if strategy is Strategy.CONSTRAINED_ARGMAX and not hasattr(h, "scores"):
        raise TypeError("constrained_argmax needs a scoring hypothesis")

    report = check_feasibility(req, inputs_for_M)
    if not report.ok:
        raise InfeasibleInput(
            f"{len(report.violations)} reference input(s) have no feasible label",
            report=report,
            inputs=report.infeasible_inputs,
        )
    M = mask_constant_over(h, inputs_for_M)
    logger.debug("wrap: strategy=%s M=%.6g inputs=%d", strategy.value, M, len(inputs_for_M))
    return VerifiedHypothesis(h, req, strategy, M, inputs_for_M)


def infer(vh: VerifiedHypothesis, x: Sequence[float]) -> InferenceResult:
    return vh.infer(x)


def query_report(vh: VerifiedHypothesis) -> QueryReport:
    return vh.query_report()


def constrained_argmax_matrix(S: np.ndarray, F: np.ndarray) -> np.ndarray:
    """
    行ごとの h_c(x) (1-based). 予測が実行可能ならそのまま, 不可なら実行可能集合上の argmax.
    実行可能集合が空の行は 0.
    """
    masked = np.where(F, np.asarray(S, dtype=float), -np.inf)
    out = np.argmax(masked, axis=1) + 1
    out[~F.any(axis=1)] = 0
    return out


def min_index_matrix(S: np.ndarray, F: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    pred = np.argmax(S, axis=1)
    rows = np.arange(S.shape[0])
    ok = F[rows, pred]
    first = np.argmax(F, axis=1)
    out = np.where(ok, pred, first) + 1
    out[~F.any(axis=1)] = 0
    return out


def verified_label_matrix(S: np.ndarray, F: np.ndarray, strategy: Strategy | str) -> np.ndarray:
    """VerifiedHypothesis.infer のベクトル化 (問い合わせは数えない)."""
    if Strategy.parse(strategy) is Strategy.MIN_INDEX:
        return min_index_matrix(S, F)
    return constrained_argmax_matrix(S, F)


__all__ = [
    "InferenceResult",
    "MaskedHypothesis",
    "QueryCounter",
    "QueryReport",
    "Strategy",
    "VerifiedHypothesis",
    "constrained_argmax_matrix",
    "infer",
    "mask_score_matrix",
    "mask_scores",
    "min_index_matrix",
    "mask_constant_over",
    "query_report",
    "verified_label_matrix",
    "wrap",
]
