from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from cvlearn.errors import (
    DimensionMismatch,
    InvalidP,
    LabelOutOfRange,
    NonpositiveTheta,
    ParseError,
    SingleClass,
)

logger = logging.getLogger(__name__)


@runtime_checkable
class Predictor(Protocol):
    """x -> ラベル (1-based)."""

    def predict(self, x: Sequence[float]) -> int:
        ...


@runtime_checkable
class ScoreFunction(Protocol):
    """x -> 長さ K のスコアベクトル. index 0 がラベル 1."""

    @property
    def num_labels(self) -> int:
        ...

    def scores(self, x: Sequence[float]) -> np.ndarray:
        ...


def _check_p(p: float) -> float:
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise InvalidP(f"p must lie in [1, 2], got {p}")
    return p


def argmax_first(values: np.ndarray) -> int:
    """最大値を取る最小 index (0-based). np.argmax は先頭を返す."""
    return int(np.argmax(values))


# -----------------------------
# Feature maps
# -----------------------------

@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    明示的な特徴写像 φ.
    - identity
    - random_features: φ(x) = sqrt(2/D) * cos(W x), W は保存された (D, d_in) 行列
    """
    kind: str = "identity"
    matrix: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind == "identity":
            if self.matrix is not None:
                raise ValueError("identity feature map takes no matrix")
        elif self.kind == "random_features":
            if self.matrix is None:
                raise ValueError("random_features needs a stored matrix")
            m = np.array(self.matrix, dtype=float)
            if m.ndim != 2 or m.size == 0:
                raise ValueError(f"random feature matrix must be 2-D, got shape {m.shape}")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)
        else:
            raise ValueError(f"Unknown feature map: {self.kind!r}")

    @classmethod
    def identity(cls) -> "FeatureMap":
        return cls("identity")

    @classmethod
    def random_features(cls, d_in: int, n_features: int, seed: int, scale: float = 1.0) -> "FeatureMap":
        rng = np.random.default_rng(seed)
        return cls("random_features", rng.normal(0.0, scale, size=(n_features, d_in)))

    @property
    def input_dim(self) -> Optional[int]:
        return None if self.matrix is None else int(self.matrix.shape[1])

    def output_dim(self, input_dim: int) -> int:
        return input_dim if self.matrix is None else int(self.matrix.shape[0])

    def transform(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.matrix is None:
            return x
        if x.shape != (self.matrix.shape[1],):
            raise DimensionMismatch(f"feature map expects dimension {self.matrix.shape[1]}, got {x.shape}")
        return np.sqrt(2.0 / self.matrix.shape[0]) * np.cos(self.matrix @ x)

    def transform_rows(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.matrix is None:
            return X
        if X.shape[1] != self.matrix.shape[1]:
            raise DimensionMismatch(f"feature map expects dimension {self.matrix.shape[1]}, got {X.shape[1]}")
        return np.sqrt(2.0 / self.matrix.shape[0]) * np.cos(X @ self.matrix.T)

    def to_json(self) -> Any:
        if self.matrix is None:
            return "identity"
        return {"random_features": {"matrix": self.matrix.tolist()}}


# -----------------------------
# Scoring hypotheses
# -----------------------------

@dataclass(frozen=True, eq=False)
class ScoringHypothesis:
    """h(x, y) = <w_y, φ(x)>. weights は (K, D)."""
    weights: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap.identity)
    p: float = 2.0

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ValueError(f"weights must be (K, D) with K >= 1, got shape {w.shape}")
        if self.feature_map.matrix is not None and self.feature_map.matrix.shape[0] != w.shape[1]:
            raise DimensionMismatch(
                f"weights have D={w.shape[1]} but feature map outputs {self.feature_map.matrix.shape[0]}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "p", _check_p(self.p))

    @property
    def num_labels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def input_dim(self) -> int:
        d = self.feature_map.input_dim
        return int(self.weights.shape[1]) if d is None else d

    def features(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise DimensionMismatch(f"expected input dimension {self.input_dim}, got {x.shape}")
        return self.feature_map.transform(x)

    def scores(self, x: Sequence[float]) -> np.ndarray:
        return self.weights @ self.features(x)

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected input dimension {self.input_dim}, got {X.shape[1]}")
        return self.feature_map.transform_rows(X) @ self.weights.T

    def predict(self, x: Sequence[float]) -> int:
        return predict(self, x)

    def scaled(self, alpha: float) -> "ScoringHypothesis":
        return ScoringHypothesis(self.weights * float(alpha), self.feature_map, self.p)


@dataclass(frozen=True, eq=False)
class TabulatedHypothesis:
    """有限入力領域上のスコア表 {x: (h(x,1), ..., h(x,K))}."""
    table: Mapping[Tuple[float, ...], Tuple[float, ...]]
    num_labels: int

    def __post_init__(self) -> None:
        t = {tuple(float(v) for v in k): np.asarray(s, dtype=float) for k, s in self.table.items()}
        for k, s in t.items():
            if s.shape != (self.num_labels,):
                raise DimensionMismatch(f"score row for {k} has shape {s.shape}, expected ({self.num_labels},)")
        object.__setattr__(self, "table", t)

    def scores(self, x: Sequence[float]) -> np.ndarray:
        key = tuple(float(v) for v in x)
        if key not in self.table:
            raise KeyError(f"input {key} is not in the tabulated domain")
        return self.table[key]

    def predict(self, x: Sequence[float]) -> int:
        return predict(self, x)


@dataclass(frozen=True)
class LabelTable:
    """ラベル値の予測器 (Bayes 最適予測器など)."""
    table: Mapping[Tuple[float, ...], int]
    num_labels: int

    def predict(self, x: Sequence[float]) -> int:
        key = tuple(float(v) for v in x)
        if key not in self.table:
            raise KeyError(f"input {key} is not in the tabulated domain")
        return int(self.table[key])


@dataclass(frozen=True)
class FiniteHypothesisClass:
    members: Tuple[Any, ...]

    def __post_init__(self) -> None:
        members = tuple(self.members)
        if not members:
            raise ValueError("FiniteHypothesisClass must be non-empty")
        ks = {int(m.num_labels) for m in members}
        if len(ks) != 1:
            raise ValueError(f"members disagree on K: {sorted(ks)}")
        object.__setattr__(self, "members", members)

    @property
    def num_labels(self) -> int:
        return int(self.members[0].num_labels)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i: int) -> Any:
        return self.members[i]


# -----------------------------
# Operations
# -----------------------------

def _check_label(h: ScoreFunction, y: int) -> int:
    y = int(y)
    if not 1 <= y <= h.num_labels:
        raise LabelOutOfRange(f"label {y} outside [1, {h.num_labels}]")
    return y


def score(h: ScoreFunction, x: Sequence[float], y: int) -> float:
    y = _check_label(h, y)
    return float(h.scores(x)[y - 1])


def predict(h: ScoreFunction, x: Sequence[float]) -> int:
    """argmax_y h(x, y). 同点は最小ラベル."""
    return argmax_first(h.scores(x)) + 1


def _margin_from_scores(s: np.ndarray, y: int) -> float:
    others = np.delete(s, y - 1)
    return float(s[y - 1] - others.max())


def margin(h: ScoreFunction, x: Sequence[float], y: int) -> float:
    """ρ_h(x, y) = h(x, y) - max_{y' != y} h(x, y')"""
    if h.num_labels < 2:
        raise SingleClass("margin needs at least two labels")
    y = _check_label(h, y)
    return _margin_from_scores(np.asarray(h.scores(x), dtype=float), y)


def margin_theta(h: ScoreFunction, x: Sequence[float], y: int, theta: float) -> float:
    """ρ_{θ,h}(x, y) = min_{y'} (h(x, y) - h(x, y') + θ 1[y' = y])"""
    if not theta > 0:
        raise NonpositiveTheta(f"theta must be positive, got {theta}")
    y = _check_label(h, y)
    s = np.asarray(h.scores(x), dtype=float)
    gaps = s[y - 1] - s
    gaps[y - 1] += float(theta)
    return float(gaps.min())


def margins_from_matrix(S: np.ndarray, y: np.ndarray) -> np.ndarray:
    """行ごとのマージン. S は (n, K) のスコア行列, y は 1-based ラベル."""
    S = np.asarray(S, dtype=float)
    idx = np.asarray(y, dtype=int) - 1
    rows = np.arange(S.shape[0])
    true = S[rows, idx]
    rest = S.copy()
    rest[rows, idx] = -np.inf
    return true - rest.max(axis=1)


def group_norm(weights: np.ndarray, p: float) -> float:
    """ℓ_{2,p}: 各行の ℓ2 ノルムの ℓp ノルム (p = inf 可)."""
    row = np.linalg.norm(np.asarray(weights, dtype=float), axis=1)
    return float(np.linalg.norm(row, ord=p))


def norm_2p(h: ScoringHypothesis) -> float:
    return group_norm(h.weights, _check_p(h.p))


def in_unit_ball(h: ScoringHypothesis, tol: float = 1e-12) -> bool:
    return norm_2p(h) <= 1.0 + tol


def sample_unit_ball(
    d: int,
    K: int,
    p: float,
    seed: Any,
    feature_map: Optional[FeatureMap] = None,
) -> ScoringHypothesis:
    """
    ℓ_{2,p} 単位球内の重みをシードから決定的に生成する.
    方向はガウス, 半径は u^{1/(Kd)}.
    """
    p = _check_p(p)
    if d < 1 or K < 1:
        raise ValueError(f"d and K must be >= 1, got d={d}, K={K}")
    fm = feature_map or FeatureMap.identity()
    D = fm.output_dim(d)
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(K, D))
    n = group_norm(g, p)
    while n == 0.0:
        g = rng.normal(size=(K, D))
        n = group_norm(g, p)
    r = rng.uniform() ** (1.0 / (K * D))
    return ScoringHypothesis(g / n * r, fm, p)


# -----------------------------
# Hypothesis file (JSON)
# -----------------------------

def hypothesis_to_dict(h: ScoringHypothesis) -> Dict[str, Any]:
    return {
        "K": h.num_labels,
        "d": h.input_dim,
        "p": h.p,
        "feature_map": h.feature_map.to_json(),
        "weights": h.weights.tolist(),
    }


def hypothesis_from_dict(doc: Any) -> ScoringHypothesis:
    if not isinstance(doc, dict):
        raise ParseError("hypothesis document must be a JSON object", field="<root>")
    for key in ("K", "d", "weights"):
        if key not in doc:
            raise ParseError(f"Missing key '{key}'", field=key)
    fm_raw = doc.get("feature_map", "identity")
    if fm_raw == "identity":
        fm = FeatureMap.identity()
    elif isinstance(fm_raw, dict) and "random_features" in fm_raw:
        try:
            fm = FeatureMap("random_features", np.asarray(fm_raw["random_features"]["matrix"], dtype=float))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad random_features block: {e}", field="feature_map") from e
    else:
        raise ParseError(f"unknown feature_map {fm_raw!r}", field="feature_map")

    w = np.asarray(doc["weights"], dtype=float)
    K, d = int(doc["K"]), int(doc["d"])
    if w.ndim != 2 or w.shape[0] != K:
        raise ParseError(f"weights must have K={K} rows, got shape {w.shape}", field="weights")
    h = ScoringHypothesis(w, fm, float(doc.get("p", 2.0)))
    if h.input_dim != d:
        raise ParseError(f"declared d={d} but weights/feature map imply {h.input_dim}", field="d")
    return h


def parse_hypothesis(text: str) -> ScoringHypothesis:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    return hypothesis_from_dict(doc)


def dump_hypothesis(h: ScoringHypothesis) -> str:
    return json.dumps(hypothesis_to_dict(h), ensure_ascii=False, separators=(",", ":"))


def load_hypothesis(path: str | Path) -> ScoringHypothesis:
    with Path(path).open("r", encoding="utf-8") as f:
        return parse_hypothesis(f.read())
