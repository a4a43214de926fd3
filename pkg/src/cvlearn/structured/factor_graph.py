from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from cvlearn.errors import DimensionMismatch, LabelOutOfRange, LengthMismatch, NotAChain, ParseError

logger = logging.getLogger(__name__)


# -----------------------------
# Graph structure
# -----------------------------

@dataclass(frozen=True)
class Factor:
    """変数 index (0-based) の組 scope 上の因子."""
    name: str
    scope: Tuple[int, ...]


class FactorGraph:
    """
    G = (V, F, E) を networkx の二部グラフで保持する.
    変数ノードは ("v", k), 因子ノードは ("f", name).
    """

    def __init__(self, n_vars: int, factors: Sequence[Factor]):
        if n_vars < 1:
            raise ValueError(f"factor graph needs at least one variable, got {n_vars}")
        self.n_vars = int(n_vars)
        self.factors: Tuple[Factor, ...] = tuple(factors)

        g = nx.Graph()
        g.add_nodes_from((("v", k) for k in range(self.n_vars)), bipartite=0)
        for f in self.factors:
            if not f.scope:
                raise ValueError(f"factor {f.name!r} has an empty neighbourhood")
            if ("f", f.name) in g:
                raise ValueError(f"duplicate factor name {f.name!r}")
            g.add_node(("f", f.name), bipartite=1)
            for k in f.scope:
                if not 0 <= k < self.n_vars:
                    raise ValueError(f"factor {f.name!r} touches variable {k} outside [0, {self.n_vars})")
                g.add_edge(("f", f.name), ("v", k))
        self.graph = g

    @classmethod
    def chain(cls, length: int) -> "FactorGraph":
        """emission {k} と transition {k, k+1} からなる鎖."""
        factors = [Factor(f"e{k}", (k,)) for k in range(length)]
        factors += [Factor(f"t{k}", (k, k + 1)) for k in range(length - 1)]
        return cls(length, factors)

    def __len__(self) -> int:
        return len(self.factors)

    def neighbors(self, name: str) -> Tuple[int, ...]:
        """N(f)"""
        return tuple(sorted(k for _, k in self.graph.neighbors(("f", name))))

    def is_chain(self) -> bool:
        """全因子が {k} か {k, k+1} に乗っていれば鎖として DP で解ける."""
        for f in self.factors:
            s = tuple(sorted(f.scope))
            if len(s) == 1:
                continue
            if len(s) == 2 and s[1] == s[0] + 1:
                continue
            return False
        return True


# -----------------------------
# Linear factors / models
# -----------------------------

@dataclass(frozen=True, eq=False)
class LinearFactor:
    """
    h_f(x, y_f) = <w_f[y_f], φ_f(x)>.
    φ_f(x) は x[start:stop] (feature_slice), None なら定数特徴 [1.0].
    weights の形は (|Y_{k1}|, ..., |Y_{kr}|, d_f).
    """
    scope: Tuple[int, ...]
    weights: np.ndarray
    feature_slice: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.ndim != len(self.scope) + 1:
            raise ValueError(f"weights for scope {self.scope} must have {len(self.scope) + 1} axes, got {w.ndim}")
        if self.feature_slice is None and w.shape[-1] != 1:
            raise ValueError("constant-feature factor needs a trailing axis of size 1")
        if self.feature_slice is not None:
            a, b = self.feature_slice
            if w.shape[-1] != b - a:
                raise ValueError(f"feature slice {self.feature_slice} has width {b - a}, weights have {w.shape[-1]}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scope", tuple(int(k) for k in self.scope))

    @classmethod
    def tabulated(cls, scope: Sequence[int], table: Any) -> "LinearFactor":
        t = np.asarray(table, dtype=float)
        return cls(tuple(scope), t[..., None], None)

    def features(self, x: np.ndarray) -> np.ndarray:
        if self.feature_slice is None:
            return np.ones(1)
        a, b = self.feature_slice
        if b > x.shape[0]:
            raise DimensionMismatch(f"factor reads x[{a}:{b}] but x has dimension {x.shape[0]}")
        return x[a:b]

    def local_table(self, x: np.ndarray) -> np.ndarray:
        return self.weights @ self.features(x)


class FactorGraphModel:
    """h(x, y) = Σ_f h_f(x, y_f)"""

    def __init__(self, alphabet_sizes: Sequence[int], factors: Sequence[LinearFactor], names: Optional[Sequence[str]] = None):
        self.alphabet_sizes: Tuple[int, ...] = tuple(int(a) for a in alphabet_sizes)
        if any(a < 1 for a in self.alphabet_sizes):
            raise ValueError(f"alphabet sizes must be positive, got {self.alphabet_sizes}")
        self.factors: Tuple[LinearFactor, ...] = tuple(factors)
        names = list(names) if names is not None else [f"f{i}" for i in range(len(self.factors))]
        self.graph = FactorGraph(len(self.alphabet_sizes), [Factor(n, f.scope) for n, f in zip(names, self.factors)])
        for f in self.factors:
            expect = tuple(self.alphabet_sizes[k] for k in f.scope)
            if f.weights.shape[:-1] != expect:
                raise ValueError(f"factor over {f.scope} has table shape {f.weights.shape[:-1]}, expected {expect}")

    @property
    def length(self) -> int:
        return len(self.alphabet_sizes)

    @property
    def num_sequences(self) -> int:
        return math.prod(self.alphabet_sizes)

    def alphabet_sizes_for(self, x: Sequence[float]) -> Tuple[int, ...]:
        return self.alphabet_sizes

    def model_for(self, x: Sequence[float]) -> "FactorGraphModel":
        return self

    def is_chain(self) -> bool:
        return self.graph.is_chain()

    def tables(self, x: Sequence[float]) -> List[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [f.local_table(x) for f in self.factors]

    def _check_labels(self, y: Sequence[int]) -> Tuple[int, ...]:
        y = tuple(int(v) for v in y)
        if len(y) != self.length:
            raise LengthMismatch(f"expected a sequence of length {self.length}, got {len(y)}")
        for k, (v, a) in enumerate(zip(y, self.alphabet_sizes)):
            if not 1 <= v <= a:
                raise LabelOutOfRange(f"label {v} at position {k + 1} outside [1, {a}]")
        return y

    def score_terms(self, x: Sequence[float], y: Sequence[int]) -> List[float]:
        y = self._check_labels(y)
        out = []
        for f, t in zip(self.factors, self.tables(x)):
            out.append(float(t[tuple(y[k] - 1 for k in f.scope)]))
        return out

    def score_decomposed(self, x: Sequence[float], y: Sequence[int]) -> float:
        return math.fsum(self.score_terms(x, y))

    def sequence_score(self, x: Sequence[float], y: Sequence[int]) -> float:
        return self.score_decomposed(x, y)

    def chain_potentials(self, x: Sequence[float]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """鎖グラフの因子を unary (l 個) と pair (l-1 個) にまとめる."""
        if not self.is_chain():
            raise NotAChain("factor graph is not a chain")
        unary = [np.zeros(a) for a in self.alphabet_sizes]
        pair = [np.zeros((self.alphabet_sizes[k], self.alphabet_sizes[k + 1])) for k in range(self.length - 1)]
        for f, t in zip(self.factors, self.tables(x)):
            if len(f.scope) == 1:
                unary[f.scope[0]] = unary[f.scope[0]] + t
            else:
                a, b = f.scope
                if a < b:
                    pair[a] = pair[a] + t
                else:
                    pair[b] = pair[b] + t.T
        return unary, pair

    def predict(self, x: Sequence[float]) -> Tuple[int, ...]:
        from cvlearn.structured.decoding import brute_force_decode, viterbi

        if self.is_chain():
            return viterbi(self, x)
        return brute_force_decode(self, x)


def chain_model(unary_tables: Sequence[Any], pair_tables: Sequence[Any]) -> FactorGraphModel:
    """入力に依存しない表から鎖モデルを作る (テスト・小例用)."""
    unary = [np.asarray(t, dtype=float) for t in unary_tables]
    pair = [np.asarray(t, dtype=float) for t in pair_tables]
    if len(pair) != max(len(unary) - 1, 0):
        raise ValueError(f"{len(unary)} positions need {len(unary) - 1} pair tables, got {len(pair)}")
    sizes = [t.shape[0] for t in unary]
    factors = [LinearFactor.tabulated((k,), t) for k, t in enumerate(unary)]
    factors += [LinearFactor.tabulated((k, k + 1), t) for k, t in enumerate(pair)]
    names = [f"e{k}" for k in range(len(unary))] + [f"t{k}" for k in range(len(pair))]
    return FactorGraphModel(sizes, factors, names)


# -----------------------------
# Shared-weight chain (variable length)
# -----------------------------

@dataclass(frozen=True, eq=False)
class SharedChainModel:
    """
    位置間で重みを共有する鎖モデル. x は長さ l * d_pos で位置ごとの特徴を並べたもの.
      h(x, y) = Σ_k <E[y_k], x_k> + Σ_k T[y_k, y_{k+1}]
    例ごとに長さ l が変わってよい.
    """
    emission: np.ndarray    # (Y, d_pos)
    transition: np.ndarray  # (Y, Y)

    def __post_init__(self) -> None:
        E = np.array(self.emission, dtype=float)
        T = np.array(self.transition, dtype=float)
        if E.ndim != 2 or T.shape != (E.shape[0], E.shape[0]):
            raise ValueError(f"emission {E.shape} and transition {T.shape} disagree on the alphabet")
        E.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "emission", E)
        object.__setattr__(self, "transition", T)

    @property
    def alphabet_size(self) -> int:
        return int(self.emission.shape[0])

    @property
    def d_pos(self) -> int:
        return int(self.emission.shape[1])

    def length_of(self, x: Sequence[float]) -> int:
        n = len(x)
        if self.d_pos == 0 or n % self.d_pos != 0 or n == 0:
            raise DimensionMismatch(f"input of dimension {n} is not a multiple of d_pos={self.d_pos}")
        return n // self.d_pos

    def for_length(self, l: int) -> FactorGraphModel:
        Y, dp = self.alphabet_size, self.d_pos
        factors = [LinearFactor((k,), self.emission, (k * dp, (k + 1) * dp)) for k in range(l)]
        factors += [LinearFactor((k, k + 1), self.transition[..., None], None) for k in range(l - 1)]
        names = [f"e{k}" for k in range(l)] + [f"t{k}" for k in range(l - 1)]
        return FactorGraphModel([Y] * l, factors, names)

    def model_for(self, x: Sequence[float]) -> FactorGraphModel:
        return self.for_length(self.length_of(x))

    def alphabet_sizes_for(self, x: Sequence[float]) -> Tuple[int, ...]:
        return (self.alphabet_size,) * self.length_of(x)

    def is_chain(self) -> bool:
        return True

    def chain_potentials(self, x: Sequence[float]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        xs = np.asarray(x, dtype=float).reshape(self.length_of(x), self.d_pos)
        unary = list(xs @ self.emission.T)
        pair = [self.transition] * (xs.shape[0] - 1)
        return unary, pair

    def score_decomposed(self, x: Sequence[float], y: Sequence[int]) -> float:
        return self.model_for(x).score_decomposed(x, y)

    def sequence_score(self, x: Sequence[float], y: Sequence[int]) -> float:
        return self.score_decomposed(x, y)

    def predict(self, x: Sequence[float]) -> Tuple[int, ...]:
        from cvlearn.structured.decoding import viterbi

        return viterbi(self, x)

    def params(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.emission, self.transition


def chain_model_to_dict(model: SharedChainModel) -> Dict[str, Any]:
    return {
        "alphabet_size": model.alphabet_size,
        "d_pos": model.d_pos,
        "emission": model.emission.tolist(),
        "transition": model.transition.tolist(),
    }


def parse_chain_model(text: str) -> SharedChainModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    for key in ("emission", "transition"):
        if key not in doc:
            raise ParseError(f"Missing key '{key}'", field=key)
    try:
        model = SharedChainModel(np.asarray(doc["emission"], dtype=float), np.asarray(doc["transition"], dtype=float))
    except ValueError as e:
        raise ParseError(str(e), field="emission") from e
    if "alphabet_size" in doc and int(doc["alphabet_size"]) != model.alphabet_size:
        raise ParseError(f"alphabet_size {doc['alphabet_size']} disagrees with emission rows", field="alphabet_size")
    return model


def dump_chain_model(model: SharedChainModel) -> str:
    return json.dumps(chain_model_to_dict(model), ensure_ascii=False, separators=(",", ":"))


def load_chain_model(path: str | Path) -> SharedChainModel:
    with Path(path).open("r", encoding="utf-8") as f:
        return parse_chain_model(f.read())


# -----------------------------
# Structured dataset (JSON lines)
# -----------------------------

@dataclass(frozen=True)
class StructuredExample:
    x: Tuple[float, ...]
    y: Tuple[int, ...]
    l: int = field(default=0)

    def __post_init__(self) -> None:
        if self.l == 0:
            object.__setattr__(self, "l", len(self.y))
        if self.y and len(self.y) != self.l:
            raise LengthMismatch(f"declared l={self.l} but y has length {len(self.y)}")


def parse_dataset(text: str) -> List[StructuredExample]:
    out: List[StructuredExample] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", line=lineno) from e
        if not isinstance(doc, dict) or "x" not in doc:
            raise ParseError("each line needs an object with 'x'", line=lineno, field="x")
        y = tuple(int(v) for v in doc.get("y", []))
        l = int(doc.get("l", len(y)))
        try:
            out.append(StructuredExample(tuple(float(v) for v in doc["x"]), y, l))
        except LengthMismatch as e:
            raise ParseError(str(e), line=lineno, field="l") from e
    return out


def load_dataset(path: str | Path) -> List[StructuredExample]:
    with Path(path).open("r", encoding="utf-8") as f:
        return parse_dataset(f.read())
