from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Any, Dict, List, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from cvlearn.errors import DimensionMismatch, InvalidP

logger = logging.getLogger(__name__)


@runtime_checkable
class SupremumOracle(Protocol):
    """係数ベクトル c (長さ n_terms) に対して sup_{g∈G} Σ_i c_i g(z_i) を厳密に返す."""

    @property
    def n_terms(self) -> int:
        ...

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        """C は (trials, n_terms). 戻り値は (trials,)."""
        ...


def sup_of(oracle: SupremumOracle, c: Sequence[float]) -> float:
    return float(oracle.sup_batch(np.asarray(c, dtype=float)[None, :])[0])


# -----------------------------
# ℓ_{2,p} ball: closed form
# -----------------------------

def dual_exponent(p: float) -> float:
    p = float(p)
    if not 1.0 <= p <= 2.0:
        raise InvalidP(f"p must lie in [1, 2], got {p}")
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def _dual_group_norms(V: np.ndarray, q: float) -> np.ndarray:
    """V は (..., K, D). 各 V の ℓ_{2,q} ノルム."""
    rows = np.linalg.norm(V, axis=-1)
    if math.isinf(q):
        return rows.max(axis=-1)
    return np.linalg.norm(rows, ord=q, axis=-1)


def sup_linear_ball(coeff: np.ndarray, features: np.ndarray, p: float) -> float:
    """
    sup_{‖w‖_{2,p} ≤ 1} Σ_{i,y} coeff[i, y] <w_y, φ(x_i)>
      = ‖V‖_{2,q},  V_y = Σ_i coeff[i, y] φ(x_i),  1/p + 1/q = 1.
    """
    q = dual_exponent(p)
    coeff = np.asarray(coeff, dtype=float)
    features = np.asarray(features, dtype=float)
    if coeff.ndim != 2 or features.ndim != 2 or coeff.shape[0] != features.shape[0]:
        raise DimensionMismatch(f"coeff {coeff.shape} and features {features.shape} disagree on m")
    V = coeff.T @ features
    return float(_dual_group_norms(V, q))


# -----------------------------
# ℓ_{2,p} ball: projected ascent (cross-check)
# -----------------------------

def _project_l1(n: np.ndarray) -> np.ndarray:
    """非負ベクトルの ℓ1 単位球への射影 (ソートによる閾値)."""
    if n.sum() <= 1.0:
        return n
    u = np.sort(n)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n.size + 1)
    cond = u - css / idx > 0
    k = idx[cond][-1]
    tau = css[k - 1] / k
    return np.maximum(n - tau, 0.0)


def _solve_rows(n: np.ndarray, lam: float, p: float, iters: int) -> np.ndarray:
    # r + lam * p * r^{p-1} = n を r ∈ [0, n] で解く (左辺は r について単調増加)
    lo = np.zeros_like(n)
    hi = n.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = mid + lam * p * mid ** (p - 1.0) > n
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
    return 0.5 * (lo + hi)


def _project_lp(n: np.ndarray, p: float, iters: int = 64) -> np.ndarray:
    """非負ベクトルの ℓp 単位球への射影 (1 < p < 2). λ と各成分の二重二分法."""
    if np.sum(n ** p) <= 1.0:
        return n
    lo, hi = 0.0, 1.0
    while np.sum(_solve_rows(n, hi, p, iters) ** p) > 1.0:
        hi *= 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.sum(_solve_rows(n, mid, p, iters) ** p) > 1.0:
            lo = mid
        else:
            hi = mid
    return _solve_rows(n, hi, p, iters)


def project_group_ball(W: np.ndarray, p: float) -> np.ndarray:
    """‖·‖_{2,p} 単位球への射影. 行方向はそのまま, 行ノルムだけを ℓp 球へ射影する."""
    dual_exponent(p)
    norms = np.linalg.norm(W, axis=1)
    if p == 2.0:
        total = np.linalg.norm(norms)
        return W if total <= 1.0 else W / total
    if p == 1.0:
        r = _project_l1(norms)
    else:
        r = _project_lp(norms, p)
    scale = np.divide(r, norms, out=np.zeros_like(norms), where=norms > 0)
    return W * scale[:, None]


def projected_ascent_sup(
    coeff: np.ndarray,
    features: np.ndarray,
    p: float,
    steps: int = 200,
    growth: float = 2.0,
    tol: float = 1e-10,
) -> float:
    """
    sup_linear_ball を射影勾配上昇で数値的に求める (閉形式の検算用).
    刻みは 1/‖V‖ から始めて毎回 growth 倍する. 目的値の変化が tol * ‖V‖ 以下で止める.
    """
    coeff = np.asarray(coeff, dtype=float)
    features = np.asarray(features, dtype=float)
    V = coeff.T @ features
    scale = float(np.linalg.norm(V))
    if scale == 0.0:
        return 0.0
    eta = 1.0 / scale
    W = np.zeros_like(V)
    value = 0.0
    for _ in range(steps):
        W = project_group_ball(W + eta * V, p)
        new_value = float(np.sum(W * V))
        if abs(new_value - value) <= tol * scale:
            return new_value
        value = new_value
        eta *= growth
    logger.debug("projected ascent stopped after %d steps", steps)
    return value


# -----------------------------
# Oracles
# -----------------------------

def _one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    E = np.zeros((labels.shape[0], K))
    E[np.arange(labels.shape[0]), labels - 1] = 1.0
    return E


@dataclass(frozen=True, eq=False)
class LinearBallOracle:
    """G = {(x, y) ↦ h(x, y) : ‖w‖_{2,p} ≤ 1} を S = ((x_i, y_i)) 上で."""
    features: np.ndarray  # (m, D) = φ(x_i)
    labels: np.ndarray    # (m,) 1-based
    K: int
    p: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        dual_exponent(self.p)

    @property
    def n_terms(self) -> int:
        return int(self.features.shape[0])

    def aggregate(self, C: np.ndarray) -> np.ndarray:
        # V[t, y, :] = Σ_i C[t, i] 1[y_i = y] φ(x_i)
        E = _one_hot(self.labels, self.K)
        return np.einsum("ti,iy,id->tyd", C, E, self.features)

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        return _dual_group_norms(self.aggregate(np.atleast_2d(C)), dual_exponent(self.p))


@dataclass(frozen=True, eq=False)
class MaskedLinearBallOracle:
    """
    H_c を S 上で: c(x_i, y_i) = 0 の項は h_c = -M の定数なので双対ノルムの集約から外し,
    -M Σ_{c=0} σ_i を足す. 厳密.
    """
    base: LinearBallOracle
    feasible: np.ndarray  # (m,) bool, c(x_i, y_i)
    M: float

    def __post_init__(self) -> None:
        f = np.asarray(self.feasible, dtype=bool)
        if f.shape != (self.base.n_terms,):
            raise DimensionMismatch(f"feasible flags have shape {f.shape}, expected ({self.base.n_terms},)")
        object.__setattr__(self, "feasible", f)

    @property
    def n_terms(self) -> int:
        return self.base.n_terms

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(C)
        kept = np.where(self.feasible[None, :], C, 0.0)
        const = -self.M * np.where(self.feasible[None, :], 0.0, C).sum(axis=1)
        return self.base.sup_batch(kept) + const


@dataclass(frozen=True, eq=False)
class ProjectionClassOracle:
    """
    Π_1(H) = {x ↦ h(x, y) : y ∈ [K], h ∈ H}. どの p でも 1 行は ℓ2 ノルム 1 まで取れるので
    sup = ‖Σ_i c_i φ(x_i)‖_2.
    """
    features: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=float)))

    @property
    def n_terms(self) -> int:
        return int(self.features.shape[0])

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(C) @ self.features, axis=1)


@dataclass(frozen=True, eq=False)
class LabelSweepOracle:
    """
    Π_1(H) を ℓ_{2,p} 球の閉形式から: y を固定して全項のラベルを y にした
    LinearBallOracle の sup を y ∈ [K] で最大化する.
    """
    features: np.ndarray
    K: int
    p: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=float)))
        dual_exponent(self.p)

    @property
    def n_terms(self) -> int:
        return int(self.features.shape[0])

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(C)
        per_label = [
            LinearBallOracle(self.features, np.full(self.n_terms, y), self.K, self.p).sup_batch(C)
            for y in range(1, self.K + 1)
        ]
        return np.max(per_label, axis=0)


@dataclass(frozen=True, eq=False)
class FiniteClassOracle:
    """有限クラス. values[j, i] = g_j(z_i)."""
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[0] == 0:
            raise ValueError("finite class must be non-empty")
        object.__setattr__(self, "values", v)

    @property
    def n_terms(self) -> int:
        return int(self.values.shape[1])

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(C) @ self.values.T).max(axis=1)


@dataclass(frozen=True, eq=False)
class ScaledOracle:
    base: Any
    alpha: float

    @property
    def n_terms(self) -> int:
        return self.base.n_terms

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        if self.alpha < 0:
            raise ValueError("ScaledOracle needs alpha >= 0")
        return self.alpha * self.base.sup_batch(C)


# -----------------------------
# Factored (factor-graph) linear class
# -----------------------------

@dataclass(frozen=True)
class FactorTerm:
    """例 i の因子 f. template 毎に重みを共有し, local_size は |Y_f|."""
    example: int
    template: str
    local_size: int
    features: Tuple[float, ...]


@dataclass(eq=False)
class FactoredLinearClass:
    """
    H = {h : h_f(x, y_f) = <θ_{t(f)}[y_f], φ_f(x)>, ‖θ_t‖_F ≤ 1 (template ごと)}.
    sup_h Σ_i Σ_{f∈F_i} Σ_{y_f} √|F_i| ε_{i,f,y} h_f(x_i, y_f) = Σ_t ‖V_t‖_F.
    """
    terms: List[FactorTerm]
    n_examples: int
    _blocks: Dict[str, np.ndarray] = field(init=False, repr=False)
    _n_signs: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError("factored class needs at least one factor term")
        per_example = np.zeros(self.n_examples, dtype=int)
        for t in self.terms:
            per_example[t.example] += 1

        # template ごとに ε → vec(V_t) の線形写像を作る
        dims: Dict[str, Tuple[int, int]] = {}
        for t in self.terms:
            shape = (t.local_size, len(t.features))
            if dims.setdefault(t.template, shape) != shape:
                raise DimensionMismatch(f"template {t.template!r} used with shapes {dims[t.template]} and {shape}")
        n_signs = sum(t.local_size for t in self.terms)
        blocks = {name: np.zeros((a * d, n_signs)) for name, (a, d) in dims.items()}
        col = 0
        for t in self.terms:
            w = math.sqrt(per_example[t.example])
            phi = np.asarray(t.features, dtype=float)
            d = phi.shape[0]
            B = blocks[t.template]
            for y in range(t.local_size):
                B[y * d:(y + 1) * d, col + y] = w * phi
            col += t.local_size
        self._blocks = blocks
        self._n_signs = n_signs

    @property
    def n_terms(self) -> int:
        return self._n_signs

    def sup_batch(self, C: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(C)
        total = np.zeros(C.shape[0])
        for B in self._blocks.values():
            total += np.linalg.norm(C @ B.T, axis=1)
        return total

    @classmethod
    def for_shared_chain(cls, xs: Sequence[Sequence[float]], alphabet_size: int, d_pos: int) -> "FactoredLinearClass":
        """SharedChainModel の族: emission (Y, d_pos) と transition (Y*Y, 1) の 2 テンプレート."""
        terms: List[FactorTerm] = []
        for i, x in enumerate(xs):
            x = np.asarray(x, dtype=float)
            l = x.shape[0] // d_pos
            for k in range(l):
                terms.append(FactorTerm(i, "emission", alphabet_size, tuple(x[k * d_pos:(k + 1) * d_pos])))
            for k in range(l - 1):
                terms.append(FactorTerm(i, "transition", alphabet_size * alphabet_size, (1.0,)))
        return cls(terms, len(xs))
