from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvlearn.domain.hypotheses import LabelTable, margin
from cvlearn.errors import LengthMismatch, NonpositiveRho

logger = logging.getLogger(__name__)

Label = Union[int, Tuple[int, ...]]
LossFn = Callable[[Any, Sequence[float], Label], float]

# Hamming 損失の最大値 B
HAMMING_MAX = 1.0


# -----------------------------
# Samples / distributions
# -----------------------------

def _as_label(y: Any) -> Label:
    if isinstance(y, (list, tuple, np.ndarray)):
        return tuple(int(v) for v in y)
    return int(y)


@dataclass(frozen=True)
class Sample:
    """S = (z_1, ..., z_m)"""
    examples: Tuple[Tuple[Tuple[float, ...], Label], ...]

    def __post_init__(self) -> None:
        ex = tuple((tuple(float(v) for v in x), _as_label(y)) for x, y in self.examples)
        if not ex:
            raise ValueError("Sample needs m >= 1")
        kinds = {isinstance(y, tuple) for _, y in ex}
        if len(kinds) != 1:
            raise ValueError("Sample mixes flat and sequence labels")
        object.__setattr__(self, "examples", ex)

    @classmethod
    def from_pairs(cls, xs: Sequence[Sequence[float]], ys: Sequence[Any]) -> "Sample":
        if len(xs) != len(ys):
            raise LengthMismatch(f"{len(xs)} inputs but {len(ys)} labels")
        return cls(tuple(zip(xs, ys)))

    @property
    def m(self) -> int:
        return len(self.examples)

    @property
    def structured(self) -> bool:
        return isinstance(self.examples[0][1], tuple)

    @property
    def xs(self) -> np.ndarray:
        return np.asarray([x for x, _ in self.examples], dtype=float)

    @property
    def ys(self) -> List[Label]:
        return [y for _, y in self.examples]

    def __iter__(self):
        return iter(self.examples)

    def __len__(self) -> int:
        return self.m


@dataclass(frozen=True)
class FiniteDistribution:
    """有限台 Z 上の分布. 確率の和は 1 (許容誤差 1e-12)."""
    support: Tuple[Tuple[Tuple[float, ...], Label, float], ...]

    def __post_init__(self) -> None:
        sup = tuple((tuple(float(v) for v in x), _as_label(y), float(p)) for x, y, p in self.support)
        if not sup:
            raise ValueError("FiniteDistribution needs a non-empty support")
        probs = np.array([p for _, _, p in sup])
        if (probs < 0).any():
            raise ValueError("probabilities must be non-negative")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "support", sup)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, _, p in self.support])

    def inputs(self) -> List[Tuple[float, ...]]:
        seen: Dict[Tuple[float, ...], None] = {}
        for x, _, _ in self.support:
            seen.setdefault(x, None)
        return list(seen)

    def sample(self, m: int, rng: np.random.Generator) -> Sample:
        idx = rng.choice(len(self.support), size=int(m), p=self.probabilities)
        return Sample(tuple((self.support[i][0], self.support[i][1]) for i in idx))

    def bayes_optimal(self, num_labels: int) -> LabelTable:
        """各 x で最も確率の高いラベル (同点は最小ラベル). flat ラベル専用."""
        mass: Dict[Tuple[float, ...], np.ndarray] = {}
        for x, y, p in self.support:
            if isinstance(y, tuple):
                raise TypeError("bayes_optimal is defined for flat labels")
            mass.setdefault(x, np.zeros(num_labels))[int(y) - 1] += p
        return LabelTable({x: int(np.argmax(v)) + 1 for x, v in mass.items()}, num_labels)


# -----------------------------
# 0-1 / margin losses
# -----------------------------

def zero_one_loss(h: Any, x: Sequence[float], y: Label) -> int:
    """1[h(x) != y]. h は predict(x) を持つ予測器."""
    pred = h.predict(x)
    return int(_as_label(pred) != _as_label(y))


def zero_one_from_margin(h: Any, x: Sequence[float], y: int) -> int:
    """1[ρ_h(x, y) <= 0]. ρ = 0 (同点) も誤りに数える."""
    return int(margin(h, x, y) <= 0.0)


def empirical_zero_one_loss(h: Any, S: Sample) -> float:
    return math.fsum(zero_one_loss(h, x, y) for x, y in S) / S.m


def phi_rho(t: Any, rho: float) -> Any:
    """Φ_ρ(t) = min(1, max(0, 1 - t/ρ))"""
    if not rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {rho}")
    out = np.clip(1.0 - np.asarray(t, dtype=float) / rho, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def empirical_margin_loss(h: Any, S: Sample, rho: float) -> float:
    """L_{S,ρ}(h) = (1/m) Σ Φ_ρ(ρ_h(x_i, y_i))"""
    if not rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {rho}")
    terms = [phi_rho(margin(h, x, y), rho) for x, y in S]
    return math.fsum(terms) / S.m


@dataclass(frozen=True)
class SplitLoss:
    loss: float
    n_s0: int
    n_s1: int
    s1_errors: int
    queries: int

    @property
    def m(self) -> int:
        return self.n_s0 + self.n_s1


def empirical_zero_one_with_split(vh: Any, S: Sample) -> SplitLoss:
    """
    L_S(h_c) = (1/m) Σ_{S_1} 1[h_c(x_i) != y_i] + |S_0|/m

    S_0 は c(x_i, y_i) = 0 の例. h_c は常に実行可能なラベルを返すので S_0 では必ず誤り.
    問い合わせは検証器の loss フェーズに計上される.
    """
    before = vh.query_report().loss
    n_s0 = 0
    s1_errors = 0
    for x, y in S:
        in_s1, correct = vh.classify_example(x, int(y))
        if not in_s1:
            n_s0 += 1
        elif not correct:
            s1_errors += 1
    queries = vh.query_report().loss - before
    loss = (s1_errors + n_s0) / S.m
    return SplitLoss(loss=loss, n_s0=n_s0, n_s1=S.m - n_s0, s1_errors=s1_errors, queries=queries)


def exact_risk(h: Any, D: FiniteDistribution, loss_fn: Optional[LossFn] = None) -> float:
    """L_D(h) = Σ_z p(z) ℓ(h, z). 既定は 0-1 損失."""
    fn = loss_fn or zero_one_loss
    return math.fsum(p * fn(h, x, y) for x, y, p in D.support)


# -----------------------------
# Structured losses
# -----------------------------

def hamming_loss(y: Sequence[int], y_prime: Sequence[int]) -> float:
    """(1/l) Σ 1[y_k != y'_k]"""
    if len(y) != len(y_prime):
        raise LengthMismatch(f"sequences have lengths {len(y)} and {len(y_prime)}")
    if len(y) == 0:
        return 0.0
    return sum(int(a) != int(b) for a, b in zip(y, y_prime)) / len(y)


def structured_hamming_loss(h: Any, x: Sequence[float], y: Sequence[int]) -> float:
    """exact_risk 用: h の予測系列と y の Hamming 損失."""
    return hamming_loss(h.predict(x), y)


def phi_star(t: Any, B: float) -> Any:
    """Φ*(t) = min(B, max(0, t))"""
    if B < 0:
        raise ValueError(f"B must be non-negative, got {B}")
    out = np.clip(np.asarray(t, dtype=float), 0.0, B)
    return float(out) if out.ndim == 0 else out


def _surrogate(h: Any, S: Sample, rho: float, mode: str, B: float, size_cap: int) -> float:
    if not rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {rho}")
    from cvlearn.structured.decoding import loss_augmented_max

    terms = [
        phi_star(loss_augmented_max(h, x, y, rho, mode=mode, size_cap=size_cap), B)
        for x, y in S
    ]
    return math.fsum(terms) / S.m


def additive_surrogate_loss(
    h: Any,
    S: Sample,
    rho: float,
    B: float = HAMMING_MAX,
    size_cap: int = 4096,
) -> float:
    """L^add_{S,ρ}(h) = (1/m) Σ Φ*(max_{y' != y_i} L(y', y_i) - (h(x_i, y_i) - h(x_i, y'))/ρ)"""
    return _surrogate(h, S, rho, "add", B, size_cap)


def multiplicative_surrogate_loss(
    h: Any,
    S: Sample,
    rho: float,
    B: float = HAMMING_MAX,
    size_cap: int = 4096,
) -> float:
    """L^mult_{S,ρ}(h) = (1/m) Σ Φ*(max_{y' != y_i} L(y', y_i)(1 - (h(x_i, y_i) - h(x_i, y'))/ρ))"""
    return _surrogate(h, S, rho, "mult", B, size_cap)


def exact_surrogate_risk(
    h: Any,
    D: FiniteDistribution,
    rho: float,
    mode: str = "add",
    B: float = HAMMING_MAX,
    size_cap: int = 4096,
) -> float:
    """有限分布上の母集団サロゲート L^add_{D,ρ} / L^mult_{D,ρ}."""
    if not rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {rho}")
    from cvlearn.structured.decoding import loss_augmented_max

    return math.fsum(
        p * phi_star(loss_augmented_max(h, x, y, rho, mode=mode, size_cap=size_cap), B)
        for x, y, p in D.support
    )
