from __future__ import annotations

from dataclasses import dataclass
import itertools
import logging
import math
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from cvlearn.domain.requirements import (
    STRUCTURED,
    Requirement,
    evaluate_structured,
    forbidden_pairs,
    position_allowed,
    required_labels,
)
from cvlearn.errors import (
    Infeasible,
    KindMismatch,
    MaskConstantViolated,
    NonpositiveRho,
    NotAChain,
    TooLarge,
)

logger = logging.getLogger(__name__)

DEFAULT_SIZE_CAP = 10**6
DEFAULT_ENUMERATION_CAP = 4096


# ============================================================
# 鎖上の max-sum DP (ビットマスク状態付き)
# ============================================================

def _chain_dp(
    unary: Sequence[np.ndarray],
    pair: Sequence[np.ndarray],
    bits: Optional[Sequence[np.ndarray]] = None,
    n_bits: int = 0,
) -> Tuple[float, Tuple[int, ...]]:
    """
    max_y Σ_k unary[k][y_k] + Σ_k pair[k][y_k, y_{k+1}]
    ただし系列上で立てたビットの OR が全ビット (2^n_bits - 1) になるものに限る.

    後ろ向きに V_k[a, s] (s は位置 k より前で集めたビット) を作り,
    前向きに各位置で最大値を達成する最小ラベルを選ぶ. 結果は最適系列のうち辞書順最小.
    -inf は禁止を表す. 実行可能な系列が無ければ Infeasible.
    """
    l = len(unary)
    if l == 0:
        raise ValueError("empty chain")
    n_masks = 1 << n_bits
    full = n_masks - 1
    if bits is None:
        bits = [np.zeros(u.shape[0], dtype=np.int64) for u in unary]
    masks = np.arange(n_masks, dtype=np.int64)

    # s_or[k][a, s] = s | bits[k][a]
    s_or = [masks[None, :] | np.asarray(b, dtype=np.int64)[:, None] for b in bits]

    V: List[np.ndarray] = [np.empty(0)] * l
    last = s_or[l - 1]
    V[l - 1] = np.where(last == full, unary[l - 1][:, None], -np.inf)
    for k in range(l - 2, -1, -1):
        # W[a, s'] = max_b pair[a, b] + V_{k+1}[b, s']
        W = (pair[k][:, :, None] + V[k + 1][None, :, :]).max(axis=1)
        V[k] = unary[k][:, None] + np.take_along_axis(W, s_or[k], axis=1)

    best = float(V[0][:, 0].max())
    if best == -np.inf:
        raise Infeasible("no label sequence satisfies the constraints")

    seq = [int(np.argmax(V[0][:, 0]))]
    s = int(s_or[0][seq[0], 0])
    for k in range(l - 1):
        vals = pair[k][seq[-1], :] + V[k + 1][:, s]
        b = int(np.argmax(vals))
        seq.append(b)
        s = int(s_or[k + 1][b, s])
    return best, tuple(a + 1 for a in seq)


def _potentials(model: Any, x: Sequence[float]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    if not hasattr(model, "chain_potentials") or not model.is_chain():
        raise NotAChain("model is not chain-structured")
    unary, pair = model.chain_potentials(x)
    return [np.asarray(u, dtype=float) for u in unary], [np.asarray(p, dtype=float) for p in pair]


def _constrain(
    unary: List[np.ndarray],
    pair: List[np.ndarray],
    req: Requirement,
    x: Sequence[float],
) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray], int]:
    """要求を -inf マスクと must_include ビットに落とす."""
    if req.kind != STRUCTURED:
        raise KindMismatch("constrained decoding needs a structured requirement")
    sizes = [u.shape[0] for u in unary]
    allowed = position_allowed(req, x, sizes)
    unary = [np.where(a, u, -np.inf) for u, a in zip(unary, allowed)]

    pairs = forbidden_pairs(req, x)
    if pairs:
        new_pair = []
        for k, P in enumerate(pair):
            P = P.copy()
            for a, b in pairs:
                if a <= P.shape[0] and b <= P.shape[1]:
                    P[a - 1, b - 1] = -np.inf
            new_pair.append(P)
        pair = new_pair

    need = required_labels(req, x)
    bits = []
    for A in sizes:
        code = np.zeros(A, dtype=np.int64)
        for j, v in enumerate(need):
            if v <= A:
                code[v - 1] |= 1 << j
        bits.append(code)
    return unary, pair, bits, len(need)


# ============================================================
# Public decoders
# ============================================================

def viterbi(model: Any, x: Sequence[float]) -> Tuple[int, ...]:
    """argmax_y h(x, y). 同点は左から辞書順最小."""
    unary, pair = _potentials(model, x)
    return _chain_dp(unary, pair)[1]


def constrained_viterbi(model: Any, x: Sequence[float], req: Requirement) -> Tuple[int, ...]:
    """argmax_{y : c(x, y) = 1} h(x, y). 状態は (位置, ラベル, must_include ビットマスク)."""
    unary, pair = _potentials(model, x)
    unary, pair, bits, n_bits = _constrain(unary, pair, req, x)
    return _chain_dp(unary, pair, bits, n_bits)[1]


def feasible_sequence_exists(req: Requirement, x: Sequence[float], alphabet_sizes: Sequence[int]) -> bool:
    unary = [np.zeros(int(a)) for a in alphabet_sizes]
    pair = [np.zeros((int(a), int(b))) for a, b in zip(alphabet_sizes, alphabet_sizes[1:])]
    unary, pair, bits, n_bits = _constrain(unary, pair, req, x)
    try:
        _chain_dp(unary, pair, bits, n_bits)
    except Infeasible:
        return False
    return True


def score_range(model: Any, x: Sequence[float]) -> Tuple[float, float]:
    """(min_y h(x, y), max_y h(x, y)) を DP で厳密に求める."""
    unary, pair = _potentials(model, x)
    hi = _chain_dp(unary, pair)[0]
    lo = -_chain_dp([-u for u in unary], [-p for p in pair])[0]
    return lo, hi


def _sizes(model: Any, x: Sequence[float]) -> Tuple[int, ...]:
    return tuple(int(a) for a in model.alphabet_sizes_for(x))


def _check_cap(sizes: Sequence[int], size_cap: int) -> None:
    n = math.prod(sizes)
    if n > size_cap:
        raise TooLarge(f"|Y| = {n} exceeds the enumeration cap {size_cap}")


def brute_force_decode(
    model: Any,
    x: Sequence[float],
    req: Optional[Requirement] = None,
    size_cap: int = DEFAULT_SIZE_CAP,
) -> Tuple[int, ...]:
    """全列挙による (制約付き) argmax. 列挙は辞書順で, 厳密に大きいときだけ更新する."""
    sizes = _sizes(model, x)
    _check_cap(sizes, size_cap)
    best: Optional[Tuple[int, ...]] = None
    best_score = -np.inf
    for y in itertools.product(*(range(1, a + 1) for a in sizes)):
        if req is not None and not evaluate_structured(req, x, y):
            continue
        s = model.sequence_score(x, y)
        if best is None or s > best_score:
            best, best_score = y, s
    if best is None:
        raise Infeasible("no label sequence satisfies the constraints")
    return best


# ============================================================
# Structured masking
# ============================================================

@dataclass(frozen=True, eq=False)
class MaskedStructuredScorer:
    """h_c(x, y) = h(x, y) if c(x, y) = 1 else -M. 因子分解は持たない."""
    base: Any
    requirement: Requirement
    M: float

    def alphabet_sizes_for(self, x: Sequence[float]) -> Tuple[int, ...]:
        return _sizes(self.base, x)

    def is_chain(self) -> bool:
        return False

    def sequence_score(self, x: Sequence[float], y: Sequence[int]) -> float:
        s = float(self.base.sequence_score(x, y))
        if abs(s) >= self.M:
            raise MaskConstantViolated(f"|h(x, y)| = {abs(s):.6g} >= M = {self.M:.6g}")
        return s if evaluate_structured(self.requirement, x, y) else -self.M

    def predict(self, x: Sequence[float]) -> Tuple[int, ...]:
        return brute_force_decode(self, x)


def mask_structured(model: Any, req: Requirement, M: float) -> MaskedStructuredScorer:
    if req.kind != STRUCTURED:
        raise KindMismatch("mask_structured needs a structured requirement")
    return MaskedStructuredScorer(model, req, float(M))


def structured_mask_constant(model: Any, inputs: Sequence[Sequence[float]]) -> float:
    """M = max_{x ∈ inputs} max_y |h(x, y)| + 1"""
    top = 0.0
    for x in inputs:
        lo, hi = score_range(model, x)
        top = max(top, abs(lo), abs(hi))
    return top + 1.0


# ============================================================
# Loss-augmented inference
# ============================================================

def _flat_loss_augmented_max(h: Any, x: Sequence[float], y: int, rho: float, mode: str) -> float:
    s = np.asarray(h.scores(x), dtype=float)
    others = np.delete(s, int(y) - 1)
    if others.size == 0:
        return -np.inf
    gap = (s[int(y) - 1] - others) / rho
    # l = 1 の Hamming 損失は競合ラベルすべてで 1
    vals = 1.0 - gap
    return float(vals.max())


def loss_augmented_max(
    h: Any,
    x: Sequence[float],
    y_true: Any,
    rho: float,
    mode: str = "add",
    size_cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """
    add : max_{y' != y} L(y', y) - (h(x, y) - h(x, y'))/ρ
    mult: max_{y' != y} L(y', y) (1 - (h(x, y) - h(x, y'))/ρ)
    L は Hamming 損失. 競合系列が無ければ -inf.
    add は鎖なら DP (位置ごとに分解できる), それ以外と mult は列挙.
    """
    if not rho > 0:
        raise NonpositiveRho(f"rho must be positive, got {rho}")
    if mode not in ("add", "mult"):
        raise ValueError(f"Unknown mode: {mode!r}")

    if not hasattr(h, "sequence_score"):
        return _flat_loss_augmented_max(h, x, int(y_true), rho, mode)

    y = tuple(int(v) for v in y_true)
    sizes = _sizes(h, x)
    l = len(sizes)
    h_true = float(h.sequence_score(x, y))

    if mode == "add" and hasattr(h, "chain_potentials") and h.is_chain():
        unary, pair = _potentials(h, x)
        aug = []
        bits = []
        for k, u in enumerate(unary):
            diff = np.ones(u.shape[0]) / l
            diff[y[k] - 1] = 0.0
            aug.append(u / rho + diff)
            code = np.ones(u.shape[0], dtype=np.int64)
            code[y[k] - 1] = 0
            bits.append(code)
        try:
            best, _ = _chain_dp(aug, [p / rho for p in pair], bits, 1)
        except Infeasible:
            return -np.inf
        return best - h_true / rho

    _check_cap(sizes, size_cap)
    best = -np.inf
    for yp in itertools.product(*(range(1, a + 1) for a in sizes)):
        if yp == y:
            continue
        L = sum(a != b for a, b in zip(yp, y)) / l
        gap = (h_true - float(h.sequence_score(x, yp))) / rho
        val = L - gap if mode == "add" else L * (1.0 - gap)
        best = max(best, val)
    return best
