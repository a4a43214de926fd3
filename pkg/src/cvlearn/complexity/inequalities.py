from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, Optional

import numpy as np

from cvlearn.complexity.estimators import (
    DEFAULT_TRIALS,
    summarize,
    all_sign_vectors,
    empirical_local_rademacher,
    gaussian_draws,
    rademacher_draws,
)
from cvlearn.complexity.oracles import FiniteClassOracle, LinearBallOracle, SupremumOracle
from cvlearn.domain.hypotheses import sample_unit_ball
from cvlearn.domain.losses import phi_rho
from cvlearn.errors import DimensionMismatch

logger = logging.getLogger(__name__)

# 3-sigma
SIGMA_LEVEL = 3.0
EXACT_TOL = 1e-12


@dataclass(frozen=True)
class InequalityReport:
    """lhs <= rhs (+ slack) を確かめた結果."""
    name: str
    lhs_mean: float
    rhs_mean: float
    diff_mean: float
    std_error: float
    slack: float
    holds: bool
    trials: int
    seed: int
    exact: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "lhs_mean": self.lhs_mean,
            "rhs_mean": self.rhs_mean,
            "diff_mean": self.diff_mean,
            "std_error": self.std_error,
            "slack": self.slack,
            "holds": self.holds,
            "trials": self.trials,
            "seed": self.seed,
            "exact": self.exact,
        }


def _paired_report(name: str, lhs: np.ndarray, rhs: np.ndarray, seed: int, exact: bool) -> InequalityReport:
    d = lhs - rhs
    diff_mean, se = summarize(d)
    if exact:
        se = 0.0
        slack = EXACT_TOL
    else:
        slack = SIGMA_LEVEL * se + EXACT_TOL
    holds = bool(diff_mean <= slack)
    if not holds:
        logger.warning("%s violated: diff=%.6g slack=%.3g", name, diff_mean, slack)
    return InequalityReport(
        name=name,
        lhs_mean=float(lhs.mean()),
        rhs_mean=float(rhs.mean()),
        diff_mean=diff_mean,
        std_error=se,
        slack=slack,
        holds=holds,
        trials=int(lhs.shape[0]),
        seed=int(seed),
        exact=exact,
    )


def _signs(n: int, trials: int, seed: int, exact: bool) -> np.ndarray:
    return all_sign_vectors(n) if exact else rademacher_draws(n, trials, seed)


# -----------------------------
# R_S(H_c) <= R_S(H)
# -----------------------------

def check_masked_leq(
    base: SupremumOracle,
    masked: SupremumOracle,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    exact: bool = False,
) -> InequalityReport:
    """同じ σ で両辺を評価する対応のある比較. exact=True なら σ を全列挙する."""
    if base.n_terms != masked.n_terms:
        raise ValueError(f"oracles disagree on m: {base.n_terms} vs {masked.n_terms}")
    sigma = _signs(base.n_terms, trials, seed, exact)
    return _paired_report("masked_rademacher_leq", masked.sup_batch(sigma), base.sup_batch(sigma), seed, exact)


# -----------------------------
# Gaussian comparison for the max-of-coordinates class
# -----------------------------

def masked_max_values(values: np.ndarray, feasible: np.ndarray, M: float) -> np.ndarray:
    """
    values[n, j, i] = h_j(x_i) (メンバー n). 戻り値 [n, i] = max_j h_{c,j}(x_i),
    h_{c,j}(x_i) = h_j(x_i) if c(x_i, j) else -M.
    """
    values = np.asarray(values, dtype=float)
    F = np.asarray(feasible, dtype=bool)  # (m, K)
    masked = np.where(F.T[None, :, :], values, -float(M))
    return masked.max(axis=1)


def _independent_report(name: str, lhs: np.ndarray, rhs: np.ndarray, trials: int, seed: int) -> InequalityReport:
    lm, ls = summarize(lhs)
    rm, rs = summarize(rhs)
    se = math.sqrt(ls ** 2 + rs ** 2)
    slack = SIGMA_LEVEL * se + EXACT_TOL
    holds = bool(lm - rm <= slack)
    if not holds:
        logger.warning("%s violated: lhs=%.6g rhs=%.6g slack=%.3g", name, lm, rm, slack)
    return InequalityReport(
        name=name,
        lhs_mean=lm,
        rhs_mean=rm,
        diff_mean=lm - rm,
        std_error=se,
        slack=slack,
        holds=holds,
        trials=int(trials),
        seed=int(seed),
    )


def check_gaussian_comparison(
    values: np.ndarray,
    feasible: np.ndarray,
    M: float,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> InequalityReport:
    """
    LHS = (1/m) E_g sup_h Σ_i g_i max_j h_{c,j}(x_i)
    RHS = (1/m) E_g sup_h Σ_i Σ_j g_{(j-1)m+i} h_j(x_i)
    両辺は独立なガウス列で推定し, LHS <= RHS + 3 * 合成標準誤差 を確かめる.
    """
    values = np.asarray(values, dtype=float)
    N, K, m = values.shape
    lhs_oracle = FiniteClassOracle(masked_max_values(values, feasible, M))
    # 項の並び (j-1)m + i は values[n, j, i] の行優先展開と一致する
    rhs_oracle = FiniteClassOracle(values.reshape(N, K * m))

    lhs = lhs_oracle.sup_batch(gaussian_draws(m, trials, seed, stream=1)) / m
    rhs = rhs_oracle.sup_batch(gaussian_draws(K * m, trials, seed, stream=2)) / m
    return _independent_report("gaussian_comparison", lhs, rhs, trials, seed)


def stacked_ball_oracle(X: np.ndarray, K: int, p: float) -> LinearBallOracle:
    """項 (j-1)m + i が <w_j, x_i> になるように x を K 回並べた ℓ_{2,p} 球."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    return LinearBallOracle(np.tile(X, (K, 1)), np.repeat(np.arange(1, K + 1), m), K, p)


def check_gaussian_comparison_linear(
    X: np.ndarray,
    feasible: np.ndarray,
    K: int,
    p: float,
    M: float,
    members: int = 256,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
) -> InequalityReport:
    """
    h_j(x) = <w_j, x>, ‖w‖_{2,p} <= 1 のときのガウス比較.
    RHS は球全体の閉形式 (stacked_ball_oracle). LHS の sup は閉形式が無いので
    球から引いた members 個の上で取る. 部分集合なので LHS は小さくなる側にしか振れない.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = X.shape
    if np.asarray(feasible).shape != (m, K):
        raise DimensionMismatch(f"feasible has shape {np.asarray(feasible).shape}, expected ({m}, {K})")
    W = np.stack([sample_unit_ball(d, K, p, seed=[int(seed), 8, n]).weights for n in range(members)])
    values = np.einsum("nkd,id->nki", W, X)
    lhs_oracle = FiniteClassOracle(masked_max_values(values, feasible, M))

    lhs = lhs_oracle.sup_batch(gaussian_draws(m, trials, seed, stream=1)) / m
    rhs = stacked_ball_oracle(X, K, p).sup_batch(gaussian_draws(K * m, trials, seed, stream=2)) / m
    return _independent_report("gaussian_comparison_linear", lhs, rhs, trials, seed)


# -----------------------------
# Lemmas used by the margin bound
# -----------------------------

def check_contraction(
    values: np.ndarray,
    rho: float,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    exact: bool = False,
) -> InequalityReport:
    """R_S(Φ_ρ ∘ G) <= (1/ρ) R_S(G) (Φ_ρ は 1/ρ-Lipschitz)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    sigma = _signs(values.shape[1], trials, seed, exact)
    lhs = FiniteClassOracle(phi_rho(values, rho)).sup_batch(sigma)
    rhs = FiniteClassOracle(values).sup_batch(sigma) / rho
    return _paired_report("contraction", lhs, rhs, seed, exact)


def check_max_subadditivity(
    values_1: np.ndarray,
    values_2: np.ndarray,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    exact: bool = False,
) -> InequalityReport:
    """R_S({max(f_1, f_2)}) <= R_S(F_1) + R_S(F_2)."""
    v1 = np.atleast_2d(np.asarray(values_1, dtype=float))
    v2 = np.atleast_2d(np.asarray(values_2, dtype=float))
    if v1.shape[1] != v2.shape[1]:
        raise ValueError("both classes must be evaluated on the same sample")
    pairs = np.maximum(v1[:, None, :], v2[None, :, :]).reshape(-1, v1.shape[1])
    sigma = _signs(v1.shape[1], trials, seed, exact)
    lhs = FiniteClassOracle(pairs).sup_batch(sigma)
    rhs = FiniteClassOracle(v1).sup_batch(sigma) + FiniteClassOracle(v2).sup_batch(sigma)
    return _paired_report("max_subadditivity", lhs, rhs, seed, exact)


def check_local_monotone(
    values: np.ndarray,
    radii: np.ndarray,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    weights: Optional[np.ndarray] = None,
) -> Dict[str, Any]:
    """r を増やしたときの局所 Rademacher 推定列. 同じ σ を使うので単調性は厳密に出る."""
    means = [
        empirical_local_rademacher(values, float(r), trials=trials, seed=seed, weights=weights).mean
        for r in radii
    ]
    monotone = all(b >= a - EXACT_TOL for a, b in zip(means, means[1:]))
    return {"radii": [float(r) for r in radii], "means": means, "monotone": monotone}
