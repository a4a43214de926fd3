from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import logging
import math
from typing import Any, Dict, Optional, Sequence

import numpy as np

from cvlearn.complexity.oracles import SupremumOracle

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = 2000
MAX_EXACT_TERMS = 20


@dataclass(frozen=True)
class ComplexityEstimate:
    """
    Monte Carlo 推定値. std_error = 標本標準偏差 / sqrt(trials).
    正規化の約束は kind に記録する:
      rademacher, rademacher_exact, local_rademacher_* : 1/m なし
      gaussian, factor_graph_rademacher                : 1/m あり
    """
    kind: str
    mean: float
    std_error: float
    trials: int
    seed: int
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "kind": self.kind,
            "mean": self.mean,
            "std_error": self.std_error,
            "trials": self.trials,
            "seed": self.seed,
        }
        if self.extras:
            d["extras"] = dict(self.extras)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ComplexityEstimate":
        return cls(
            kind=str(d["kind"]),
            mean=float(d["mean"]),
            std_error=float(d["std_error"]),
            trials=int(d["trials"]),
            seed=int(d["seed"]),
            extras=dict(d.get("extras", {})),
        )


# -----------------------------
# Draws (per-trial derived seeds)
# -----------------------------

def rademacher_draws(n: int, trials: int, seed: int, stream: int = 0) -> np.ndarray:
    """(trials, n) の ±1 行列. 行 i は default_rng([seed, stream, i]) から作るので並べ方に依存しない."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    out = np.empty((trials, n))
    for i in range(trials):
        rng = np.random.default_rng([int(seed), int(stream), i])
        out[i] = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return out


def gaussian_draws(n: int, trials: int, seed: int, stream: int = 0) -> np.ndarray:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    out = np.empty((trials, n))
    for i in range(trials):
        rng = np.random.default_rng([int(seed), int(stream), i])
        out[i] = rng.standard_normal(n)
    return out


def all_sign_vectors(n: int) -> np.ndarray:
    if n > MAX_EXACT_TERMS:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_TERMS} terms, got {n}")
    return np.array(list(itertools.product((-1.0, 1.0), repeat=n))).reshape(-1, n)


def summarize(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if values.shape[0] < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(values.shape[0]))


def _estimate(kind: str, values: np.ndarray, trials: int, seed: int, **extras: Any) -> ComplexityEstimate:
    mean, se = summarize(values)
    logger.debug("%s: mean=%.6g se=%.3g trials=%d", kind, mean, se, trials)
    return ComplexityEstimate(kind=kind, mean=mean, std_error=se, trials=int(trials), seed=int(seed), extras=extras)


# -----------------------------
# Estimators
# -----------------------------

def empirical_rademacher(oracle: SupremumOracle, trials: int = DEFAULT_TRIALS, seed: int = 0) -> ComplexityEstimate:
    """R_S(G) = E_σ[sup_g Σ_i σ_i g(z_i)]. 1/m は掛けない."""
    sigma = rademacher_draws(oracle.n_terms, trials, seed)
    return _estimate("rademacher", oracle.sup_batch(sigma), trials, seed)


def exact_rademacher(oracle: SupremumOracle, seed: int = 0) -> ComplexityEstimate:
    """2^m 通りの σ を全列挙した厳密値 (m <= 20)."""
    sigma = all_sign_vectors(oracle.n_terms)
    values = oracle.sup_batch(sigma)
    return ComplexityEstimate(
        kind="rademacher_exact",
        mean=float(values.mean()),
        std_error=0.0,
        trials=int(sigma.shape[0]),
        seed=int(seed),
    )


def empirical_gaussian(
    oracle: SupremumOracle,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    normalizer: Optional[int] = None,
) -> ComplexityEstimate:
    """G_S(G) = (1/m) E_g[sup_g Σ_i g_i g(z_i)]. normalizer の既定は項数 m."""
    n = oracle.n_terms
    norm = float(normalizer if normalizer is not None else n)
    g = gaussian_draws(n, trials, seed)
    return _estimate("gaussian", oracle.sup_batch(g) / norm, trials, seed)


def local_scales(values: np.ndarray, r: float, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """各 g について二次モーメント制約 a^2 E[g^2] <= r を満たす最大の a ∈ [0, 1]."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if weights is None:
        second = np.mean(values ** 2, axis=1)
    else:
        w = np.asarray(weights, dtype=float)
        second = (values ** 2) @ (w / w.sum())
    with np.errstate(divide="ignore"):
        a = np.where(second > 0, np.sqrt(np.maximum(r, 0.0) / np.where(second > 0, second, 1.0)), 1.0)
    return np.minimum(a, 1.0)


def empirical_local_rademacher(
    values: np.ndarray,
    r: float,
    a_grid_size: int = 101,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    weights: Optional[np.ndarray] = None,
) -> ComplexityEstimate:
    """
    R_S({a g : a ∈ [0, 1], g ∈ G, E[(a g)^2] <= r}).
    期待値は S 上の経験二次モーメント (weights を渡せば有限分布の重み).
    a の上限は g ごとに厳密に min(1, sqrt(r / E[g^2])) で求め, 格子は検算にのみ使う.
    """
    if r < 0:
        raise ValueError(f"r must be non-negative, got {r}")
    values = np.atleast_2d(np.asarray(values, dtype=float))
    a_max = local_scales(values, r, weights)
    sigma = rademacher_draws(values.shape[1], trials, seed)
    proj = sigma @ values.T  # (trials, |G|)
    # a ∈ [0, a_max] の線形関数なので端点で最大. a = 0 は常に実行可能
    exact = np.maximum((proj * a_max[None, :]).max(axis=1), 0.0)

    grid = np.linspace(0.0, 1.0, max(int(a_grid_size), 2))
    grid_best = np.where(grid[None, :] <= a_max[:, None] + 1e-12, grid[None, :], 0.0).max(axis=1)
    grid_vals = np.maximum((proj * grid_best[None, :]).max(axis=1), 0.0)

    kind = "local_rademacher_empirical" if weights is None else "local_rademacher_distribution"
    return _estimate(kind, exact, trials, seed, r=float(r), grid_mean=float(grid_vals.mean()))


def factor_graph_rademacher(oracle: Any, trials: int = DEFAULT_TRIALS, seed: int = 0) -> ComplexityEstimate:
    """
    R^G_S(H) = (1/m) E_ε[sup_h Σ_i Σ_{f∈F_i} Σ_{y_f} √|F_i| ε_{i,f,y} h_f(x_i, y_f)].
    √|F_i| の重みは oracle (FactoredLinearClass) 側で掛ける.
    """
    eps = rademacher_draws(oracle.n_terms, trials, seed)
    m = float(oracle.n_examples)
    return _estimate("factor_graph_rademacher", oracle.sup_batch(eps) / m, trials, seed)
