from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Any, Dict, List, Sequence, Tuple

from cvlearn.complexity.estimators import ComplexityEstimate
from cvlearn.complexity.inequalities import InequalityReport

# 表の形: {ファイル名: (列, 行)}
Tables = Dict[str, Tuple[List[str], List[Dict[str, Any]]]]

BOUND_COLUMNS = [
    "draw_id",
    "m",
    "rho",
    "delta",
    "lhs",
    "empirical_loss",
    "complexity_mean",
    "complexity_stderr",
    "rhs",
    "holds",
]

SANDWICH_TOL = 1e-12
PENALTY_RTOL = 1e-9


def binomial_slack(delta: float, n: int) -> float:
    """δ + 3 sqrt(δ(1-δ)/n)"""
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / n)


# -----------------------------
# Sandwich (ITV)
# -----------------------------

@dataclass(frozen=True)
class SandwichRecord:
    instance: int
    requirement: str        # random / consistent / trivial
    eps_hat: float          # L_D(ĥ)
    lower: float            # L_D(f_c)
    value: float            # L_D(ĥ_c)
    min_class_risk: float   # min_{h_c ∈ H_c} L_D(h_c)
    max_queries: int
    K: int

    @property
    def upper(self) -> float:
        return self.lower + self.eps_hat

    @property
    def holds_lower(self) -> bool:
        return self.lower <= self.value + SANDWICH_TOL

    @property
    def holds_upper(self) -> bool:
        return self.value <= self.upper + SANDWICH_TOL

    @property
    def holds_statement(self) -> bool:
        return self.value <= self.min_class_risk + self.eps_hat + SANDWICH_TOL

    @property
    def holds(self) -> bool:
        return self.holds_lower and self.holds_upper and self.holds_statement and self.max_queries <= self.K

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instance": self.instance,
            "requirement": self.requirement,
            "eps_hat": self.eps_hat,
            "lower": self.lower,
            "value": self.value,
            "upper": self.upper,
            "min_class_risk": self.min_class_risk,
            "max_queries": self.max_queries,
            "K": self.K,
            "holds_lower": self.holds_lower,
            "holds_upper": self.holds_upper,
            "holds_statement": self.holds_statement,
            "holds": self.holds,
        }


@dataclass(frozen=True)
class SandwichReport:
    records: Tuple[SandwichRecord, ...]

    @property
    def violations(self) -> int:
        return sum(not r.holds for r in self.records)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": "itv",
            "n_instances": len(self.records),
            "violations": self.violations,
            "tolerance": SANDWICH_TOL,
            "ok": self.ok,
            "records": [r.to_dict() for r in self.records],
        }

    def tables(self) -> Tables:
        rows = [r.to_dict() for r in self.records]
        cols = list(rows[0]) if rows else list(SandwichRecord.__dataclass_fields__)
        return {"results.csv": (cols, rows)}


# -----------------------------
# Counterexample
# -----------------------------

@dataclass(frozen=True)
class CounterexampleReport:
    risk_h: Tuple[float, ...]       # L_D(h_0), L_D(h_1)
    risk_hc: Tuple[float, ...]      # L_D(h_{c0}), L_D(h_{c1})
    itv_pick: int
    itv_risk: float
    ltv_pick: int
    ltv_risk: float
    consistent_with_truth: bool
    consistent_with_bayes: bool
    ltv_queries: int
    ltv_query_budget: int

    @property
    def best_class_risk(self) -> float:
        return min(self.risk_hc)

    @property
    def itv_gap(self) -> float:
        return self.itv_risk - self.best_class_risk

    @property
    def ltv_gap(self) -> float:
        return self.ltv_risk - self.best_class_risk

    @property
    def ok(self) -> bool:
        return (
            self.itv_gap == 0.5
            and self.ltv_gap == 0.0
            and self.consistent_with_truth
            and self.consistent_with_bayes
            and self.ltv_queries <= self.ltv_query_budget
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": "counterexample",
            "risk_h": list(self.risk_h),
            "risk_hc": list(self.risk_hc),
            "itv_pick": self.itv_pick,
            "itv_risk": self.itv_risk,
            "itv_gap": self.itv_gap,
            "ltv_pick": self.ltv_pick,
            "ltv_risk": self.ltv_risk,
            "ltv_gap": self.ltv_gap,
            "consistent_with_truth": self.consistent_with_truth,
            "consistent_with_bayes": self.consistent_with_bayes,
            "ltv_queries": self.ltv_queries,
            "ltv_query_budget": self.ltv_query_budget,
            "ok": self.ok,
        }

    def tables(self) -> Tables:
        cols = ["hypothesis", "risk", "risk_with_cv", "itv_pick", "ltv_pick"]
        rows = [
            {
                "hypothesis": f"h{j}",
                "risk": self.risk_h[j],
                "risk_with_cv": self.risk_hc[j],
                "itv_pick": j == self.itv_pick,
                "ltv_pick": j == self.ltv_pick,
            }
            for j in range(len(self.risk_h))
        ]
        return {"results.csv": (cols, rows)}


# -----------------------------
# Generalization bounds
# -----------------------------

@dataclass(frozen=True)
class BoundRecord:
    draw_id: int
    m: int
    rho: float
    delta: float
    lhs: float
    empirical_loss: float
    complexity_mean: float
    complexity_stderr: float
    rhs: float
    candidate: int = -1

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    def row(self) -> Dict[str, Any]:
        return {
            "draw_id": self.draw_id,
            "m": self.m,
            "rho": self.rho,
            "delta": self.delta,
            "lhs": self.lhs,
            "empirical_loss": self.empirical_loss,
            "complexity_mean": self.complexity_mean,
            "complexity_stderr": self.complexity_stderr,
            "rhs": self.rhs,
            "holds": self.holds,
        }


@dataclass(frozen=True)
class BoundReport:
    name: str
    records: Tuple[BoundRecord, ...]
    delta: float
    complexity: ComplexityEstimate
    penalty_h: float
    penalty_hc: float
    extras: Dict[str, Any] = field(default_factory=dict)
    # 再計算による検算 (名前 -> 一致したか)
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.records)

    @property
    def violation_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(not r.holds for r in self.records) / len(self.records)

    @property
    def allowed_fraction(self) -> float:
        return binomial_slack(self.delta, max(self.n_draws, 1))

    @property
    def penalties_agree(self) -> bool:
        return math.isclose(self.penalty_h, self.penalty_hc, rel_tol=PENALTY_RTOL, abs_tol=SANDWICH_TOL)

    @property
    def failed_checks(self) -> List[str]:
        out = [name for name, passed in self.checks.items() if not passed]
        if not self.penalties_agree:
            out.append("penalty_h == penalty_hc")
        return out

    @property
    def ok(self) -> bool:
        return self.violation_fraction <= self.allowed_fraction and not self.failed_checks

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n_draws": self.n_draws,
            "delta": self.delta,
            "violation_fraction": self.violation_fraction,
            "allowed_fraction": self.allowed_fraction,
            "complexity": self.complexity.to_dict(),
            "penalty_h": self.penalty_h,
            "penalty_hc": self.penalty_hc,
            "checks": dict(self.checks),
            "failed_checks": self.failed_checks,
            "ok": self.ok,
            "extras": dict(self.extras),
            "records": [r.row() | {"candidate": r.candidate} for r in self.records],
        }

    def rows(self) -> List[Dict[str, Any]]:
        return [r.row() for r in self.records]

    def tables(self) -> Tables:
        return {"results.csv": (list(BOUND_COLUMNS), self.rows())}


@dataclass(frozen=True)
class StructuredBoundReport:
    """加法・乗法の 2 つの上界と, 決定的な不等式 L_D(h_c) <= L^add_{D,ρ}(h_c) の検査."""
    additive: BoundReport
    multiplicative: BoundReport
    first_inequality_violations: int
    first_inequality_checked: int

    @property
    def ok(self) -> bool:
        return self.additive.ok and self.multiplicative.ok and self.first_inequality_violations == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": "bound-structured",
            "additive": self.additive.to_dict(),
            "multiplicative": self.multiplicative.to_dict(),
            "first_inequality_violations": self.first_inequality_violations,
            "first_inequality_checked": self.first_inequality_checked,
            "ok": self.ok,
        }

    def tables(self) -> Tables:
        return {
            "results.csv": (list(BOUND_COLUMNS), self.additive.rows()),
            "results_mult.csv": (list(BOUND_COLUMNS), self.multiplicative.rows()),
        }


# -----------------------------
# Complexity suite
# -----------------------------

@dataclass(frozen=True)
class ComplexityReport:
    checks: Tuple[Tuple[int, InequalityReport], ...]
    estimates: Tuple[Tuple[int, ComplexityEstimate], ...] = ()
    monotone: Tuple[Dict[str, Any], ...] = ()

    @property
    def failures(self) -> List[str]:
        out = [f"{rep.name}#{i}" for i, rep in self.checks if not rep.holds]
        out += [f"local_monotone#{k}" for k, m in enumerate(self.monotone) if not m["monotone"]]
        return out

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": "complexity",
            "checks": [{"instance": i} | rep.to_dict() for i, rep in self.checks],
            "estimates": [{"instance": i} | est.to_dict() for i, est in self.estimates],
            "local_monotone": list(self.monotone),
            "failures": self.failures,
            "ok": self.ok,
        }

    def tables(self) -> Tables:
        cols = ["instance", "name", "lhs_mean", "rhs_mean", "diff_mean", "std_error", "slack", "holds", "trials", "exact"]
        rows = []
        for i, rep in self.checks:
            d = rep.to_dict()
            rows.append({"instance": i} | {k: d[k] for k in cols[1:]})
        return {"results.csv": (cols, rows)}


def summarize_records(records: Sequence[BoundRecord]) -> Dict[str, float]:
    """ログ用の簡単な要約."""
    if not records:
        return {}
    gaps = [r.rhs - r.lhs for r in records]
    return {"min_gap": min(gaps), "mean_lhs": sum(r.lhs for r in records) / len(records)}
