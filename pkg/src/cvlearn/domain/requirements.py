from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
import operator
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvlearn.errors import (
    DimensionMismatch,
    KindMismatch,
    LabelOutOfRange,
    LengthMismatch,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

Label = int
LabelSeq = Tuple[int, ...]

FLAT = "flat"
STRUCTURED = "structured"

# must_include はビットマスク DP の状態数に効くので上限を設ける
MAX_MUST_INCLUDE = 16

OPS: Dict[str, Callable[[Any, Any], Any]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
}


# -----------------------------
# Rule DSL
# -----------------------------

@dataclass(frozen=True)
class AtomicPredicate:
    """x[feature] <op> value"""
    feature: int
    op: str
    value: float

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise SchemaError(f"Unsupported comparator: {self.op!r}")
        if int(self.feature) < 0:
            raise SchemaError(f"feature index must be non-negative, got {self.feature}")

    def holds(self, x: Sequence[float]) -> bool:
        return bool(OPS[self.op](float(x[self.feature]), self.value))

    def holds_rows(self, X: np.ndarray) -> np.ndarray:
        return OPS[self.op](X[:, self.feature], self.value)


@dataclass(frozen=True)
class Rule:
    """
    条件 (AtomicPredicate の連言) が x に一致したときだけ効果を持つ.

    - forbid / allow_only : ラベル効果 (同一ルール内で排他)
    - positions           : ラベル効果を適用する位置 (1-based, None は全位置). structured 専用
    - forbid_pairs        : 隣接ラベル対 (a, b) の禁止. structured 専用
    - must_include        : 系列のどこかに現れなければならないラベル. structured 専用
    """
    conditions: Tuple[AtomicPredicate, ...] = ()
    forbid: Optional[FrozenSet[int]] = None
    allow_only: Optional[FrozenSet[int]] = None
    positions: Optional[Tuple[int, ...]] = None
    forbid_pairs: FrozenSet[Tuple[int, int]] = frozenset()
    must_include: FrozenSet[int] = frozenset()

    def __post_init__(self) -> None:
        if self.forbid is not None and self.allow_only is not None:
            raise SchemaError("forbid and allow_only are mutually exclusive within one rule")
        if len(self.must_include) > MAX_MUST_INCLUDE:
            raise ParseError(
                f"must_include has {len(self.must_include)} labels (max {MAX_MUST_INCLUDE})",
                field="must_include",
            )
        if self.positions is not None and any(int(k) < 1 for k in self.positions):
            raise SchemaError(f"positions are 1-based, got {list(self.positions)}")

    @property
    def has_label_effect(self) -> bool:
        return self.forbid is not None or self.allow_only is not None

    @property
    def is_structured_only(self) -> bool:
        return self.positions is not None or bool(self.forbid_pairs) or bool(self.must_include)

    def matches(self, x: Sequence[float]) -> bool:
        return all(p.holds(x) for p in self.conditions)

    def matches_rows(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.conditions:
            out &= p.holds_rows(X)
        return out

    def excludes(self, y: int) -> bool:
        if self.forbid is not None:
            return y in self.forbid
        if self.allow_only is not None:
            return y not in self.allow_only
        return False

    def applies_at(self, position: int) -> bool:
        return self.positions is None or position in self.positions


@dataclass(frozen=True)
class Requirement:
    """
    決定的な要求関数 c(x, y) のルール表現.

    label_count は flat なら K, structured なら
    - int: 全位置で共通のアルファベットサイズ (長さは任意)
    - tuple: 位置ごとのアルファベットサイズ (長さ固定)
    """
    kind: str
    label_count: Union[int, Tuple[int, ...]]
    rules: Tuple[Rule, ...] = ()
    _max_feature: int = field(init=False, repr=False, compare=False, default=-1)

    def __post_init__(self) -> None:
        if self.kind not in (FLAT, STRUCTURED):
            raise SchemaError(f"kind must be 'flat' or 'structured', got {self.kind!r}")
        if isinstance(self.label_count, (list, tuple)):
            if self.kind == FLAT:
                raise SchemaError("flat requirement takes a single label_count")
            sizes = tuple(int(k) for k in self.label_count)
            if not sizes or any(k < 1 for k in sizes):
                raise SchemaError(f"label_count must be positive, got {list(sizes)}")
            object.__setattr__(self, "label_count", sizes)
        else:
            if int(self.label_count) < 1:
                raise SchemaError(f"label_count must be positive, got {self.label_count}")
            object.__setattr__(self, "label_count", int(self.label_count))
        object.__setattr__(self, "rules", tuple(self.rules))

        if self.kind == FLAT:
            for i, r in enumerate(self.rules):
                if r.is_structured_only:
                    raise SchemaError(
                        "positions / forbid_pairs / must_include are structured-only",
                        field=f"rules[{i}]",
                    )

        mf = -1
        for r in self.rules:
            for p in r.conditions:
                mf = max(mf, int(p.feature))
        object.__setattr__(self, "_max_feature", mf)

    # --- constructors ---
    @classmethod
    def trivial(cls, label_count: Union[int, Tuple[int, ...]], kind: str = FLAT) -> "Requirement":
        """c ≡ 1"""
        return cls(kind=kind, label_count=label_count, rules=())

    @property
    def K(self) -> int:
        if self.kind != FLAT:
            raise KindMismatch("K is defined only for flat requirements")
        return int(self.label_count)  # type: ignore[arg-type]

    @property
    def is_trivial(self) -> bool:
        return not self.rules

    def alphabet_sizes(self, length: Optional[int] = None) -> Tuple[int, ...]:
        if self.kind != STRUCTURED:
            raise KindMismatch("alphabet_sizes is defined only for structured requirements")
        if isinstance(self.label_count, tuple):
            if length is not None and length != len(self.label_count):
                raise LengthMismatch(f"expected length {len(self.label_count)}, got {length}")
            return self.label_count
        if length is None:
            raise ValueError("length is required when label_count is a single alphabet size")
        return (int(self.label_count),) * int(length)

    def check_dimension(self, x: Sequence[float]) -> None:
        if self._max_feature >= len(x):
            raise DimensionMismatch(
                f"rules reference feature {self._max_feature} but x has dimension {len(x)}"
            )


@dataclass(frozen=True)
class FeasibilityReport:
    n_inputs: int
    violations: Tuple[int, ...]  # index into inputs
    infeasible_inputs: Tuple[Tuple[float, ...], ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_inputs": self.n_inputs,
            "ok": self.ok,
            "violations": list(self.violations),
            "infeasible_inputs": [list(x) for x in self.infeasible_inputs],
        }


# -----------------------------
# Evaluation
# -----------------------------

def _require_kind(req: Requirement, kind: str) -> None:
    if req.kind != kind:
        raise KindMismatch(f"expected a {kind} requirement, got {req.kind}")


def evaluate(req: Requirement, x: Sequence[float], y: int) -> int:
    """c(x, y) ∈ {0, 1}. 一致したルールのどれかが y を除外すれば 0."""
    _require_kind(req, FLAT)
    req.check_dimension(x)
    if not 1 <= int(y) <= req.K:
        raise LabelOutOfRange(f"label {y} outside [1, {req.K}]")
    for r in req.rules:
        if r.matches(x) and r.excludes(int(y)):
            return 0
    return 1


def feasible_labels(req: Requirement, x: Sequence[float]) -> FrozenSet[int]:
    _require_kind(req, FLAT)
    req.check_dimension(x)
    allowed = set(range(1, req.K + 1))
    for r in req.rules:
        if not r.matches(x):
            continue
        if r.forbid is not None:
            allowed -= r.forbid
        elif r.allow_only is not None:
            allowed &= r.allow_only
    return frozenset(allowed)


def feasibility_matrix(req: Requirement, X: np.ndarray) -> np.ndarray:
    """
    flat 要求をまとめて評価する. 戻り値 F[i, y-1] = c(X[i], y) の bool 配列 (n, K).
    """
    _require_kind(req, FLAT)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if req._max_feature >= X.shape[1]:
        raise DimensionMismatch(
            f"rules reference feature {req._max_feature} but inputs have dimension {X.shape[1]}"
        )
    K = req.K
    F = np.ones((X.shape[0], K), dtype=bool)
    for r in req.rules:
        hit = r.matches_rows(X)
        if not hit.any():
            continue
        excl = np.array([r.excludes(y) for y in range(1, K + 1)], dtype=bool)
        F[np.ix_(hit, excl)] = False
    return F


# --- structured ---

def position_allowed(req: Requirement, x: Sequence[float], alphabet_sizes: Sequence[int]) -> List[np.ndarray]:
    """各位置 k で許されるラベルの bool マスク (長さ |Y_k|, index 0 がラベル 1)."""
    _require_kind(req, STRUCTURED)
    req.check_dimension(x)
    out = [np.ones(int(a), dtype=bool) for a in alphabet_sizes]
    for r in req.rules:
        if not r.has_label_effect or not r.matches(x):
            continue
        for k, mask in enumerate(out, start=1):
            if not r.applies_at(k):
                continue
            for y in range(1, mask.shape[0] + 1):
                if r.excludes(y):
                    mask[y - 1] = False
    return out


def forbidden_pairs(req: Requirement, x: Sequence[float]) -> FrozenSet[Tuple[int, int]]:
    _require_kind(req, STRUCTURED)
    req.check_dimension(x)
    pairs: set = set()
    for r in req.rules:
        if r.forbid_pairs and r.matches(x):
            pairs |= r.forbid_pairs
    return frozenset(pairs)


def required_labels(req: Requirement, x: Sequence[float]) -> Tuple[int, ...]:
    _require_kind(req, STRUCTURED)
    req.check_dimension(x)
    labels: set = set()
    for r in req.rules:
        if r.must_include and r.matches(x):
            labels |= r.must_include
    if len(labels) > MAX_MUST_INCLUDE:
        raise ParseError(
            f"matching rules require {len(labels)} labels (max {MAX_MUST_INCLUDE})",
            field="must_include",
        )
    return tuple(sorted(labels))


def evaluate_structured(req: Requirement, x: Sequence[float], y: Sequence[int]) -> int:
    _require_kind(req, STRUCTURED)
    y = tuple(int(v) for v in y)
    if isinstance(req.label_count, tuple) and len(y) != len(req.label_count):
        raise LengthMismatch(f"expected a sequence of length {len(req.label_count)}, got {len(y)}")
    sizes = req.alphabet_sizes(len(y))
    for k, (v, a) in enumerate(zip(y, sizes), start=1):
        if not 1 <= v <= a:
            raise LabelOutOfRange(f"label {v} at position {k} outside [1, {a}]")

    allowed = position_allowed(req, x, sizes)
    if any(not allowed[k][v - 1] for k, v in enumerate(y)):
        return 0
    pairs = forbidden_pairs(req, x)
    if pairs and any((a, b) in pairs for a, b in zip(y, y[1:])):
        return 0
    need = required_labels(req, x)
    if need and not set(need) <= set(y):
        return 0
    return 1


def check_feasibility(
    req: Requirement,
    inputs: Sequence[Sequence[float]],
    lengths: Union[None, int, Sequence[int]] = None,
) -> FeasibilityReport:
    """
    inputs の中で実行可能なラベル (系列) を持たない x を列挙する.
    structured で label_count が単一サイズのときは lengths (共通 int か入力ごと) が必要.
    """
    bad: List[int] = []
    if req.kind == FLAT:
        for i, x in enumerate(inputs):
            if not feasible_labels(req, x):
                bad.append(i)
    else:
        # structured の判定は制約付き DP に任せる
        from cvlearn.structured.decoding import feasible_sequence_exists

        for i, x in enumerate(inputs):
            if lengths is None:
                l = None
            elif isinstance(lengths, int):
                l = lengths
            else:
                l = int(lengths[i])
            sizes = req.alphabet_sizes(l)
            if not feasible_sequence_exists(req, x, sizes):
                bad.append(i)

    if bad:
        logger.debug("check_feasibility: %d / %d inputs infeasible", len(bad), len(inputs))
    return FeasibilityReport(
        n_inputs=len(inputs),
        violations=tuple(bad),
        infeasible_inputs=tuple(tuple(float(v) for v in inputs[i]) for i in bad),
    )


# -----------------------------
# Rule file (JSON)
# -----------------------------

def _expect(cond: bool, message: str, *, field: str, error: type = SchemaError) -> None:
    if not cond:
        raise error(message, field=field)


def _parse_labels(v: Any, *, field: str, upper: Optional[int]) -> FrozenSet[int]:
    _expect(isinstance(v, list), f"expected a list of labels, got {v!r}", field=field, error=ParseError)
    out = set()
    for j, y in enumerate(v):
        _expect(isinstance(y, int) and not isinstance(y, bool), f"label must be an int, got {y!r}",
                field=f"{field}[{j}]", error=ParseError)
        _expect(y >= 1, f"labels are 1-based, got {y}", field=f"{field}[{j}]")
        if upper is not None:
            _expect(y <= upper, f"label {y} exceeds label_count {upper}", field=f"{field}[{j}]")
        out.add(int(y))
    return frozenset(out)


def _parse_predicate(raw: Any, *, field: str) -> AtomicPredicate:
    _expect(isinstance(raw, dict), f"predicate must be an object, got {raw!r}", field=field, error=ParseError)
    for key in ("feature", "op", "value"):
        _expect(key in raw, f"Missing key '{key}'", field=field, error=ParseError)
    feat, op, value = raw["feature"], raw["op"], raw["value"]
    _expect(isinstance(feat, int) and not isinstance(feat, bool), f"feature must be an int, got {feat!r}",
            field=f"{field}.feature", error=ParseError)
    _expect(feat >= 0, f"negative feature index {feat}", field=f"{field}.feature")
    _expect(op in OPS, f"unknown comparator {op!r}", field=f"{field}.op")
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), f"value must be a number, got {value!r}",
            field=f"{field}.value", error=ParseError)
    return AtomicPredicate(feature=int(feat), op=str(op), value=float(value))


def _parse_rule(raw: Any, *, field: str, kind: str, upper: Optional[int]) -> Rule:
    _expect(isinstance(raw, dict), f"rule must be an object, got {raw!r}", field=field, error=ParseError)
    known = {"if", "forbid", "allow_only", "positions", "forbid_pairs", "must_include"}
    unknown = set(raw) - known
    _expect(not unknown, f"unknown keys {sorted(unknown)}", field=field)

    conds = raw.get("if", [])
    _expect(isinstance(conds, list), "'if' must be a list", field=f"{field}.if", error=ParseError)
    conditions = tuple(_parse_predicate(c, field=f"{field}.if[{j}]") for j, c in enumerate(conds))

    _expect(not ("forbid" in raw and "allow_only" in raw),
            "forbid and allow_only are mutually exclusive", field=field)
    forbid = _parse_labels(raw["forbid"], field=f"{field}.forbid", upper=upper) if "forbid" in raw else None
    allow_only = (
        _parse_labels(raw["allow_only"], field=f"{field}.allow_only", upper=upper) if "allow_only" in raw else None
    )

    structured_keys = {"positions", "forbid_pairs", "must_include"} & set(raw)
    if kind == FLAT:
        _expect(not structured_keys, f"{sorted(structured_keys)} only allowed for structured requirements", field=field)
        _expect(forbid is not None or allow_only is not None, "flat rule needs 'forbid' or 'allow_only'", field=field)

    positions = None
    if "positions" in raw and raw["positions"] != "all":
        pos = raw["positions"]
        _expect(isinstance(pos, list), "'positions' must be a list or \"all\"", field=f"{field}.positions",
                error=ParseError)
        for j, k in enumerate(pos):
            _expect(isinstance(k, int) and not isinstance(k, bool) and k >= 1,
                    f"positions are 1-based ints, got {k!r}", field=f"{field}.positions[{j}]")
        positions = tuple(sorted(set(int(k) for k in pos)))

    pairs: set = set()
    for j, pr in enumerate(raw.get("forbid_pairs", [])):
        _expect(isinstance(pr, list) and len(pr) == 2, f"pair must be [a, b], got {pr!r}",
                field=f"{field}.forbid_pairs[{j}]", error=ParseError)
        _parse_labels(pr, field=f"{field}.forbid_pairs[{j}]", upper=upper)
        pairs.add((int(pr[0]), int(pr[1])))

    must = frozenset()
    if "must_include" in raw:
        must = _parse_labels(raw["must_include"], field=f"{field}.must_include", upper=upper)
        _expect(len(must) <= MAX_MUST_INCLUDE, f"must_include has {len(must)} labels (max {MAX_MUST_INCLUDE})",
                field=f"{field}.must_include", error=ParseError)

    return Rule(
        conditions=conditions,
        forbid=forbid,
        allow_only=allow_only,
        positions=positions,
        forbid_pairs=frozenset(pairs),
        must_include=must,
    )


def requirement_from_dict(doc: Any) -> Requirement:
    _expect(isinstance(doc, dict), "rule document must be a JSON object", field="<root>", error=ParseError)
    kind = doc.get("kind", FLAT)
    _expect(kind in (FLAT, STRUCTURED), f"unknown kind {kind!r}", field="kind")
    _expect("label_count" in doc, "Missing key 'label_count'", field="label_count", error=ParseError)
    lc = doc["label_count"]
    if isinstance(lc, list):
        _expect(kind == STRUCTURED, "per-position label_count needs kind 'structured'", field="label_count")
        _expect(all(isinstance(k, int) and k >= 1 for k in lc) and len(lc) > 0,
                f"label_count must be positive ints, got {lc!r}", field="label_count")
        label_count: Union[int, Tuple[int, ...]] = tuple(int(k) for k in lc)
        upper: Optional[int] = max(label_count)
    else:
        _expect(isinstance(lc, int) and not isinstance(lc, bool) and lc >= 1,
                f"label_count must be a positive int, got {lc!r}", field="label_count")
        label_count = int(lc)
        upper = int(lc)

    raw_rules = doc.get("rules", [])
    _expect(isinstance(raw_rules, list), "'rules' must be a list", field="rules", error=ParseError)
    rules = tuple(
        _parse_rule(r, field=f"rules[{i}]", kind=kind, upper=upper) for i, r in enumerate(raw_rules)
    )
    return Requirement(kind=kind, label_count=label_count, rules=rules)


def parse_rules(text: str) -> Requirement:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno) from e
    return requirement_from_dict(doc)


def requirement_to_dict(req: Requirement) -> Dict[str, Any]:
    rules: List[Dict[str, Any]] = []
    for r in req.rules:
        d: Dict[str, Any] = {
            "if": [{"feature": p.feature, "op": p.op, "value": p.value} for p in r.conditions],
        }
        if r.forbid is not None:
            d["forbid"] = sorted(r.forbid)
        if r.allow_only is not None:
            d["allow_only"] = sorted(r.allow_only)
        if r.positions is not None:
            d["positions"] = list(r.positions)
        if r.forbid_pairs:
            d["forbid_pairs"] = [list(p) for p in sorted(r.forbid_pairs)]
        if r.must_include:
            d["must_include"] = sorted(r.must_include)
        rules.append(d)
    lc = list(req.label_count) if isinstance(req.label_count, tuple) else req.label_count
    return {"kind": req.kind, "label_count": lc, "rules": rules}


def serialize_rules(req: Requirement) -> str:
    return json.dumps(requirement_to_dict(req), ensure_ascii=False, indent=2)


def load_rules(path: str | Path) -> Requirement:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        text = f.read()
    return parse_rules(text)
