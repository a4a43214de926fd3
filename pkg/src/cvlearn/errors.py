from __future__ import annotations

from typing import Any, Optional, Sequence


class CvlearnError(Exception):
    """cvlearn が送出する例外の共通基底."""


# -----------------------------
# 入力・ファイル形式
# -----------------------------

class ParseError(CvlearnError, ValueError):
    """ルール / 仮説 / データセット文書の読み込み失敗. field と line を保持する."""

    def __init__(self, message: str, *, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class SchemaError(ParseError):
    """文法としては読めたがスキーマに合わない (未知の比較演算子, 負の index など)."""


class KindMismatch(CvlearnError, ValueError):
    """flat 用の操作に structured 要求を渡した (またはその逆)."""


# -----------------------------
# 形状・値域
# -----------------------------

class DimensionMismatch(CvlearnError, ValueError):
    pass


class LengthMismatch(CvlearnError, ValueError):
    pass


class LabelOutOfRange(CvlearnError, ValueError):
    pass


class SingleClass(CvlearnError, ValueError):
    pass


class NonpositiveTheta(CvlearnError, ValueError):
    pass


class NonpositiveRho(CvlearnError, ValueError):
    pass


class InvalidP(CvlearnError, ValueError):
    pass


class TooLarge(CvlearnError, ValueError):
    pass


class NotAChain(CvlearnError, ValueError):
    pass


# -----------------------------
# 検証器
# -----------------------------

class InfeasibleInput(CvlearnError, ValueError):
    """どのラベルも要求を満たさない入力があった. report に FeasibilityReport を持つ."""

    def __init__(self, message: str, *, report: Any = None, inputs: Sequence[Any] = ()):
        self.report = report
        self.inputs = list(inputs)
        super().__init__(message)


class Infeasible(CvlearnError, ValueError):
    """制約付き復号で実行可能な系列が存在しない."""


class MaskConstantViolated(CvlearnError, ValueError):
    """|score| >= M となり, マスク定数 M がスコアの上界になっていない."""
