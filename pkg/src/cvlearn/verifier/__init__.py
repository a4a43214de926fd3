from .concurrent import Strategy, VerifiedHypothesis, infer, mask_scores, query_report, wrap

# 「このパッケージを import したときに表に出す名前」を定義
__all__ = [
    "Strategy",
    "VerifiedHypothesis",
    "infer",
    "mask_scores",
    "query_report",
    "wrap",
]
