from .estimators import (
    ComplexityEstimate,
    empirical_gaussian,
    empirical_local_rademacher,
    empirical_rademacher,
    factor_graph_rademacher,
)

__all__ = [
    "ComplexityEstimate",
    "empirical_gaussian",
    "empirical_local_rademacher",
    "empirical_rademacher",
    "factor_graph_rademacher",
]
