"""Kendall-Tau metric search: distance, cascading metric tree, benchmark, match service."""
from .kendall import (
    LengthMismatchError,
    RankListError,
    kt_distance,
    kt_distance_oracle,
    normalize,
)
from .mtree import CascadingMetricTree, QueryStats, UserRecord, radius_to_raw

__all__ = [
    "CascadingMetricTree",
    "LengthMismatchError",
    "QueryStats",
    "RankListError",
    "UserRecord",
    "kt_distance",
    "kt_distance_oracle",
    "normalize",
    "radius_to_raw",
]
