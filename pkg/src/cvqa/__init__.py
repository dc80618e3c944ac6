"""Subjective video-quality scaling and rate-distortion-aware metric benchmarking."""

from .core import (
    ComparisonMatrix,
    ComparisonSet,
    CvqaError,
    EstimationError,
    InputError,
    ItemCatalog,
    Method,
    QualityScores,
    RatingSet,
    TiePolicy,
    build_comparison_matrix,
    parse_items,
    parse_ratings,
    parse_votes,
)
from .fusion import FusionParams, fuse
from .ranker import BetaScale, EloConfig, bt_cdf, bt_fit, elo_bootstrap, elo_run

__version__ = "0.1.0"

__all__ = [
    "BetaScale",
    "ComparisonMatrix",
    "ComparisonSet",
    "CvqaError",
    "EloConfig",
    "EstimationError",
    "FusionParams",
    "InputError",
    "ItemCatalog",
    "Method",
    "QualityScores",
    "RatingSet",
    "TiePolicy",
    "bt_cdf",
    "bt_fit",
    "build_comparison_matrix",
    "elo_bootstrap",
    "elo_run",
    "fuse",
    "parse_items",
    "parse_ratings",
    "parse_votes",
]
