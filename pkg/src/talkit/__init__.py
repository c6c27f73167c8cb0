"""Temporal action localization toolkit over precomputed unit-level features."""

from talkit.core import (
    Annotation,
    DataError,
    Detection,
    FeatureSequence,
    Interval,
    NumericError,
    Proposal,
    ReprSpec,
    repr_output_dim,
    tiou,
)

__all__ = [
    "Annotation",
    "DataError",
    "Detection",
    "FeatureSequence",
    "Interval",
    "NumericError",
    "Proposal",
    "ReprSpec",
    "repr_output_dim",
    "tiou",
]

__version__ = "0.1.0"
