"""Latent pain-expression sequence generation (C++ core)."""

from ._painexpr import (
    ConfigError,
    DataError,
    NumericFault,
    datagen,
    dtw,
    evaluate,
    generate,
    karras_grid,
    pain_dist,
    pain_divrs,
    pain_var,
    precondition,
    read_sequence,
    scheduling_matrix,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericFault",
    "datagen",
    "dtw",
    "evaluate",
    "generate",
    "karras_grid",
    "pain_dist",
    "pain_divrs",
    "pain_var",
    "precondition",
    "read_sequence",
    "scheduling_matrix",
    "train",
]
