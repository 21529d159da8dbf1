"""Concept probing and concept backpropagation (C++ core)."""

from ._conceptbp import (
    ConfigError,
    Error,
    FormatError,
    Model,
    NumericError,
    Probe,
    ShapeError,
    board,
    format_pgm,
    maximise_tabular,
    parse_pgm,
    pipeline,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "Probe",
    "ShapeError",
    "board",
    "format_pgm",
    "maximise_tabular",
    "parse_pgm",
    "pipeline",
]
