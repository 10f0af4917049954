"""Lasso trajectory synthesis for linear systems under temporal specifications."""

from .formulas import (
    FormulaError,
    LinearPredicate,
    closure,
    eval_run,
    eval_state,
    parse_rtl,
    pretty_print,
)
from .geometry import Polytope

__version__ = "0.1.0"

__all__ = [
    "LinearPredicate",
    "FormulaError",
    "parse_rtl",
    "pretty_print",
    "closure",
    "eval_state",
    "eval_run",
    "Polytope",
    "__version__",
]
