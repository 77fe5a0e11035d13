"""Read-only figure rendering over the harness CSV interface."""

from .figures import FIGURE_KINDS, FigureSpec, render, spec_from_mapping
from .reader import CSV_VERSION, SCHEMAS, EmptyData, SchemaMismatch, load_rows

__all__ = [
    "CSV_VERSION",
    "SCHEMAS",
    "FIGURE_KINDS",
    "FigureSpec",
    "SchemaMismatch",
    "EmptyData",
    "load_rows",
    "render",
    "spec_from_mapping",
]
