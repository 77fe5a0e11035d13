"""Numerical laboratory for a spin chain with exponentially decaying bath couplings."""

__version__ = "0.1.0"

from .model import (
    DefaultDiagonal,
    DegenerateBath,
    DimensionOverflow,
    DisorderRealization,
    ExplicitMatrix,
    Full,
    Half,
    ModelParams,
    assemble,
    build_bath,
    load_params,
    sample_disorder,
    save_params,
)
