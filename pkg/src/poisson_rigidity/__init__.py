"""Nash-Moser linearization of Poisson structures near a fixed point, on jets."""

from .jets import (
    FormalDiffeo,
    PolyMultivector,
    compose,
    inverse,
    jacobi_defect,
    lie_series_flow,
    pullback,
    rescale_pullback,
    rescaled_family,
    schouten_bracket,
    wedge,
)

__all__ = [
    "FormalDiffeo",
    "PolyMultivector",
    "compose",
    "inverse",
    "jacobi_defect",
    "lie_series_flow",
    "pullback",
    "rescale_pullback",
    "rescaled_family",
    "schouten_bracket",
    "wedge",
]
