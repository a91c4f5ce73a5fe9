from .convex import (
    ConvexFamilyProblem,
    build_convex_family,
    enumerate_convex_optimum,
    toy_quadratic,
)

__all__ = [
    "ConvexFamilyProblem", "build_convex_family", "enumerate_convex_optimum",
    "toy_quadratic",
]
