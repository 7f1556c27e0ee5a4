"""Physical constants and the shared tolerance record.

Every geometric epsilon and solver tolerance used by the library lives here,
so tests and production code agree on the same numbers.
"""

from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0  # m/s
BOLTZMANN = 1.380649e-23  # J/K
REFERENCE_TEMPERATURE = 290.0  # K, standard noise-figure reference


@dataclass(frozen=True)
class Tolerances:
    """Central tolerance record shared by geometry, tracer, solver and tests."""

    unit_norm: float = 1e-9         # |norm - 1| allowed for unit vectors
    coplanarity: float = 1e-6       # m, boundary vertex distance from plane
    min_polygon_area: float = 1e-9  # m^2, degenerate-boundary rejection
    ray_self_hit: float = 1e-9      # m, minimum ray parameter t (no self-hit)
    polygon_edge: float = 1e-9      # m, slack when testing point-in-boundary
    segment_interior: float = 1e-9  # fractional margin excluding endpoints
    plane_degenerate: float = 1e-9  # m, point-on-plane rejection for mirrors
    solver_gradient: float = 1e-10  # gradient-norm termination
    solver_step: float = 1e-12      # relative step termination
    solver_max_iter: int = 200


TOL = Tolerances()
