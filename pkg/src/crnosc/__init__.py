"""Oscillation in mass-action chemical reaction networks.

Parse networks, integrate their ODEs, locate periodic orbits and their Floquet
multipliers relative to the stoichiometric subspace, and extend an oscillating
network by new species while keeping a stable orbit.
"""

from .inheritance import (Extension, InheritanceReport, RankDeficient, RateSchedule, build_extension,
                          extended_network, reduced_jacobian_limit, slow_manifold_point, synthesize_rates,
                          to_zy_coordinates, verify_inheritance)
from .kinetics import field_jacobian, rate_jacobian, rate_vector, vector_field
from .model import Complex, Network, NetworkParseError, Reaction, parse_network, read_network, serialize_network
from .odeint import IntegratorConfig, find_crossings, integrate, integrate_with_variational
from .orbit import (OrbitSearchConfig, OrbitSearchError, PeriodicOrbit, find_periodic_orbit,
                    floquet_invariance_check, hausdorff_distance, relative_floquet)
from .stoich import class_residual, conservation_laws, rank_and_image

__version__ = "0.1.0"
