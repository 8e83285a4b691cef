"""chainlab: disordered anharmonic chain simulation and symbolic verification."""

from .lattice import (
    KG, DNLS,
    DisorderSpec, DisorderRealization, ModelSpec, ChainState, InitialCondition,
    ConfigurationError, ValidationError,
    sample_disorder, local_energy, local_energy_profile, total_energy,
    current, current_profile, build_initial, norm2, current_bound_constant,
)
from .algebra import (
    Monomial, Polynomial, PhasePoint, KernelObstructionError,
    poisson_bracket, in_S, delta, to_normal, from_normal,
    expand_h_har, expand_h_an, expand_current, local_energy_poly, bracket_fd,
)

__version__ = "0.1.0"
