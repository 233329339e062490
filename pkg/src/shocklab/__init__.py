"""Numerical experiments on the nonlinear stability of viscous shock profiles
of hyperbolic-parabolic systems."""

from .model import (EndstatePair, PhysicalDomainError, SystemModel, builtin_system, jacobians,
                    system_from_json, validate_structure)
from .profile import (ProfileError, ShockProfile, constant_profile, lax_classification, rankine_hugoniot,
                      solve_profile)
from .linop import (LinearOperator, SpectralData, SpectralFault, apply_projection, assemble,
                    check_spectral_conditions, liu_majda, semigroup_decay_probe, synthetic_unstable,
                    unstable_spectrum)
from .energy import auto_tune, build_energy, kawashima_pair, verify_linear_damping, verify_nonlinear_damping
from .manifold import TruncatedNonlinearity, fixed_point, graph_map
from .dynamics import (EKernel, Trajectory, decay_report, evolve_linear, evolve_nonlinear, track_phase)

__version__ = "0.1.0"
