"""Weakly interacting Lindblad dynamics on lattice spin systems.

Exact finite-volume simulation, hypothesis checks for single-site generators
and interactions, and a certified diagram expansion for infinite-volume
stationary expectations.
"""
from .algebra import (I2, SM, SP, SX, SY, SZ, LocalOperator, LocalSuperoperator, Volume, cb_norm,
                      embed_operator, embed_superoperator, hs_adjoint, lift, operator_norm, unvec,
                      vec)
from .certificates import (BoundParameters, bound_curves, derive_parameters, finite_range_window,
                           truncation_tail)
from .errors import (ConvergenceError, DegenerateKernelError, HypothesisViolation,
                     IllConditionedKernelError, LatticeQMSError, QuadratureBudgetExceeded,
                     SingularRestrictionError, SupportError)
from .expansion import (CertifiedValue, Diagram, correlation_estimate, enumerate_diagrams,
                        projection, quadrature_term, resolvent, stationary_expectation,
                        stationary_term)
from .finite_volume import (FiniteVolumeGenerator, StationaryState, assemble, boundary_sensitivity,
                            evolve_heisenberg, lr_velocity_fit, relaxation_profile, spectral_gap,
                            stationary_state, truncated_correlation, volume_convergence)
from .generators import (InteractionFamily, LindbladSpec, SpectralProfile, build_lindblad,
                         certify_M, check_qms_generator, interaction_norm, spectral_profile)
from .models import (HeatBathChain, LatticeModel, currents, davies_qubit_bath, fourier_scaling,
                     ising_model, pinning_boundary, self_consistent_profile)

__version__ = "0.1.0"
