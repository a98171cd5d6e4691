"""Vortex-blob solutions of the 2D incompressible Euler equations with
integrable vorticity, and numerical checks of their weak formulations."""
from .diagnostics import (M2Report, SampledScalarField, hls_ratio, local_measure_distance,
                          m2_seminorm, sampled_l1_distance, velocity_l1_distance,
                          weak_dictionary, weak_l1_pairing)
from .exceptions import (BlowUpError, ConvergenceWarning, CoverageError,
                         DegenerateRatioError, EnergyGuardError, ExtrapolationWarning,
                         GridMismatchError, KernelDomainError, ParameterError,
                         ResolutionWarning, VortexBlobError)
from .field import (InitialVorticitySpec, MollifierSpec, VortexBlobField, discretize,
                    equi_integrability_modulus, eval_vorticity, l1_norm)
from .flow import (FieldHistory, FlowConfig, FlowMap, LagrangianFlow, backward_flow,
                   compressibility_estimate, flow_from_velocity, flow_measure_distance,
                   integrate_flow, pushforward_vorticity)
from .grid import UniformGrid
from .kernel import (QuadratureSpec, TranslationNorm, barh_phi, blob_kernel, eval_kernel,
                     h_phi, kernel_translation_norm, perp, split_kernel)
from .velocity import VelocityEvaluator, velocity_direct, velocity_treecode
from .weakform import (DivFreeField, IdentityGap, Nonlinearity, ResidualReport, ScalarBump,
                       TestFunction, TimeProfile, arctan_nonlinearity, clipped_identity,
                       constant_nonlinearity, divfree_from_stream, make_bump, pair_sum,
                       renormalized_residual, sym_weak_identity_gap,
                       symmetrized_velocity_residual, symmetrized_vorticity_residual,
                       weak_velocity_residual)
from .experiments import (ConvergenceReport, ProbeReport, SlopeReport, StabilityReport,
                          run_existence_pipeline, run_fundamental_estimate_probe,
                          run_kernel_scaling_experiment, run_perturbation_probe,
                          run_stability_experiment)

__version__ = "0.1.0"
