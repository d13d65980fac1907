"""Data-driven output-regulation controller synthesis from experimental data.

The package assembles data matrices from a single excited experiment on an
unknown plant, solves a semidefinite program for a stabilizing gain whose
closed loop is contractive (nonlinear plants, approximate regulation) or
Hurwitz (linear plants, exact regulation), and verifies the resulting
steady-state behavior: harmonic nulling, mean-square error bounds, and the
regulation identity.
"""

from .config import EvalConfig, ExperimentConfig, RunConfig, SynthesisConfig, load_config
from .datamat import DataMatrices, assemble, rank_report, verify_annihilation
from .errors import (
    ConfigError,
    DdregError,
    DimensionMismatch,
    Infeasible,
    InsufficientSamples,
    InvalidParams,
    NonFiniteState,
    NotSettled,
    NumericalFailure,
    SingularSylvester,
    SpectralMismatch,
)
from .evalrep import EvaluationReport, evaluate, sweep_ell
from .exo import (
    ComplexMode,
    Exosystem,
    RealMode,
    SignalMatrix,
    SpectralSpec,
    build_L,
    build_M,
    jordan_factorization,
    minimal_poly_coeffs,
    minimal_poly_degree,
    sample_w,
    simulate_w,
)
from .fourier import FourierSpectrum, coefficients, l2_bound, nulling_check, parseval_residual
from .imodel import InternalModel, build_companion, build_harmonic
from .plant import (
    BasisLibrary,
    Dataset,
    PlantModel,
    augmented_matrices,
    eval_Z,
    eval_Z_jacobian,
    run_experiment,
    simulate_closed_loop,
)
from .synth import (
    LinearSdpProblem,
    NonlinearSdpProblem,
    SynthesisResult,
    audit_rq,
    contractivity_margin,
    gain_operator,
    solve_linear,
    solve_nonlinear,
    sylvester_verify,
)

__version__ = "0.1.0"
