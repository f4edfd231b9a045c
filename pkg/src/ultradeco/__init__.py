"""Strong-dephasing master equations, their classical reduction, and
kinetic Monte Carlo transport experiments."""

__version__ = "0.1.0"

from .core import (
    FockSpace,
    NumericGuardError,
    OccupationState,
    ParticleStatistics,
    SystemSpec,
    Truncation,
    ValidatedSpec,
    boson_shell_size,
    enumerate_fock,
    validate_spec,
)
from .lindblad import (
    DensityMatrix,
    Superoperator,
    build_many_body_generator,
    build_single_particle_generator,
    diagonal_block,
    diagonals_trajectory,
    evolve_density,
    extract_diagonals,
)
from .reduction import (
    ClassicalGenerator,
    TransitionRateMatrix,
    ValidityReport,
    adiabatic_coherences,
    build_classical_generator,
    check_validity,
    limit_rates,
    solve_coherences_fixed_point,
    transition_rates,
)
from .stochastic import (
    AbsorbingStateError,
    EnsembleStatistics,
    SampleSet,
    StopCondition,
    TrajectoryRecord,
    ensemble_statistics,
    gillespie_step,
    make_rng,
    sample_first_arrival,
    sample_persistent_times,
    simulate_trajectory,
    solve_master,
    stationary_distribution,
)
from .transport import (
    ChainModel,
    GrowthPhase,
    arrival_cdf_oracle,
    classify_growth_phase,
    condensation_threshold,
    low_gain_arrival_density,
    make_chain,
    mean_field_evolve,
    stationary_current,
    stationary_profile,
    survival_comparison_report,
    survival_function_closed_form,
    survival_function_oracle,
    uniform_all_to_all,
)
from .harness import (
    ComparisonError,
    ConfigError,
    ExperimentConfig,
    RunManifest,
    load_config,
    run_experiment,
)

__all__ = [
    "AbsorbingStateError",
    "ChainModel",
    "ClassicalGenerator",
    "ComparisonError",
    "ConfigError",
    "DensityMatrix",
    "EnsembleStatistics",
    "ExperimentConfig",
    "FockSpace",
    "GrowthPhase",
    "NumericGuardError",
    "OccupationState",
    "ParticleStatistics",
    "RunManifest",
    "SampleSet",
    "StopCondition",
    "Superoperator",
    "SystemSpec",
    "TrajectoryRecord",
    "TransitionRateMatrix",
    "Truncation",
    "ValidatedSpec",
    "ValidityReport",
    "adiabatic_coherences",
    "arrival_cdf_oracle",
    "boson_shell_size",
    "build_classical_generator",
    "build_many_body_generator",
    "build_single_particle_generator",
    "check_validity",
    "classify_growth_phase",
    "condensation_threshold",
    "diagonal_block",
    "diagonals_trajectory",
    "ensemble_statistics",
    "enumerate_fock",
    "evolve_density",
    "extract_diagonals",
    "gillespie_step",
    "limit_rates",
    "load_config",
    "low_gain_arrival_density",
    "make_chain",
    "make_rng",
    "mean_field_evolve",
    "run_experiment",
    "sample_first_arrival",
    "sample_persistent_times",
    "simulate_trajectory",
    "solve_coherences_fixed_point",
    "solve_master",
    "stationary_current",
    "stationary_distribution",
    "stationary_profile",
    "survival_comparison_report",
    "survival_function_closed_form",
    "survival_function_oracle",
    "transition_rates",
    "uniform_all_to_all",
    "validate_spec",
    "__version__",
]
