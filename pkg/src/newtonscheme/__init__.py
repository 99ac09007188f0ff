"""Sparse identification of trajectories over a small physics basis.

A trajectory is explained as a linear combination of a few terms drawn from
a fixed library (polynomials, harmonics, exponential decay, a logarithmic
arc-length term).  Shared nonlinear parameters such as frequency and decay
rate are found by variable projection; the simplest subset that meets the
residual threshold wins.
"""

__version__ = "0.1.0"

from .basis import (
    BasisTerm,
    Library,
    LibraryMode,
    Primitive,
    PrimitiveKind,
    amplitude_phase,
    build_design_matrix,
    enumerate_candidates,
    eval_derivative,
    eval_term,
    harmonic_coefficients,
)
from .errors import DegenerateDesignError, DomainError, OrderingError, ParameterError, TrackerStateError
from .fit import (
    CandidateModel,
    FitConfig,
    FitResult,
    ModelDescriptor,
    fit_trajectory,
    force_of,
    init_params,
    refine_nonlinear,
    select_model,
    solve_linear,
)
from .scenario import (
    CurveBall,
    DampedPendulum,
    FreeFall,
    NoiseSpec,
    ScenarioSpec,
    Trajectory,
    add_noise,
    evaluate,
    evaluate_piecewise,
    gen_curve_ball,
    gen_damped_pendulum,
    gen_free_fall,
    gen_piecewise,
    generate,
    planar_path,
)
from .track import Phase, TrackEvent, Tracker, TrackerConfig, TrackerState, observe, predict_at

__all__ = [name for name in dir() if not name.startswith("_")]
