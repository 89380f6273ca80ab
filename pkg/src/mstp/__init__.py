"""Multi-scale temporal prediction: closed loop, benchmarks, metrics.

The package splits into the hierarchical state model, pluggable decision
and generation backends, the alternating closed-loop engine, dataset and
augmentation tooling, metric suites, result analysis, and a wire
protocol for remote backends.  ``mstp.cli`` is the command-line face.
"""
from .agents import (
    CallContext,
    DecisionBackendDescriptor,
    DecisionStack,
    TransitionDecision,
    build_decision_stack,
)
from .engine import (
    EVERY_STEP,
    OUTPUT_ONLY,
    RunResult,
    RunSettings,
    ScoreReport,
    Trajectory,
    evaluate_clips,
    run_closed_loop,
    score_trajectory,
)
from .errors import MstpError, ValidationError
from .generation import GeneratorDescriptor, build_generator
from .images import ImageBuffer
from .model import (
    Level,
    LevelSchema,
    StateVector,
    TimeGrid,
    ValidationResult,
    make_time_grid,
    output_points,
    validate_state,
)
from .sequences import AnnotatedSequence, Frame, GridAlignment

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSequence",
    "CallContext",
    "DecisionBackendDescriptor",
    "DecisionStack",
    "EVERY_STEP",
    "Frame",
    "GeneratorDescriptor",
    "GridAlignment",
    "ImageBuffer",
    "Level",
    "LevelSchema",
    "MstpError",
    "OUTPUT_ONLY",
    "RunResult",
    "RunSettings",
    "ScoreReport",
    "StateVector",
    "TimeGrid",
    "Trajectory",
    "TransitionDecision",
    "ValidationError",
    "ValidationResult",
    "build_decision_stack",
    "build_generator",
    "evaluate_clips",
    "make_time_grid",
    "output_points",
    "run_closed_loop",
    "score_trajectory",
    "validate_state",
    "__version__",
]
