"""Spin-1/2 Bloch dynamics, time-optimal saturation, SNR-per-time analysis
and GRAPE contrast pulses.

The propagation kernels come from a compiled extension when it is
available and from numpy otherwise; :data:`spinctl.kernels.BACKEND` names
the one in use.
"""
from .bloch import (
    Isochromat,
    MagState,
    PolarState,
    Pulse,
    SpinParams,
    free_evolution,
    normalize,
    propagate_pulse,
    propagate_step,
    radial_speed,
)
from .errors import (
    ArcTerminated,
    ConfigError,
    DegenerateParametersError,
    InvalidParameterError,
    NoSteadyStateError,
    SpinctlError,
    UnreachableTargetError,
)
from .geometry import (
    ControlSequence,
    saturation_sequence,
    simulate_sequence,
    singular_plane_z0,
    time_optimal_transfer,
)
from .grape import (
    ContrastProblem,
    OffsetEnsemble,
    OptimizerOptions,
    Species,
    cost_gradient,
    gradient_check,
    grape_optimize,
    preset_rat_brain_muscle,
    robustness_report,
)
from .kernels import BACKEND
from .snr import ernst_angle, ernst_steady_state, maximize_q, q_factor, q_surface

__version__ = "0.1.0"
