"""filamentlab: spectral simulation of a cubic Schrodinger coefficient flow
with 1/t coupling, vortex-filament curve reconstruction through parallel
frames, singular-limit rate experiments, and Gaussian-measure transport
diagnostics."""

from .spectral import (
    CoefficientState,
    GridField,
    SobolevParams,
    apply_multiplier_d,
    holder_seminorm,
    mass,
    mode_indices,
    resonance_phase,
    state_from_json,
    state_to_json,
    synthesize_v,
    weighted_norm,
)
from .flow import (
    FlowConfig,
    FlowError,
    TrajectoryRecord,
    evolve,
    evolve_dense,
    gauge,
    jacobian_fd,
    nonlinear_sum,
    rhs,
    smoothing_increment,
)

__version__ = "0.1.0"
