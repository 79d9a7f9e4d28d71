"""Monitored non-Markovian open quantum systems on a conveyor-belt memory lattice."""

__version__ = "0.1.0"

from .hilbert import CompositeSpace, StateVector, coherent, expm_apply, ladder, partial_trace, tensor
from .kernel import (
    CorrelationFunction,
    CouplingKernel,
    NoisePath,
    color,
    estimate_correlation,
    factorize,
    reconstruct,
    sample_white_noise,
)
from .lattice import (
    CollisionModel,
    JointState,
    LatticeConfig,
    SystemSpec,
    build_collision_generator,
    conveyor_step,
    evolve_nonselective,
    output_mean_nonselective,
)
from .monitor import (
    HeterodyneRecord,
    bargmann_project,
    conditional_mixed,
    girsanov_colored,
    heterodyne_sample,
    predicted_signal_mean,
    retrodict,
    run_ensemble,
    run_trajectory,
)
