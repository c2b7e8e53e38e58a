"""Randomized Kaczmarz solvers accelerated with iteration history.

Includes plain RK, APK (diagonal preconditioner fit from cyclic-sweep
history), SAG, SAG-RK and its relaxed variant, ARK and AdaGrad-RK, together
with synthetic problem generators and a benchmark harness.
"""
from .dense import (
    DenseMatrix,
    ForcedSampler,
    RowSampler,
    build_matrix,
    build_row_sampler,
    relative_residual,
    sample_row,
)
from .errors import KaczmarzError
from .harness import ExperimentConfig, Trace, compare, emit_trace, estimate_lambda_min, read_trace, run
from .precond import DiagonalFit, HistoryBuffer, collect_history, fit_diagonal, objective_F
from .probgen import ProblemInstance, gen_consistent, gen_gaussian, gen_power_spectrum, kappa_frobenius
from .solvers import (
    AdaGradState,
    ArkState,
    PrecondState,
    RkState,
    SagRkState,
    SagState,
    adagrad_rk_step,
    apk_step,
    ark_schedule,
    ark_step,
    lipschitz_constant,
    project_row,
    rk_step,
    sag_rk_relaxed_step,
    sag_rk_step,
    sag_step,
)

__version__ = "0.1.0"
