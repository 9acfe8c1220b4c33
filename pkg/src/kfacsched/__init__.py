"""Scheduling, placement, and iteration-time simulation for distributed
K-FAC training, with a desk-scale numerical core that verifies the
preconditioned update the schedulers move around."""

from .linalg import (
    NotPositiveDefiniteError,
    SymMatrix,
    compute_factor_A,
    compute_factor_G,
    damped_inverse,
    kron,
    pack_upper,
    precondition,
    unpack_upper,
)
from .perfmodel import (
    AllReduceParams,
    BcastParams,
    BenchSample,
    InverseParams,
    PerfParams,
    allreduce_time,
    bcast_time,
    fit_exponential,
    fit_linear,
    inverse_time,
    nct_threshold,
)
from .planner import (
    FactorKind,
    FactorTask,
    FusionPlan,
    FusionPolicy,
    InvTask,
    PlacementPlan,
    lbp_place,
    local_place,
    placement_makespan,
    plan_fusion,
    seq_place,
)
from .profiles import (
    CalibrationTargets,
    LayerProfile,
    ModelProfile,
    build_bundled_profile,
    bundled_params,
    bundled_profile,
    generate_synthetic_timings,
    load_profile,
    save_profile,
)
from .simulator import (
    Scheme,
    SchemeConfig,
    Timeline,
    breakdown,
    build_plans,
    compare_schemes,
    simulate_iteration,
    validate_timeline,
)
from .emulator import (
    TinyMLP,
    WorkerBatch,
    dkfac_step,
    forward_backward,
    kfac_step_centralized,
)

__version__ = "0.1.0"
