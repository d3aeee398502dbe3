"""Anomalography: map traffic-volume anomalies across a network from
incomplete link-load measurements, in batch or slot by slot.

The estimators exploit two kinds of structure at once: nominal traffic
occupies a low-dimensional subspace of the link space, and anomalies are
sparse across flows and time.
"""

from .core import (
    AnomalographyError,
    AnomalyMap,
    DimensionMismatchError,
    Dims,
    HyperParams,
    MissingDataError,
    NonFiniteInputError,
    NotPositiveDefiniteError,
    NumericsError,
    Observation,
    ObservationMask,
    RankBoundExceededError,
    RoutingMatrix,
    Subspace,
    solve_pd,
    solve_pd_batch,
    substream,
    validate,
)
from .lasso import LassoProblem, lasso_cd, soft_threshold
from .netsim import (
    ChurnModel,
    SynthConfig,
    Topology,
    churn_routing_stream,
    churn_step,
    gen_rgg,
    gen_stream,
    min_hop_routing,
)
from .batch import (
    BatchProblem,
    BatchSolution,
    bcd_solve,
    convex_objective,
    factorization_gap,
    factorized_objective,
    optimality_certificate,
    svt_solve,
)
from .online import (
    NesterovState,
    OnlineState,
    SlotEstimate,
    estimate_slot,
    online_step,
    rls_fast_step,
    run_tracker,
    sgd_step,
)
from .evaluation import (
    DetectionReport,
    ErrorTrace,
    anomography,
    approx_cost,
    benchmark_anomaly_extract,
    detection_rates,
    pca_residual_detector,
    roc_auc,
    roc_sweep,
    target_cost,
)
from .cli import ExperimentConfig, load_matrix_csv, replay_stream, run_experiment, save_matrix_csv

__version__ = "0.1.0"
