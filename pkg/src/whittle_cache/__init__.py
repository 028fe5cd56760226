"""Whittle-index tooling for wireless edge caching.

Per-content queue MDPs, exact index computation with indexability
certification, threshold-aware Q-learning (tabular and linear function
approximation) with two-timescale telemetry, a multi-content continuous-time
simulator with cache policies, and workload generation/ingestion.
"""

__version__ = "0.1.0"

from .errors import (
    BracketNotFound,
    ConfigError,
    DeadSystem,
    DegenerateDenominator,
    EmptyTrace,
    MaxIterationsExceeded,
    NonMonotonicTimestamps,
    WhittleCacheError,
)
from .mdp import (
    ACTIVE,
    PASSIVE,
    PerContentParams,
    Transition,
    content_rng,
    down_probability,
    sample_transition,
    self_probability,
    stage_cost,
    transition_matrix,
    up_probability,
)
from .index import (
    StationaryDist,
    ValueFunctions,
    WhittleTable,
    discounted_value_iteration,
    indifference_index_oracle,
    passive_set,
    relative_value_iteration,
    stationary_distribution,
    threshold_of_policy,
    threshold_policy,
    whittle_index_closed_form,
    whittle_table,
)
from .learning import (
    GAUSSIAN_RBF,
    GEOMETRIC,
    ONEHOT,
    THEOREM1,
    FeatureSpec,
    LearnRun,
    LfaLearnerState,
    StepSizeSchedule,
    SweepResult,
    SweepTrace,
    TabularLearnerState,
    ThresholdFixedPoint,
    TsaTelemetry,
    epsilon_greedy_action,
    equilibrium_subsidy,
    feature_matrix,
    features,
    lfa_run,
    lfa_state,
    lfa_sweep,
    lfa_update,
    lfa_w_update,
    q_whittle_run,
    q_whittle_step,
    qplus_whittle_run,
    qplus_whittle_sweep,
    qplus_whittle_update,
    qplus_whittle_w_update,
    record_sweep,
    schedule_arrays,
    step_sizes,
    tabular_state,
    threshold_action,
    tsa_telemetry,
)
from .simulator import (
    ComparisonResult,
    IndexPolicy,
    LfuPolicy,
    LruPolicy,
    Metrics,
    PolicyAggregate,
    RandomPolicy,
    SystemConfig,
    SystemState,
    next_event,
    run_comparison,
    run_episode,
    select_cache,
)
from .workload import (
    TraceEvents,
    Workload,
    average_active_contents,
    parse_trace,
    poisson_trace,
    write_trace,
    zipf_workload,
)

__all__ = [
    "__version__",
    "ACTIVE",
    "PASSIVE",
    "BracketNotFound",
    "ConfigError",
    "DeadSystem",
    "DegenerateDenominator",
    "EmptyTrace",
    "MaxIterationsExceeded",
    "NonMonotonicTimestamps",
    "WhittleCacheError",
    "PerContentParams",
    "Transition",
    "content_rng",
    "down_probability",
    "sample_transition",
    "self_probability",
    "stage_cost",
    "transition_matrix",
    "up_probability",
    "StationaryDist",
    "ValueFunctions",
    "WhittleTable",
    "discounted_value_iteration",
    "indifference_index_oracle",
    "passive_set",
    "relative_value_iteration",
    "stationary_distribution",
    "threshold_of_policy",
    "threshold_policy",
    "whittle_index_closed_form",
    "whittle_table",
    "GAUSSIAN_RBF",
    "GEOMETRIC",
    "ONEHOT",
    "THEOREM1",
    "FeatureSpec",
    "LearnRun",
    "LfaLearnerState",
    "StepSizeSchedule",
    "SweepResult",
    "SweepTrace",
    "TabularLearnerState",
    "ThresholdFixedPoint",
    "TsaTelemetry",
    "epsilon_greedy_action",
    "equilibrium_subsidy",
    "feature_matrix",
    "features",
    "lfa_run",
    "lfa_state",
    "lfa_sweep",
    "lfa_update",
    "lfa_w_update",
    "q_whittle_run",
    "q_whittle_step",
    "qplus_whittle_run",
    "qplus_whittle_sweep",
    "qplus_whittle_update",
    "qplus_whittle_w_update",
    "record_sweep",
    "schedule_arrays",
    "step_sizes",
    "tabular_state",
    "threshold_action",
    "tsa_telemetry",
    "ComparisonResult",
    "IndexPolicy",
    "LfuPolicy",
    "LruPolicy",
    "Metrics",
    "PolicyAggregate",
    "RandomPolicy",
    "SystemConfig",
    "SystemState",
    "next_event",
    "run_comparison",
    "run_episode",
    "select_cache",
    "TraceEvents",
    "Workload",
    "average_active_contents",
    "parse_trace",
    "poisson_trace",
    "write_trace",
    "zipf_workload",
]
