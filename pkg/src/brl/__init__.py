"""Balanced risk learning for severely imbalanced binary classification.

Class-weighted empirical measures, balanced k-nearest-neighbour
classification, ball-constrained balanced empirical risk minimization,
explicit finite-sample deviation bounds, and a reproducible experiment
harness over a heavy-tailed synthetic benchmark.
"""

from .bounds import (
    BoundInputs,
    BoundValue,
    ConstantTable,
    EnvelopeResult,
    FixedPointResult,
    KnnBoundParams,
    LogDomainWarning,
    PRatioResult,
    bernstein_constant_linear,
    chernoff_interval,
    compute_subroot_constant,
    constrained_excess_bound,
    default_constants,
    fast_rate_bound,
    knn_radius_envelope,
    p_ratio_bound,
    slow_rate_bound,
    slow_rate_erm_bound,
    subroot_fixed_point,
    unit_ball_volume,
    vc_transform,
)
from .data import (
    DataFormatError,
    EtaFn,
    MarginalSampler,
    StudentMixtureParams,
    TruncatedClassSampler,
    load_cache,
    load_csv,
    sample_student_mixture,
    save_cache,
    scale_unit_box,
    student_tail_2d,
    subsample_to_prevalence,
    true_eta,
)
from .erm import (
    BernsteinCheck,
    FitResult,
    OptimizerConfig,
    balanced_risk_gradient,
    bernstein_empirical_check,
    build_class_conditional_sample,
    estimate_oracle_score,
    fit_constrained_balanced_erm,
)
from .experiments import (
    CrossCheckResult,
    ExcessCurveConfig,
    HeatmapConfig,
    identity_cross_check,
    read_csv_rows,
    run_bound_report,
    run_excess_curve,
    run_knn_heatmap,
    write_csv,
)
from .knn import (
    BayesClassifierFn,
    BayesOracle,
    ConstantClassifier,
    KnnClassifierFn,
    KnnModel,
    bayes_balanced_classify,
    excess_am_risk_identity,
    fit_knn,
    knn_classify,
    knn_eta,
    knn_eta_radius,
    knn_radius,
)
from .measures import (
    DegenerateClassError,
    EmptyDatasetError,
    LabeledDataset,
    MCEstimate,
    balanced_empirical_risk,
    empirical_mean,
    estimate_class_prob,
    mc_weighted_excess,
    mc_weighted_risk,
    weighted_empirical,
    zero_one_am_risk,
)
from .scoring import LinearScore, LossSpec, make_loss, project_ball

__version__ = "0.1.0"
