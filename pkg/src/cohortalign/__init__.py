"""Anchor-aligned cohort weighting and weighted estimation.

Learns per-subject weights that transform a pooled multi-cohort sample into
a pseudopopulation aligned with a small anchor cohort, choosing cohort
shares that maximize the composite effective sample size; then estimates
anchor-cohort outcome features (means, SDs, covariances, correlations,
CDFs, quantiles, subgroup contrasts) from the weighted sample with
bootstrap uncertainty. Includes naive-pooling, anchor-only and
importance-weighting baselines and a synthetic-study harness.
"""

from .alignment import (
    AlignmentFactors,
    AlignmentProportions,
    EssReport,
    WeightSet,
    alignment_factors,
    alignment_weights,
    closed_form_composite_ess,
    cohort_ess,
    composite_ess,
    normalize_weights,
    translate_proportions,
)
from .baselines import anchor_only_weights, importance_weights, naive_weights
from .cohort_model import (
    CohortProbabilityModel,
    EtaMatrix,
    MultinomialLogisticModel,
    QdaModel,
    fit_multinomial_logistic,
    fit_qda,
    predict_eta,
)
from .dataset import (
    ColumnSchema,
    Dataset,
    PrevalenceVector,
    cohort_prevalences,
    load_dataset,
)
from .functionals import (
    FeatureSpec,
    FunctionalEstimate,
    estimate_feature,
    evaluate_phi,
    parse_feature,
    weighted_lambda,
)
from .pipeline import PipelineConfig, Stage1Result, compute_weights
from .resampling import (
    BootstrapResult,
    BootstrapRun,
    bootstrap_pipeline,
    paired_difference,
    replicate_rng,
)
from .simulation import (
    OracleTruths,
    ScenarioConfig,
    StudyResult,
    generate_dataset,
    oracle_truths,
    run_study,
    scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentFactors",
    "AlignmentProportions",
    "BootstrapResult",
    "BootstrapRun",
    "CohortProbabilityModel",
    "ColumnSchema",
    "Dataset",
    "EssReport",
    "EtaMatrix",
    "FeatureSpec",
    "FunctionalEstimate",
    "MultinomialLogisticModel",
    "OracleTruths",
    "PipelineConfig",
    "PrevalenceVector",
    "QdaModel",
    "ScenarioConfig",
    "Stage1Result",
    "StudyResult",
    "WeightSet",
    "alignment_factors",
    "alignment_weights",
    "anchor_only_weights",
    "bootstrap_pipeline",
    "closed_form_composite_ess",
    "cohort_ess",
    "cohort_prevalences",
    "composite_ess",
    "compute_weights",
    "estimate_feature",
    "evaluate_phi",
    "fit_multinomial_logistic",
    "fit_qda",
    "generate_dataset",
    "importance_weights",
    "load_dataset",
    "naive_weights",
    "normalize_weights",
    "oracle_truths",
    "paired_difference",
    "parse_feature",
    "predict_eta",
    "replicate_rng",
    "run_study",
    "scenario",
    "translate_proportions",
    "weighted_lambda",
]
