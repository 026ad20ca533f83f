"""Comparator weighting schemes: naive pooling, anchor-only, importance weighting.

Importance weighting is the covariate-only analogue of the aligned weights:
the membership model sees covariates but not outcomes, and the cohort shares
stay at the observed prevalences instead of being ESS-optimized. It corrects
covariate shift only, which is exactly the contrast the aligned weights are
measured against.
"""

from __future__ import annotations

import numpy as np

from .alignment import AlignmentProportions, alignment_factors, normalize_weights
from .alignment import WeightSet
from .cohort_model import fit_multinomial_logistic, fit_qda, predict_eta
from .dataset import Dataset, cohort_prevalences


def naive_weights(ds: Dataset) -> WeightSet:
    """Unit weight for every subject: the pooled super-cohort analysis."""
    prev = cohort_prevalences(ds)
    return WeightSet(
        weights=np.ones(ds.n),
        gamma=AlignmentProportions(prev.pi_hat),
        method_tag="naive",
    )


def anchor_only_weights(ds: Dataset) -> WeightSet:
    """(N / N_0) on anchor subjects, zero elsewhere."""
    counts = ds.cohort_counts()
    gamma = np.zeros(ds.n_cohorts)
    gamma[0] = 1.0
    weights = np.where(ds.labels == 0, ds.n / counts[0], 0.0)
    return WeightSet(
        weights=weights,
        gamma=AlignmentProportions(gamma),
        method_tag="anchor_only",
    )


def importance_weights(
    ds: Dataset, model: str = "logistic", **model_kwargs
) -> WeightSet:
    """Covariate-shift correction toward the anchor's covariate law.

    Fits the membership model on covariates only, computes the covariate
    alignment factor for every subject (anchor rows get exactly 1), and
    normalizes. Outcome columns never enter, so the weights are invariant to
    any change of the outcomes.
    """
    if model == "logistic":
        fitted = fit_multinomial_logistic(ds, scope="covariates", **model_kwargs)
    elif model == "qda":
        fitted = fit_qda(ds, scope="covariates", **model_kwargs)
    else:
        raise ValueError(f"unknown model {model!r}")
    prev = cohort_prevalences(ds)
    eta = predict_eta(fitted, ds)
    psi = alignment_factors(eta, ds.labels, prev)
    return normalize_weights(
        psi.psi, gamma=AlignmentProportions(prev.pi_hat), method_tag="importance"
    )
