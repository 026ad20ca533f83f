import numpy as np
import pytest

from cohortalign import (
    Dataset,
    PipelineConfig,
    anchor_only_weights,
    composite_ess,
    compute_weights,
    importance_weights,
    naive_weights,
)

from conftest import make_blob_dataset


def test_naive_weights_are_ones(rng):
    ds = make_blob_dataset(rng, counts=(2, 3))
    w = naive_weights(ds)
    assert w.weights.tolist() == [1.0] * 5
    assert composite_ess(w) == 5.0
    assert w.method_tag == "naive"


def test_identical_cohorts_naive_close_to_translate(rng):
    # with no cohort differences the ESS-optimal weights collapse to naive
    ds = make_blob_dataset(rng, counts=(2500, 7500), shift=0.0)
    translate = compute_weights(ds, PipelineConfig(method="translate", model="qda"))
    naive = compute_weights(ds, PipelineConfig(method="naive"))
    assert np.abs(translate.weights.weights - 1.0).mean() < 0.05
    assert composite_ess(translate.weights) > 0.97 * ds.n
    weighted_mean = (translate.weights.weights * ds.outcomes[:, 0]).mean()
    assert weighted_mean == pytest.approx(ds.outcomes[:, 0].mean(), abs=0.05)
    assert naive.report.composite_ess_empirical == ds.n


def test_anchor_only_weights_definition():
    ds = Dataset(
        labels=np.array([0, 0, 1, 1]),
        covariates=np.ones((4, 1)),
        outcomes=np.arange(4.0)[:, None],
        covariate_names=("x",),
        outcome_names=("y",),
        label_values=(0, 1),
    )
    w = anchor_only_weights(ds)
    assert w.weights.tolist() == [2.0, 2.0, 0.0, 0.0]
    assert composite_ess(w) == 2.0
    assert w.gamma.gamma.tolist() == [1.0, 0.0]


def test_importance_weights_identical_covariates(rng):
    # covariate distributions agree across cohorts, so the covariate-shift
    # correction should be flat; oracle is the constant-ratio limit
    ds = make_blob_dataset(rng, counts=(4000, 16000), p=1, shift=0.0)
    # outcomes are shifted but importance weighting must not see them
    shifted = Dataset(
        labels=ds.labels,
        covariates=ds.covariates,
        outcomes=ds.outcomes + 5.0 * ds.labels[:, None],
        covariate_names=ds.covariate_names,
        outcome_names=ds.outcome_names,
        label_values=ds.label_values,
    )
    w = importance_weights(shifted, model="logistic")
    assert np.abs(w.weights - 1.0).max() < 0.1
    assert abs(w.weights.sum() - shifted.n) <= 1e-8 * shifted.n


def test_importance_weights_invariant_to_outcomes(rng):
    ds = make_blob_dataset(rng, counts=(300, 700), shift=0.4)
    scrambled = Dataset(
        labels=ds.labels,
        covariates=ds.covariates,
        outcomes=-3.0 * ds.outcomes[:, ::-1] + 11.0,
        covariate_names=ds.covariate_names,
        outcome_names=ds.outcome_names,
        label_values=ds.label_values,
    )
    w1 = importance_weights(ds, model="qda")
    w2 = importance_weights(scrambled, model="qda")
    assert np.array_equal(w1.weights, w2.weights)


def test_all_baselines_sum_to_n(rng):
    ds = make_blob_dataset(rng, counts=(150, 350), shift=0.5)
    for w in (
        naive_weights(ds),
        anchor_only_weights(ds),
        importance_weights(ds, model="qda"),
    ):
        assert abs(w.weights.sum() - ds.n) <= 1e-8 * ds.n
        assert (w.weights >= 0).all()
