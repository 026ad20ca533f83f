import numpy as np
import pytest

from cohortalign import Dataset


def make_blob_dataset(
    rng,
    counts=(60, 120),
    p=2,
    n_outcomes=2,
    shift=0.5,
    scale_step=0.0,
):
    """Gaussian-blob cohorts: cohort s shifted by s*shift in every coordinate."""
    labels = np.repeat(np.arange(len(counts)), counts)
    rng.shuffle(labels)
    n = labels.size
    x = rng.normal(size=(n, p)) * (1.0 + scale_step * labels[:, None])
    x += shift * labels[:, None]
    y = rng.normal(size=(n, n_outcomes)) + shift * labels[:, None]
    return Dataset(
        labels=labels,
        covariates=x,
        outcomes=y,
        covariate_names=tuple(f"x{j}" for j in range(p)),
        outcome_names=tuple(f"y{j}" for j in range(n_outcomes)),
        label_values=tuple(range(len(counts))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
