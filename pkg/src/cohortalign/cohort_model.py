"""Cohort-membership probability models over the joint covariate-outcome space.

Both models estimate theta_s(z) = P(S = s | Z = z) on the pooled sample and
expose log probability ratios eta_s(z) = log(theta_s(z) / theta_0(z)) against
the anchor cohort, the quantity every downstream weight needs. Two model
families are provided:

* multinomial logistic regression, fit by ridge-penalized Newton/IRLS with
  step-halving;
* quadratic discriminant analysis, per-cohort Gaussians combined by Bayes
  rule with the observed prevalences as priors.

Tree ensembles and boosting can be added by subclassing
CohortProbabilityModel; nothing downstream depends on the model family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .dataset import Dataset, cohort_prevalences
from .errors import (
    CollinearityError,
    InsufficientDataError,
    ShapeError,
    SingularityError,
)

# Probability floor applied before any log: keeps eta (and therefore the
# alignment factors) finite in regions one cohort barely covers.
PROB_EPS = 1e-6

# A single design column contributing more than this to the log-odds (per
# standard deviation of the column) means probabilities are pinned at
# machine-level certainty: treat the fit as a perfect-separation blow-up.
SEPARATION_SCALED_NORM = 15.0

# Within-cohort covariance eigenvalue ratio below this counts as singular.
COV_RCOND = 1e-10

MODEL_FORMAT_VERSION = 1


@dataclass
class EtaMatrix:
    """Log probability ratios eta_s(z_i), one row per subject.

    Column 0 (the anchor) is identically zero; all entries are finite.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError("eta matrix must be 2-D")
        if not np.isfinite(values).all():
            raise ShapeError("eta matrix contains non-finite entries")
        if values.shape[1] < 1 or np.any(values[:, 0] != 0.0):
            raise ShapeError("anchor column of the eta matrix must be exactly zero")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_cohorts(self) -> int:
        return self.values.shape[1]

    def own(self, labels: np.ndarray) -> np.ndarray:
        """eta of each subject's own cohort."""
        return self.values[np.arange(self.n), np.asarray(labels)]


def _expand_features(z: np.ndarray, feature_map: str, names=None):
    """Apply the model's z -> feature transformation.

    "identity" passes z through; "quadratic" appends all pairwise products
    z_i * z_j (i <= j), which lets a logistic model pick up variance and
    correlation differences between cohorts.
    """
    if feature_map == "identity":
        return (z, list(names) if names is not None else None)
    if feature_map != "quadratic":
        raise ShapeError(f"unknown feature map {feature_map!r}")
    d = z.shape[1]
    blocks = [z]
    prod_names = []
    for i in range(d):
        blocks.append(z[:, i : i + 1] * z[:, i:])
        if names is not None:
            prod_names += [f"{names[i]}*{names[j]}" for j in range(i, d)]
    expanded = np.hstack(blocks)
    return (expanded, list(names) + prod_names if names is not None else None)


class CohortProbabilityModel:
    """Shared behavior: column scope, feature map, log-probability API."""

    kind = "abstract"

    def __init__(self, scope: str, feature_map: str):
        if scope not in ("all", "covariates"):
            raise ShapeError(f"unknown model scope {scope!r}")
        self.scope = scope
        self.feature_map = feature_map

    def select(self, ds: Dataset) -> np.ndarray:
        return ds.covariates if self.scope == "covariates" else ds.z()

    def log_theta(self, z: np.ndarray) -> np.ndarray:
        """Row-normalized log P(S = s | z); implemented by subclasses."""
        raise NotImplementedError

    def to_json(self) -> str:
        payload = {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind}
        payload.update(self._state())
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CohortProbabilityModel":
        payload = json.loads(text)
        version = payload.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ShapeError(f"unsupported model format version {version!r}")
        kind = payload.get("kind")
        if kind == "multinomial-logistic":
            return MultinomialLogisticModel._from_state(payload)
        if kind == "quadratic-discriminant":
            return QdaModel._from_state(payload)
        raise ShapeError(f"unknown model kind {kind!r}")


class MultinomialLogisticModel(CohortProbabilityModel):
    kind = "multinomial-logistic"

    def __init__(self, coef, scope, feature_map, ridge, converged, n_iter,
                 separation_flag=False, loglik_path=None):
        super().__init__(scope, feature_map)
        self.coef = np.asarray(coef, dtype=np.float64)  # (K-1, 1 + d_features)
        self.ridge = float(ridge)
        self.converged = bool(converged)
        self.n_iter = int(n_iter)
        self.separation_flag = bool(separation_flag)
        # penalized log-likelihood after each accepted step (diagnostics)
        self.loglik_path = list(loglik_path) if loglik_path is not None else []

    def log_theta(self, z: np.ndarray) -> np.ndarray:
        features, _ = _expand_features(np.asarray(z, dtype=np.float64),
                                       self.feature_map)
        if features.shape[1] + 1 != self.coef.shape[1]:
            raise ShapeError(
                f"model expects {self.coef.shape[1] - 1} feature columns, "
                f"got {features.shape[1]}"
            )
        scores = np.zeros((features.shape[0], self.coef.shape[0] + 1))
        scores[:, 1:] = self.coef[:, 0] + features @ self.coef[:, 1:].T
        return scores - logsumexp(scores, axis=1, keepdims=True)

    def _state(self) -> dict:
        return {
            "scope": self.scope,
            "feature_map": self.feature_map,
            "coef": self.coef.tolist(),
            "ridge": self.ridge,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "separation_flag": self.separation_flag,
        }

    @classmethod
    def _from_state(cls, s: dict) -> "MultinomialLogisticModel":
        return cls(s["coef"], s["scope"], s["feature_map"], s["ridge"],
                   s["converged"], s["n_iter"], s["separation_flag"])


class QdaModel(CohortProbabilityModel):
    kind = "quadratic-discriminant"

    def __init__(self, means, covariances, priors, scope, feature_map="identity",
                 reg=0.0):
        super().__init__(scope, feature_map)
        self.means = np.asarray(means, dtype=np.float64)          # (K, d)
        self.covariances = np.asarray(covariances, dtype=np.float64)  # (K, d, d)
        self.priors = np.asarray(priors, dtype=np.float64)        # (K,)
        self.reg = float(reg)
        self._chols = [np.linalg.cholesky(c) for c in self.covariances]

    def log_theta(self, z: np.ndarray) -> np.ndarray:
        features, _ = _expand_features(np.asarray(z, dtype=np.float64),
                                       self.feature_map)
        d = self.means.shape[1]
        if features.shape[1] != d:
            raise ShapeError(f"model expects {d} feature columns, got "
                             f"{features.shape[1]}")
        n, k = features.shape[0], self.means.shape[0]
        log_joint = np.empty((n, k))
        const = d * np.log(2.0 * np.pi)
        for s in range(k):
            chol = self._chols[s]
            diff = features - self.means[s]
            solved = scipy.linalg.solve_triangular(chol, diff.T, lower=True)
            maha = np.einsum("ij,ij->j", solved, solved)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            log_joint[:, s] = np.log(self.priors[s]) - 0.5 * (maha + logdet + const)
        return log_joint - logsumexp(log_joint, axis=1, keepdims=True)

    def _state(self) -> dict:
        return {
            "scope": self.scope,
            "feature_map": self.feature_map,
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "priors": self.priors.tolist(),
            "reg": self.reg,
        }

    @classmethod
    def _from_state(cls, s: dict) -> "QdaModel":
        return cls(s["means"], s["covariances"], s["priors"], s["scope"],
                   s["feature_map"], s["reg"])


def _design(ds: Dataset, scope: str, feature_map: str):
    z = ds.covariates if scope == "covariates" else ds.z()
    names = list(ds.covariate_names)
    if scope == "all":
        names += list(ds.outcome_names)
    features, names = _expand_features(z, feature_map, names)
    design = np.hstack([np.ones((ds.n, 1)), features])
    return design, ["intercept"] + names


def _check_rank(design: np.ndarray, names: list[str]) -> None:
    _, r, pivots = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < design.shape[1]:
        bad = sorted(names[j] for j in pivots[rank:])
        raise CollinearityError(
            "design matrix is rank deficient; collinear column(s): "
            + ", ".join(bad)
        )


def _penalized_loglik(design, onehot, coef, ridge):
    scores = np.zeros((design.shape[0], coef.shape[0] + 1))
    scores[:, 1:] = design @ coef.T
    log_norm = logsumexp(scores, axis=1)
    ll = float((scores * onehot).sum() - log_norm.sum())
    penalty = 0.5 * ridge * float((coef[:, 1:] ** 2).sum())  # intercepts free
    return ll - penalty


def fit_multinomial_logistic(
    ds: Dataset,
    ridge: float = 1e-4,
    tol: float = 1e-8,
    max_iter: int = 100,
    scope: str = "all",
    feature_map: str = "identity",
    ridge_floor: float = 1e-4,
) -> MultinomialLogisticModel:
    """Ridge-penalized multinomial logistic fit by Newton/IRLS.

    The anchor cohort is the reference category. Iterations maximize the
    penalized log-likelihood with step-halving (up to 10 halvings) and stop
    when its relative change falls below `tol`. Intercepts are unpenalized.
    A coefficient blow-up (perfect separation) sets `separation_flag` and,
    if the requested ridge is below `ridge_floor`, the model is refit at the
    floor. A rank-deficient design raises CollinearityError naming the
    collinear columns.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    design, names = _design(ds, scope, feature_map)
    _check_rank(design, names)

    k = ds.n_cohorts
    coef, converged, n_iter, separated, path = _irls(
        design, ds.labels, k, ridge, tol, max_iter
    )
    if separated and ridge < ridge_floor:
        coef, converged, n_iter, _, path = _irls(
            design, ds.labels, k, ridge_floor, tol, max_iter
        )
        ridge = ridge_floor
    return MultinomialLogisticModel(
        coef=coef,
        scope=scope,
        feature_map=feature_map,
        ridge=ridge,
        converged=converged,
        n_iter=n_iter,
        separation_flag=separated,
        loglik_path=path,
    )


def _irls(design, labels, k, ridge, tol, max_iter):
    n, d = design.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    coef = np.zeros((k - 1, d))
    penalty_mask = np.ones(d)
    penalty_mask[0] = 0.0  # intercept stays unpenalized
    scales = design.std(axis=0)
    scales[0] = 1.0  # intercept column

    current = _penalized_loglik(design, onehot, coef, ridge)
    path = [current]
    converged = False
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        scores = np.zeros((n, k))
        scores[:, 1:] = design @ coef.T
        probs = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))

        grad = design.T @ (onehot[:, 1:] - probs[:, 1:])  # (d, k-1)
        grad -= ridge * (penalty_mask[:, None] * coef.T)
        grad_vec = grad.T.reshape(-1)

        hess = np.empty(((k - 1) * d, (k - 1) * d))
        for a in range(1, k):
            for b in range(a, k):
                w = probs[:, a] * ((1.0 if a == b else 0.0) - probs[:, b])
                block = design.T @ (design * w[:, None])
                if a == b:
                    block = block + ridge * np.diag(penalty_mask)
                hess[(a - 1) * d : a * d, (b - 1) * d : b * d] = block
                if a != b:
                    hess[(b - 1) * d : b * d, (a - 1) * d : a * d] = block.T

        try:
            step = scipy.linalg.solve(hess, grad_vec, assume_a="pos")
        except np.linalg.LinAlgError:
            step = scipy.linalg.lstsq(hess, grad_vec)[0]
        step = step.reshape(k - 1, d)

        scale = 1.0
        improved = False
        for _ in range(11):  # full step plus up to 10 halvings
            candidate = coef + scale * step
            value = _penalized_loglik(design, onehot, candidate, ridge)
            if np.isfinite(value) and value >= current:
                coef = candidate
                improved = value > current
                delta = value - current
                current = value
                path.append(current)
                break
            scale *= 0.5
        else:
            break  # no ascent direction left; treat as stalled

        if (np.abs(coef) * scales).max() > SEPARATION_SCALED_NORM or not np.isfinite(
            current
        ):
            separated = True
            break
        if delta <= tol * (abs(current) + 1.0):
            converged = True
            break
        if not improved:
            break
    return coef, converged, it, separated, path


def fit_qda(ds: Dataset, reg: float = 0.0, scope: str = "all") -> QdaModel:
    """Per-cohort Gaussian fit combined by Bayes rule with observed priors.

    `reg` is added to every covariance diagonal. A cohort with fewer
    subjects than dim(z)+1 raises InsufficientDataError; a singular
    within-cohort covariance (with reg = 0) raises SingularityError naming
    the cohort.
    """
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    z = ds.covariates if scope == "covariates" else ds.z()
    d = z.shape[1]
    counts = ds.cohort_counts()
    priors = cohort_prevalences(ds).pi_hat

    means = np.empty((ds.n_cohorts, d))
    covs = np.empty((ds.n_cohorts, d, d))
    for s in range(ds.n_cohorts):
        if counts[s] <= d:
            raise InsufficientDataError(
                f"cohort {ds.label_values[s]!r} has {counts[s]} subjects; "
                f"need more than dim(z) = {d} for a covariance estimate"
            )
        block = z[ds.labels == s]
        means[s] = block.mean(axis=0)
        covs[s] = np.atleast_2d(np.cov(block, rowvar=False, ddof=1)) + reg * np.eye(d)
        eigs = np.linalg.eigvalsh(covs[s])
        if eigs[0] <= COV_RCOND * max(eigs[-1], np.finfo(float).tiny):
            raise SingularityError(
                f"singular covariance in cohort {ds.label_values[s]!r}; "
                "increase reg or drop collinear columns"
            )
    return QdaModel(means, covs, priors, scope=scope, reg=reg)


def predict_eta(model: CohortProbabilityModel, ds: Dataset) -> EtaMatrix:
    """Log ratios against the anchor, with probabilities floored at PROB_EPS.

    The anchor column is exactly zero by construction.
    """
    theta = np.exp(model.log_theta(model.select(ds)))
    if theta.shape != (ds.n, ds.n_cohorts):
        raise ShapeError(
            f"model produced probabilities of shape {theta.shape}, expected "
            f"{(ds.n, ds.n_cohorts)}"
        )
    clipped = np.clip(theta, PROB_EPS, 1.0 - PROB_EPS)
    log_theta = np.log(clipped)
    eta = log_theta - log_theta[:, [0]]
    eta[:, 0] = 0.0
    return EtaMatrix(eta)
