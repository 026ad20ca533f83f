"""Stage-1 orchestration: one entry point from dataset to weights + ESS report.

compute_weights dispatches on the configured method and returns the weight
set together with an EssReport and (for model-based methods) the fitted
membership model, so bootstrap replicates can reuse predictions when the
fixed-model path is requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import (
    AlignmentProportions,
    EssReport,
    WeightSet,
    alignment_factors,
    alignment_weights,
    cap_weights,
    closed_form_composite_ess,
    cohort_ess,
    composite_ess,
    normalize_weights,
    translate_proportions,
)
from .baselines import anchor_only_weights, naive_weights
from .cohort_model import (
    CohortProbabilityModel,
    EtaMatrix,
    fit_multinomial_logistic,
    fit_qda,
    predict_eta,
)
from .dataset import Dataset, cohort_prevalences

METHODS = ("translate", "naive", "anchor_only", "importance")
MODELS = ("logistic", "qda")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything stage 1 needs: weighting method, model family, knobs."""

    method: str = "translate"
    model: str = "logistic"
    ridge: float = 1e-4
    tol: float = 1e-8
    max_iter: int = 100
    reg: float = 0.0
    feature_map: str = "identity"
    gamma: tuple | None = None  # prespecified alignment shares (skips ESS opt)
    cap_quantile: float | None = None
    ess_ratio_warn: float = 1.25

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.gamma is not None:
            object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "model": self.model,
            "ridge": self.ridge,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "reg": self.reg,
            "feature_map": self.feature_map,
            "gamma": list(self.gamma) if self.gamma is not None else None,
            "cap_quantile": self.cap_quantile,
            "ess_ratio_warn": self.ess_ratio_warn,
        }


@dataclass
class Stage1Result:
    weights: WeightSet
    report: EssReport
    model: CohortProbabilityModel | None = None


def _fit_model(ds: Dataset, cfg: PipelineConfig, scope: str) -> CohortProbabilityModel:
    if cfg.model == "qda":
        return fit_qda(ds, reg=cfg.reg, scope=scope)
    return fit_multinomial_logistic(
        ds,
        ridge=cfg.ridge,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        scope=scope,
        feature_map=cfg.feature_map,
    )


def _empirical_cohort_ess(w: WeightSet, labels: np.ndarray, k: int) -> np.ndarray:
    """Within-cohort ESS of a weight vector: (sum w)^2 / sum w^2 per cohort."""
    totals = np.bincount(labels, weights=w.weights, minlength=k)
    squares = np.bincount(labels, weights=w.weights**2, minlength=k)
    out = np.zeros(k)
    nz = squares > 0
    out[nz] = totals[nz] ** 2 / squares[nz]
    return out


def aligned_weights_from_eta(
    ds: Dataset,
    eta: EtaMatrix,
    cfg: PipelineConfig,
    method_tag: str = "translate",
) -> Stage1Result:
    """Weights + report given an already-predicted eta matrix."""
    prev = cohort_prevalences(ds)
    psi = alignment_factors(eta, ds.labels, prev)
    q = cohort_ess(eta, ds.labels, prev)
    if cfg.gamma is not None:
        gamma = AlignmentProportions(np.asarray(cfg.gamma))
        tag = f"{method_tag}:prespecified"
    else:
        gamma = translate_proportions(q)
        tag = method_tag
    raw = alignment_weights(gamma, prev, psi, ds.labels)
    if cfg.cap_quantile is not None:
        raw = cap_weights(raw, cfg.cap_quantile)
    weights = normalize_weights(raw, gamma=gamma, method_tag=tag)
    report = _build_report(ds, weights, q, gamma, cfg, tag)
    return Stage1Result(weights=weights, report=report)


def _build_report(ds, weights, q, gamma, cfg, tag) -> EssReport:
    empirical = composite_ess(weights)
    closed = closed_form_composite_ess(gamma, q)
    diagnostics = []
    ratio = max(empirical, closed) / max(min(empirical, closed), 1e-300)
    if ratio > cfg.ess_ratio_warn:
        diagnostics.append(
            f"empirical ({empirical:.1f}) and closed-form ({closed:.1f}) composite "
            f"ESS differ by more than {cfg.ess_ratio_warn}x; the membership model "
            "may fit poorly"
        )
    return EssReport(
        cohort_ess=q,
        composite_ess_empirical=empirical,
        composite_ess_closed_form=closed,
        gamma=gamma,
        counts=ds.cohort_counts(),
        labels=ds.label_values,
        method_tag=tag,
        diagnostics=diagnostics,
    )


def compute_weights(
    ds: Dataset,
    cfg: PipelineConfig,
    model: CohortProbabilityModel | None = None,
) -> Stage1Result:
    """Run stage 1 for the configured method.

    Pass a prefitted `model` to skip refitting (bootstrap fast path); it must
    match the method's scope (joint z for "translate", covariates for
    "importance").
    """
    if cfg.method == "naive":
        w = naive_weights(ds)
        q = _empirical_cohort_ess(w, ds.labels, ds.n_cohorts)
        report = _build_report(ds, w, q, w.gamma, cfg, "naive")
        return Stage1Result(weights=w, report=report)

    if cfg.method == "anchor_only":
        w = anchor_only_weights(ds)
        counts = ds.cohort_counts().astype(float)
        empirical = composite_ess(w)
        report = EssReport(
            cohort_ess=_empirical_cohort_ess(w, ds.labels, ds.n_cohorts),
            composite_ess_empirical=empirical,
            composite_ess_closed_form=float(counts[0]),
            gamma=w.gamma,
            counts=ds.cohort_counts(),
            labels=ds.label_values,
            method_tag="anchor_only",
        )
        return Stage1Result(weights=w, report=report)

    if cfg.method == "importance":
        fitted = model if model is not None else _fit_model(ds, cfg, "covariates")
        prev = cohort_prevalences(ds)
        eta = predict_eta(fitted, ds)
        psi = alignment_factors(eta, ds.labels, prev)
        raw = psi.psi
        if cfg.cap_quantile is not None:
            raw = cap_weights(raw, cfg.cap_quantile)
        gamma = AlignmentProportions(prev.pi_hat)
        w = normalize_weights(raw, gamma=gamma, method_tag="importance")
        q = cohort_ess(eta, ds.labels, prev)
        report = _build_report(ds, w, q, gamma, cfg, "importance")
        return Stage1Result(weights=w, report=report, model=fitted)

    # translate
    fitted = model if model is not None else _fit_model(ds, cfg, "all")
    eta = predict_eta(fitted, ds)
    result = aligned_weights_from_eta(ds, eta, cfg, method_tag="translate")
    result.model = fitted
    return result
