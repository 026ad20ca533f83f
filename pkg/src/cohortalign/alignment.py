"""Anchor-aligned weighting: alignment factors, cohort ESS, optimal proportions.

The chain runs: eta (log membership ratios) -> per-subject alignment factors
psi -> per-cohort effective sample sizes Q_s -> ESS-optimal alignment
proportions gamma -> raw weights (gamma_s / pi_s) * psi -> weights normalized
to sum N -> composite ESS. The closed-form composite ESS
(sum_s gamma_s^2 / Q_s * (pihat_s / pi_s))^-1 is kept alongside the empirical
N^2 / sum(w^2) value as a cross-check: a large gap between the two signals
classifier misfit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort_model import EtaMatrix
from .dataset import PrevalenceVector
from .errors import DegenerateWeightsError, DomainError, ShapeError, SupportError

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class AlignmentFactors:
    """Per-subject density ratio of anchor to own cohort; 1 on anchor rows."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.ascontiguousarray(np.asarray(self.psi, dtype=np.float64))
        if psi.ndim != 1:
            raise ShapeError("psi must be a vector")
        if not np.isfinite(psi).all() or (psi <= 0).any():
            raise DomainError("alignment factors must be finite and positive")
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)


@dataclass(frozen=True)
class AlignmentProportions:
    """Cohort shares of the aligned pseudopopulation; a point on the simplex."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.ascontiguousarray(np.asarray(self.gamma, dtype=np.float64))
        if gamma.ndim != 1 or gamma.size < 1:
            raise ShapeError("gamma must be a non-empty vector")
        if (gamma < 0).any():
            raise DomainError("alignment proportions must be nonnegative")
        if abs(gamma.sum() - 1.0) > SIMPLEX_TOL:
            raise DomainError("alignment proportions must sum to 1 within 1e-12")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)


@dataclass
class WeightSet:
    """Normalized subject weights (sum N) plus the gamma that produced them."""

    weights: np.ndarray
    gamma: AlignmentProportions | None
    method_tag: str

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1:
            raise ShapeError("weights must be a vector")
        if (w < 0).any() or not np.isfinite(w).all():
            raise DomainError("weights must be finite and nonnegative")
        n = w.shape[0]
        if abs(w.sum() - n) > 1e-8 * max(n, 1):
            raise DomainError("normalized weights must sum to N within 1e-8*N")
        w.flags.writeable = False
        self.weights = w

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass
class EssReport:
    """Per-cohort and composite effective sample sizes for one weighting run."""

    cohort_ess: np.ndarray
    composite_ess_empirical: float
    composite_ess_closed_form: float
    gamma: AlignmentProportions
    counts: np.ndarray | None = None
    labels: tuple | None = None
    method_tag: str = "translate"
    diagnostics: list[str] = field(default_factory=list)

    def pct_of_n(self) -> float:
        n = int(self.counts.sum()) if self.counts is not None else 0
        return 100.0 * self.composite_ess_empirical / n if n else float("nan")

    def to_dict(self) -> dict:
        out = {
            "method": self.method_tag,
            "composite_ess_empirical": float(self.composite_ess_empirical),
            "composite_ess_closed_form": float(self.composite_ess_closed_form),
            "ess_pct_of_n": float(self.pct_of_n()),
            "diagnostics": list(self.diagnostics),
            "cohorts": [],
        }
        for s in range(len(self.cohort_ess)):
            out["cohorts"].append(
                {
                    "label": self.labels[s] if self.labels else s,
                    "count": int(self.counts[s]) if self.counts is not None else None,
                    "cohort_ess": float(self.cohort_ess[s]),
                    "gamma": float(self.gamma.gamma[s]),
                }
            )
        return out


def _check_lengths(eta: EtaMatrix, labels: np.ndarray, prev: PrevalenceVector):
    labels = np.asarray(labels)
    if labels.shape[0] != eta.n:
        raise ShapeError("labels and eta disagree on N")
    if prev.pi_hat.shape[0] != eta.n_cohorts:
        raise ShapeError("prevalences and eta disagree on the number of cohorts")
    if labels.min() < 0 or labels.max() >= eta.n_cohorts:
        raise ShapeError("labels out of range for the eta matrix")
    return labels


def alignment_factors(
    eta: EtaMatrix, labels: np.ndarray, prev: PrevalenceVector
) -> AlignmentFactors:
    """psi_i = (pihat_{s_i} / pihat_0) * exp(-eta_{s_i}(z_i)).

    Anchor rows come out exactly 1: their eta is exactly 0 and the
    prevalence ratio is 1.
    """
    labels = _check_lengths(eta, labels, prev)
    ratio = prev.pi_hat[labels] / prev.pi_hat[0]
    psi = ratio * np.exp(-eta.own(labels))
    return AlignmentFactors(psi)


def cohort_ess(
    eta: EtaMatrix, labels: np.ndarray, prev: PrevalenceVector
) -> np.ndarray:
    """Per-cohort effective sample size Q_s = N * pihat_0^2 / mean(g_s).

    g_s averages exp(-2 eta) over the cohort's own rows. Computed as
    N_0^2 / sum_{i in s} exp(-2 eta_i), which is algebraically identical and
    returns exactly N_0 for the anchor (every anchor term is exp(0) = 1).
    """
    labels = _check_lengths(eta, labels, prev)
    n = eta.n
    n0 = prev.pi_hat[0] * n
    if abs(n0 - round(n0)) < 1e-9:  # count-consistent prevalences: keep N_0 exact
        n0 = float(round(n0))
    g = np.exp(-2.0 * eta.own(labels))
    sums = np.bincount(labels, weights=g, minlength=eta.n_cohorts)
    if (sums <= 0).any():
        empty = np.nonzero(sums <= 0)[0]
        raise SupportError(f"cohort(s) {empty.tolist()} have no usable mass")
    return n0 * n0 / sums


def translate_proportions(cohort_ess_values: np.ndarray) -> AlignmentProportions:
    """ESS-proportional alignment shares: gamma_s = Q_s / sum_r Q_r."""
    q = np.asarray(cohort_ess_values, dtype=np.float64)
    if q.ndim != 1 or q.size < 1:
        raise ShapeError("cohort ESS must be a non-empty vector")
    if (q <= 0).any() or not np.isfinite(q).all():
        raise DomainError("cohort ESS entries must be positive and finite")
    return AlignmentProportions(q / q.sum())


def alignment_weights(
    gamma: AlignmentProportions,
    prev: PrevalenceVector,
    psi: AlignmentFactors,
    labels: np.ndarray,
) -> np.ndarray:
    """Raw, un-normalized weights (gamma_{s_i} / pihat_{s_i}) * psi_i."""
    labels = np.asarray(labels)
    if gamma.gamma.shape != prev.pi_hat.shape:
        raise ShapeError("gamma and prevalences disagree on the number of cohorts")
    if labels.shape[0] != psi.psi.shape[0]:
        raise ShapeError("labels and psi disagree on N")
    return (gamma.gamma[labels] / prev.pi_hat[labels]) * psi.psi


def cap_weights(raw: np.ndarray, quantile: float) -> np.ndarray:
    """Cap raw weights at the given upper quantile (guard for psi blow-ups)."""
    if not 0.0 < quantile <= 1.0:
        raise DomainError("cap quantile must lie in (0, 1]")
    cap = np.quantile(raw, quantile)
    return np.minimum(raw, cap)


def normalize_weights(
    raw: np.ndarray,
    gamma: AlignmentProportions | None = None,
    method_tag: str = "translate",
) -> WeightSet:
    """Rescale raw weights to sum to N, preserving order."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ShapeError("raw weights must be a vector")
    if (raw < 0).any() or not np.isfinite(raw).all():
        raise DomainError("raw weights must be finite and nonnegative")
    total = raw.sum()
    if total <= 0:
        raise DegenerateWeightsError("all raw weights are zero")
    n = raw.shape[0]
    return WeightSet(weights=n * raw / total, gamma=gamma, method_tag=method_tag)


def composite_ess(w: WeightSet) -> float:
    """Empirical composite ESS N^2 / sum(w^2); equals N iff weights are equal."""
    return float(w.n**2 / np.sum(w.weights**2))


def closed_form_composite_ess(
    gamma: AlignmentProportions,
    cohort_ess_values: np.ndarray,
    prev: PrevalenceVector | None = None,
    true_prev: np.ndarray | None = None,
) -> float:
    """Harmonic-form composite ESS (sum_s gamma_s^2 / Q_s * (pihat_s/pi_s))^-1.

    True prevalences are unknown outside simulations, so pi_s defaults to
    pihat_s and the ratio drops out; pass `true_prev` to restore it. At the
    ESS-proportional gamma the value reduces to sum_s Q_s.
    """
    q = np.asarray(cohort_ess_values, dtype=np.float64)
    g = gamma.gamma
    if q.shape != g.shape:
        raise ShapeError("gamma and cohort ESS disagree on the number of cohorts")
    if (q < 0).any():
        raise DomainError("cohort ESS entries must be nonnegative")
    if np.any((q == 0) & (g > 0)):
        raise DomainError("gamma places mass on a cohort with zero ESS")
    ratio = np.ones_like(q)
    if true_prev is not None:
        if prev is None:
            raise ShapeError("true_prev requires the observed prevalences")
        ratio = prev.pi_hat / np.asarray(true_prev, dtype=np.float64)
    active = g > 0
    return float(1.0 / np.sum(g[active] ** 2 / q[active] * ratio[active]))
