"""Weighted plug-in estimation of anchor-cohort outcome features.

A FeatureSpec names a feature kind (mean, sd, variance, covariance,
correlation, cdf_at, median, quantile_at, subgroup_mean,
subgroup_difference) plus the outcome column(s), optional subgroup and grid.
Estimation always runs through the same two steps: build the evaluation
matrix Phi (one row per basis function), take the weighted moment vector
lambda_hat_m = (1/N) sum_i w_i Phi_m(z_i), and map lambda_hat through the
kind's plug-in function h.

Weighted CDF/quantile kinds with the default grid (the sample's unique
outcome values) use a sort-based path that avoids materializing the full
indicator matrix; it produces the same numbers as evaluate_phi +
weighted_lambda and the tests check that equivalence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import WeightSet
from .dataset import Dataset
from .errors import DomainError, FeatureSpecError, ShapeError, SupportError

KINDS = (
    "mean",
    "variance",
    "sd",
    "covariance",
    "correlation",
    "cdf_at",
    "median",
    "quantile_at",
    "subgroup_mean",
    "subgroup_difference",
)


@dataclass(frozen=True)
class FeatureSpec:
    """One estimand over the anchor-aligned weighted sample."""

    kind: str
    outcome: int | str = 0
    outcome2: int | str | None = None
    subgroup: tuple | None = None  # (covariate, value) or (covariate, a, b)
    grid: tuple | None = None
    q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FeatureSpecError(f"unknown feature kind {self.kind!r}")
        if self.kind in ("covariance", "correlation") and self.outcome2 is None:
            raise FeatureSpecError(f"{self.kind} needs a second outcome")
        if self.kind == "quantile_at":
            if self.q is None or not 0.0 < self.q < 1.0:
                raise FeatureSpecError("quantile_at needs q in (0, 1)")
        if self.kind == "cdf_at":
            if not self.grid:
                raise FeatureSpecError("cdf_at needs a grid of evaluation points")
        if self.grid is not None:
            g = tuple(float(v) for v in self.grid)
            if any(b <= a for a, b in zip(g, g[1:])):
                raise FeatureSpecError("grid must be strictly increasing")
            object.__setattr__(self, "grid", g)
        if self.kind == "subgroup_mean":
            if self.subgroup is None or len(self.subgroup) != 2:
                raise FeatureSpecError("subgroup_mean needs (covariate, value)")
        if self.kind == "subgroup_difference":
            if self.subgroup is None or len(self.subgroup) != 3:
                raise FeatureSpecError(
                    "subgroup_difference needs (covariate, value_a, value_b)"
                )

    def outcome_index(self, ds: Dataset, which: int = 1) -> int:
        ref = self.outcome if which == 1 else self.outcome2
        if isinstance(ref, str):
            if ref not in ds.outcome_names:
                raise FeatureSpecError(f"unknown outcome {ref!r}")
            return ds.outcome_names.index(ref)
        idx = int(ref)
        if not 0 <= idx < ds.n_outcomes:
            raise FeatureSpecError(f"outcome index {idx} out of range")
        return idx

    def name(self) -> str:
        if self.kind in ("mean", "variance", "sd", "median"):
            return f"{self.kind}[{self.outcome}]"
        if self.kind in ("covariance", "correlation"):
            return f"{self.kind}[{self.outcome},{self.outcome2}]"
        if self.kind == "cdf_at":
            pts = ",".join(f"{v:g}" for v in self.grid)
            return f"cdf[{self.outcome}@{pts}]"
        if self.kind == "quantile_at":
            return f"q{self.q:g}[{self.outcome}]"
        if self.kind == "subgroup_mean":
            cov, val = self.subgroup
            return f"mean[{self.outcome}|{cov}={val}]"
        cov, a, b = self.subgroup
        return f"diff[{self.outcome}|{cov}={a}-{b}]"


@dataclass
class FunctionalEstimate:
    """lambda_hat plus the derived feature value h(lambda_hat)."""

    lambda_hat: np.ndarray
    value: float | np.ndarray
    feature: FeatureSpec
    weight_method: str

    def to_row(self, se: float | None = None, ci: tuple | None = None) -> dict:
        value = self.value
        if isinstance(value, np.ndarray):
            value = value.tolist()
        row = {
            "feature": self.feature.name(),
            "method": self.weight_method,
            "estimate": value,
        }
        if se is not None:
            row["se"] = float(se)
        if ci is not None:
            row["ci_low"], row["ci_high"] = float(ci[0]), float(ci[1])
        return row


def evaluate_phi(spec: FeatureSpec, ds: Dataset) -> np.ndarray:
    """Evaluation matrix Phi, shape (M, N); indicator rows are 0/1."""
    y = ds.outcomes[:, spec.outcome_index(ds)]
    kind = spec.kind
    if kind == "mean":
        return y[None, :].copy()
    if kind in ("variance", "sd"):
        return np.vstack([y, y * y])
    if kind in ("covariance", "correlation"):
        y2 = ds.outcomes[:, spec.outcome_index(ds, 2)]
        rows = [y, y2, y * y2]
        if kind == "correlation":
            rows += [y * y, y2 * y2]
        return np.vstack(rows)
    if kind in ("cdf_at", "median", "quantile_at"):
        grid = np.asarray(spec.grid if spec.grid else np.unique(y))
        return (y[None, :] <= grid[:, None]).astype(np.float64)
    if kind == "subgroup_mean":
        ind = ds.subgroup_indicator(*spec.subgroup)
        return np.vstack([y * ind, ind])
    if kind == "subgroup_difference":
        cov, a, b = spec.subgroup
        ind_a = ds.subgroup_indicator(cov, a)
        ind_b = ds.subgroup_indicator(cov, b)
        return np.vstack([y * ind_a, ind_a, y * ind_b, ind_b])
    raise FeatureSpecError(f"unknown feature kind {kind!r}")


def weighted_lambda(w: WeightSet, phi: np.ndarray) -> np.ndarray:
    """Weighted moment vector (1/N) sum_i w_i Phi(z_i)."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != w.n:
        raise ShapeError("phi must be (M, N) matching the weight vector")
    return phi @ w.weights / w.n


def _weighted_cdf(y: np.ndarray, weights: np.ndarray):
    """Unique sorted values and the weighted CDF evaluated at each of them."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    cum = np.cumsum(weights[order])
    values = np.unique(ys)
    # CDF at a value = cumulative weight through its final occurrence
    idx = np.searchsorted(ys, values, side="right") - 1
    return values, cum[idx] / weights.sum()


def _nearest_grid_point(grid: np.ndarray, cdf: np.ndarray, target: float) -> float:
    gap = np.abs(cdf - target)
    best = np.nonzero(gap == gap.min())[0]
    return float(grid[best[0]])  # ties resolve to the smaller value


def estimate_feature(
    spec: FeatureSpec, w: WeightSet, ds: Dataset
) -> FunctionalEstimate:
    """Weighted plug-in estimate h(lambda_hat) for one feature."""
    if w.n != ds.n:
        raise ShapeError("weight vector and dataset disagree on N")
    kind = spec.kind

    if kind in ("median", "quantile_at") and spec.grid is None:
        # sort-based weighted CDF over the sample's own values
        y = ds.outcomes[:, spec.outcome_index(ds)]
        values, cdf = _weighted_cdf(y, w.weights)
        target = 0.5 if kind == "median" else spec.q
        value = _nearest_grid_point(values, cdf, target)
        return FunctionalEstimate(cdf, value, spec, w.method_tag)

    lam = weighted_lambda(w, evaluate_phi(spec, ds))

    if kind == "mean":
        value = float(lam[0])
    elif kind in ("variance", "sd"):
        variance = max(float(lam[1] - lam[0] ** 2), 0.0)
        value = float(np.sqrt(variance)) if kind == "sd" else variance
    elif kind == "covariance":
        value = float(lam[2] - lam[0] * lam[1])
    elif kind == "correlation":
        cov = lam[2] - lam[0] * lam[1]
        var1 = max(float(lam[3] - lam[0] ** 2), 0.0)
        var2 = max(float(lam[4] - lam[1] ** 2), 0.0)
        denom = np.sqrt(var1) * np.sqrt(var2)
        if denom == 0.0:
            raise DomainError("zero weighted variance in correlation denominator")
        value = float(np.clip(cov / denom, -1.0, 1.0))
    elif kind == "cdf_at":
        value = np.clip(lam, 0.0, 1.0)  # weight-sum rounding can leak past 1
    elif kind in ("median", "quantile_at"):
        target = 0.5 if kind == "median" else spec.q
        value = _nearest_grid_point(np.asarray(spec.grid), lam, target)
    elif kind == "subgroup_mean":
        if lam[1] <= 0:
            raise SupportError(f"subgroup {spec.subgroup} has no weighted mass")
        value = float(lam[0] / lam[1])
    elif kind == "subgroup_difference":
        if lam[1] <= 0 or lam[3] <= 0:
            raise SupportError(f"a subgroup in {spec.subgroup} has no weighted mass")
        value = float(lam[0] / lam[1] - lam[2] / lam[3])
    else:
        raise FeatureSpecError(f"unknown feature kind {kind!r}")

    return FunctionalEstimate(lam, value, spec, w.method_tag)


def parse_feature(text: str) -> FeatureSpec:
    """Build a FeatureSpec from the CLI string form.

    Examples: "mean:y1", "sd:y2", "covariance:y1,y2", "correlation:y1,y2",
    "median:y1", "quantile:y1@0.25", "cdf:y1@0.5,1.0,1.5",
    "subgroup_mean:y1@sex=male", "subgroup_diff:y1@sex=male,female".
    """
    if ":" not in text:
        raise FeatureSpecError(f"feature {text!r} must look like kind:outcome")
    kind, rest = text.split(":", 1)
    kind = kind.strip().lower()
    alias = {"cdf": "cdf_at", "quantile": "quantile_at", "subgroup_diff":
             "subgroup_difference", "var": "variance"}
    kind = alias.get(kind, kind)
    at = None
    if "@" in rest:
        rest, at = rest.split("@", 1)
    outcomes = [t.strip() for t in rest.split(",") if t.strip()]
    if not outcomes:
        raise FeatureSpecError(f"feature {text!r} names no outcome")

    def _maybe_int(token: str):
        return int(token) if token.lstrip("-").isdigit() else token

    first = _maybe_int(outcomes[0])
    if kind in ("covariance", "correlation"):
        if len(outcomes) != 2:
            raise FeatureSpecError(f"{kind} needs exactly two outcomes")
        return FeatureSpec(kind, first, _maybe_int(outcomes[1]))
    if kind == "cdf_at":
        if at is None:
            raise FeatureSpecError("cdf needs grid points after '@'")
        grid = tuple(float(t) for t in at.split(","))
        return FeatureSpec(kind, first, grid=grid)
    if kind == "quantile_at":
        if at is None:
            raise FeatureSpecError("quantile needs a level after '@'")
        return FeatureSpec(kind, first, q=float(at))
    if kind in ("subgroup_mean", "subgroup_difference"):
        if at is None or "=" not in at:
            raise FeatureSpecError(f"{kind} needs '@covariate=value' details")
        cov, values = at.split("=", 1)
        parts = [v.strip() for v in values.split(",")]
        if kind == "subgroup_mean":
            if len(parts) != 1:
                raise FeatureSpecError("subgroup_mean takes one category")
            return FeatureSpec(kind, first, subgroup=(cov.strip(), parts[0]))
        if len(parts) != 2:
            raise FeatureSpecError("subgroup_difference takes two categories")
        return FeatureSpec(kind, first, subgroup=(cov.strip(), parts[0], parts[1]))
    return FeatureSpec(kind, first)
