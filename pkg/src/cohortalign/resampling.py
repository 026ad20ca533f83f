"""Nonparametric bootstrap over subjects with a counter-based RNG contract.

Every replicate r derives its own random stream from the 128-bit key
(seed, r), so serial and parallel execution produce bit-identical results
and any tracked quantity can be paired with any other quantity produced
under the same (dataset, seed, B): per-replicate resample indices match.
Percentile intervals use order statistics of the replicate values, no
normal approximation.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import PairingError, SupportError
from .functionals import FeatureSpec, estimate_feature
from .pipeline import PipelineConfig, compute_weights

MAX_REDRAWS_PER_REPLICATE = 100
ESS_QUANTITY = "ess"


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream keyed by (seed, replicate index)."""
    if seed < 0 or index < 0:
        raise ValueError("seed and replicate index must be nonnegative")
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def dataset_fingerprint(ds: Dataset) -> str:
    digest = hashlib.sha256()
    digest.update(ds.labels.tobytes())
    digest.update(ds.covariates.tobytes())
    digest.update(ds.outcomes.tobytes())
    return digest.hexdigest()[:16]


@dataclass
class BootstrapResult:
    """Replicate values, point estimate and percentile CI for one quantity."""

    quantity: str
    point_estimate: float
    replicate_values: np.ndarray
    se: float
    ci: tuple[float, float]
    alpha: float
    b: int
    seed: int
    provenance: str
    significant: bool | None = None

    def to_dict(self) -> dict:
        out = {
            "quantity": self.quantity,
            "estimate": float(self.point_estimate),
            "se": float(self.se),
            "ci_low": float(self.ci[0]),
            "ci_high": float(self.ci[1]),
            "b": self.b,
            "seed": self.seed,
        }
        if self.significant is not None:
            out["significant"] = bool(self.significant)
        return out


@dataclass
class BootstrapRun:
    """All tracked quantities from one bootstrap pass plus shared bookkeeping."""

    results: dict[str, BootstrapResult]
    b: int
    seed: int
    alpha: float
    redraw_count: int = 0
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, quantity: str) -> BootstrapResult:
        return self.results[quantity]

    def to_rows(self) -> list[dict]:
        rows = []
        for quantity in self.results:
            row = self.results[quantity].to_dict()
            row["redraw_count"] = self.redraw_count
            rows.append(row)
        return rows


def _percentile_ci(values: np.ndarray, alpha: float) -> tuple[float, float]:
    low = np.quantile(values, alpha / 2.0, method="lower")
    high = np.quantile(values, 1.0 - alpha / 2.0, method="higher")
    return float(low), float(high)


def _summarize(quantity, point, values, alpha, b, seed, provenance):
    values = np.asarray(values, dtype=np.float64)
    se = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return BootstrapResult(
        quantity=quantity,
        point_estimate=float(point),
        replicate_values=values,
        se=se,
        ci=_percentile_ci(values, alpha),
        alpha=alpha,
        b=b,
        seed=seed,
        provenance=provenance,
    )


def _evaluate(ds, cfg, features, model, track_ess):
    stage1 = compute_weights(ds, cfg, model=model)
    values = {}
    if track_ess:
        values[ESS_QUANTITY] = stage1.report.composite_ess_empirical
    for spec in features:
        est = estimate_feature(spec, stage1.weights, ds)
        if spec.kind == "cdf_at":
            for point, v in zip(spec.grid, np.atleast_1d(est.value)):
                values[f"cdf[{spec.outcome}@{point:g}]"] = float(v)
        else:
            values[spec.name()] = float(est.value)
    return values


def _resample_indices(rng, ds, stratified) -> tuple[np.ndarray, int]:
    """Draw N subjects with replacement, redrawing while any cohort is empty.

    Stratified mode resamples within each cohort, preserving the realized
    cohort counts (so no redraws can occur); pooled mode matches the
    i.i.d.-composite-sample reading and is the default.
    """
    if stratified:
        idx = np.empty(ds.n, dtype=np.int64)
        position = 0
        for s in range(ds.n_cohorts):
            members = np.nonzero(ds.labels == s)[0]
            take = rng.integers(0, members.size, size=members.size)
            idx[position : position + members.size] = members[take]
            position += members.size
        return idx, 0
    for attempt in range(MAX_REDRAWS_PER_REPLICATE):
        idx = rng.integers(0, ds.n, size=ds.n)
        counts = np.bincount(ds.labels[idx], minlength=ds.n_cohorts)
        if (counts > 0).all():
            return idx, attempt
    raise SupportError(
        f"could not draw a resample covering every cohort in "
        f"{MAX_REDRAWS_PER_REPLICATE} attempts"
    )


_WORKER_STATE: dict = {}


def _init_worker(ds, cfg, features, seed, fixed_model, track_ess, stratified):
    _WORKER_STATE["args"] = (ds, cfg, features, seed, fixed_model, track_ess,
                             stratified)


def _run_replicate(r: int):
    (ds, cfg, features, seed, fixed_model, track_ess,
     stratified) = _WORKER_STATE["args"]
    rng = replicate_rng(seed, r)
    idx, redraws = _resample_indices(rng, ds, stratified)
    ds_r = ds.take(idx)
    values = _evaluate(ds_r, cfg, features, fixed_model, track_ess)
    return r, redraws, values


def bootstrap_pipeline(
    ds: Dataset,
    cfg: PipelineConfig,
    features: list[FeatureSpec],
    b: int,
    seed: int,
    alpha: float = 0.05,
    threads: int = 1,
    refit: bool = True,
    track_ess: bool = True,
    stratified: bool = False,
) -> BootstrapRun:
    """Resample subjects, rerun stage 1 + stage 2, summarize every quantity.

    With refit=True (default) the membership model is refit inside every
    replicate; refit=False freezes the model fit on the original data and
    only re-derives prevalences, alignment shares and weights. stratified
    resampling (within cohorts) is available for sensitivity analysis.
    """
    if b < 2:
        raise ValueError("bootstrap needs B >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")

    fixed_model = None
    point_stage = compute_weights(ds, cfg)
    if not refit:
        fixed_model = point_stage.model
    point_values = _evaluate(ds, cfg, features, point_stage.model, track_ess)

    init_args = (ds, cfg, features, seed, fixed_model, track_ess, stratified)
    if threads > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=init_args
        ) as pool:
            chunk = max(1, b // (8 * threads))
            outputs = list(pool.map(_run_replicate, range(b), chunksize=chunk))
    else:
        _init_worker(*init_args)
        outputs = [_run_replicate(r) for r in range(b)]
    outputs.sort(key=lambda item: item[0])  # schedule-independent assembly

    redraw_count = sum(item[1] for item in outputs)
    # provenance must pin everything that determines the resample indices
    sampling = "stratified" if stratified else "pooled"
    provenance = f"{dataset_fingerprint(ds)}:{seed}:{b}:{sampling}"
    results = {}
    for quantity in point_values:
        values = np.array([item[2][quantity] for item in outputs])
        results[quantity] = _summarize(
            quantity, point_values[quantity], values, alpha, b, seed, provenance
        )
    warnings = []
    if redraw_count > 0.10 * b:
        warnings.append(
            f"{redraw_count} redraws across {b} replicates (> 10%); cohort "
            "coverage of resamples is fragile"
        )
    return BootstrapRun(
        results=results,
        b=b,
        seed=seed,
        alpha=alpha,
        redraw_count=redraw_count,
        warnings=warnings,
    )


def paired_difference(a: BootstrapResult, b: BootstrapResult) -> BootstrapResult:
    """Replicate-wise a - b with percentile CI and a significance flag.

    Requires both results to come from the same replicate stream: same
    dataset, seed and B (and therefore identical resample indices).
    """
    if a.provenance != b.provenance or a.b != b.b or a.alpha != b.alpha:
        raise PairingError(
            "results come from different replicate streams and cannot be paired"
        )
    diffs = a.replicate_values - b.replicate_values
    out = _summarize(
        f"{a.quantity} - {b.quantity}",
        a.point_estimate - b.point_estimate,
        diffs,
        a.alpha,
        a.b,
        a.seed,
        a.provenance,
    )
    low, high = out.ci
    out.significant = bool(low > 0.0 or high < 0.0)
    return out
