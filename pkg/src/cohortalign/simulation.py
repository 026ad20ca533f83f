"""Synthetic two-cohort study: data generator, ground-truth oracle, bias/RMSE harness.

The generator draws a small anchor cohort (label 0) and one large external
cohort whose covariates and/or outcomes are shifted:

    x1 ~ Bernoulli(x1_prob)
    x2 ~ Uniform(0, u)                 u depends on the scale convention
    x3 ~ Normal(0, v)
    x4 | s ~ Normal(phi_x * s, v)
    y_l | x, s ~ Normal(sum_j x_j + phi_y * s, sigma_s^2),  l = 1, 2
    Cov(y_1, y_2 | x, s) = (-1)^(1+s) * 0.5 * sigma_s^2

so the outcome noise is negatively correlated inside the anchor cohort and
positively correlated inside the external one. Under the default "variance"
convention the printed scale 0.1 is a squared scale: the normals get
variance 0.1 and the uniform's range is sqrt(0.1) (variance 1/120). The
"sd" convention reads 0.1 literally as an sd / upper bound.

Anchor ground truths for the three study estimands (mean of y1, sd of y2,
covariance of y1 and y2) come from closed-form moment algebra and from a
Monte Carlo oracle; the two must agree within Monte Carlo error.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import StudyError
from .functionals import FeatureSpec, estimate_feature
from .pipeline import PipelineConfig, compute_weights
from .resampling import replicate_rng

STUDY_METHODS = ("naive", "anchor_only", "importance", "translate")


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one synthetic scenario.

    The named presets pin anchor prevalence 0.1 and outcome shift 0.5;
    these reproduce the reference pooled-analysis biases (0.45 for the
    anchor mean under an outcome-only shift, 1.35 when covariates shift
    too) and the anchor truths sd = sqrt(371/600), cov = 146/600.
    """

    n: int
    phi_x: float
    phi_y: float = 0.5
    pi0: float = 0.1
    sigma0: float = 0.5
    sigma1: float = 0.6
    x1_prob: float = 0.2
    x2_scale: float = 0.1
    normal_scale: float = 0.1
    variance_convention: str = "variance"
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError("pi0 must lie in (0, 1)")
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise ValueError("sigmas must be positive")
        if self.variance_convention not in ("variance", "sd"):
            raise ValueError("variance_convention must be 'variance' or 'sd'")

    @property
    def x2_high(self) -> float:
        if self.variance_convention == "variance":
            return float(np.sqrt(self.x2_scale))
        return float(self.x2_scale)

    @property
    def normal_var(self) -> float:
        if self.variance_convention == "variance":
            return float(self.normal_scale)
        return float(self.normal_scale**2)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "phi_x": self.phi_x,
            "phi_y": self.phi_y,
            "pi0": self.pi0,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "x1_prob": self.x1_prob,
            "x2_scale": self.x2_scale,
            "normal_scale": self.normal_scale,
            "variance_convention": self.variance_convention,
        }


def scenario(name: str, n: int, **overrides) -> ScenarioConfig:
    """Named presets: "dissimilar_y" (phi_x = 0) and "dissimilar_xy" (phi_x = 1)."""
    presets = {"dissimilar_y": 0.0, "dissimilar_xy": 1.0}
    if name not in presets:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(presets)}")
    return ScenarioConfig(n=n, phi_x=presets[name], name=name, **overrides)


def _draw(cfg: ScenarioConfig, rng: np.random.Generator):
    n = cfg.n
    s = (rng.random(n) >= cfg.pi0).astype(np.int64)  # anchor with probability pi0
    sd = float(np.sqrt(cfg.normal_var))
    x = np.empty((n, 4))
    x[:, 0] = rng.random(n) < cfg.x1_prob
    x[:, 1] = rng.uniform(0.0, cfg.x2_high, n)
    x[:, 2] = rng.normal(0.0, sd, n)
    x[:, 3] = rng.normal(cfg.phi_x * s, sd)
    mu = x.sum(axis=1) + cfg.phi_y * s
    sigma = np.where(s == 0, cfg.sigma0, cfg.sigma1)
    rho = np.where(s == 0, -0.5, 0.5)  # noise correlation flips sign off-anchor
    e1 = rng.normal(size=n)
    e2 = rng.normal(size=n)
    y = np.empty((n, 2))
    y[:, 0] = mu + sigma * e1
    y[:, 1] = mu + sigma * (rho * e1 + np.sqrt(1.0 - rho**2) * e2)
    return s, x, y


def generate_dataset(cfg: ScenarioConfig, seed: int) -> Dataset:
    """One synthetic multi-cohort sample; deterministic given the seed."""
    return _dataset_from_draw(cfg, replicate_rng(seed, 0))


def _dataset_from_draw(cfg: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    s, x, y = _draw(cfg, rng)
    return Dataset(
        labels=s,
        covariates=x,
        outcomes=y,
        covariate_names=("x1", "x2", "x3", "x4"),
        outcome_names=("y1", "y2"),
        label_values=(0, 1),
    )


@dataclass
class OracleTruths:
    """Anchor-cohort ground truths, closed form and Monte Carlo."""

    mean: float
    sd: float
    covariance: float
    mc_mean: float
    mc_sd: float
    mc_covariance: float
    mc_se_mean: float
    mc_se_sd: float
    mc_se_covariance: float
    mc_size: int
    agreement: dict[str, bool]

    def closed_form(self) -> dict[str, float]:
        return {"mean": self.mean, "sd": self.sd, "covariance": self.covariance}

    def to_dict(self) -> dict:
        return {
            "closed_form": self.closed_form(),
            "monte_carlo": {
                "mean": self.mc_mean,
                "sd": self.mc_sd,
                "covariance": self.mc_covariance,
                "se_mean": self.mc_se_mean,
                "se_sd": self.mc_se_sd,
                "se_covariance": self.mc_se_covariance,
                "draws": self.mc_size,
            },
            "agreement_within_5_se": self.agreement,
        }


def closed_form_truths(cfg: ScenarioConfig) -> dict[str, float]:
    """Anchor moments by direct algebra on the configured distributions."""
    mean = cfg.x1_prob + cfg.x2_high / 2.0
    var_sum_x = (
        cfg.x1_prob * (1.0 - cfg.x1_prob)
        + cfg.x2_high**2 / 12.0
        + 2.0 * cfg.normal_var
    )
    var_y = var_sum_x + cfg.sigma0**2
    covariance = var_sum_x - 0.5 * cfg.sigma0**2  # anchor noise correlation is -0.5
    return {"mean": mean, "sd": float(np.sqrt(var_y)), "covariance": covariance}


def _anchor_draws(cfg: ScenarioConfig, size: int, rng: np.random.Generator):
    """Outcome draws conditional on membership in the anchor cohort."""
    sd = float(np.sqrt(cfg.normal_var))
    x_sum = (
        (rng.random(size) < cfg.x1_prob).astype(np.float64)
        + rng.uniform(0.0, cfg.x2_high, size)
        + rng.normal(0.0, sd, size)
        + rng.normal(0.0, sd, size)  # x4 | s=0 is centered at zero
    )
    e1 = rng.normal(size=size)
    e2 = rng.normal(size=size)
    rho = -0.5
    y = np.empty((size, 2))
    y[:, 0] = x_sum + cfg.sigma0 * e1
    y[:, 1] = x_sum + cfg.sigma0 * (rho * e1 + np.sqrt(1.0 - rho**2) * e2)
    return y


def oracle_truths(
    cfg: ScenarioConfig, mc_size: int = 1_000_000, seed: int = 0, batches: int = 20
) -> OracleTruths:
    """Closed-form truths cross-checked against a Monte Carlo oracle.

    The Monte Carlo side draws anchor-conditional samples in `batches`
    independent batches; batch means give the Monte Carlo standard errors.
    Disagreement beyond 5 SEs flips the corresponding agreement flag.
    """
    closed = closed_form_truths(cfg)
    per_batch = max(mc_size // batches, 1)
    stats = np.empty((batches, 3))
    for b in range(batches):
        rng = replicate_rng(seed, b + 1)
        y = _anchor_draws(cfg, per_batch, rng)
        mean = y[:, 0].mean()
        sd = y[:, 1].std(ddof=0)
        cov = ((y[:, 0] - y[:, 0].mean()) * (y[:, 1] - y[:, 1].mean())).mean()
        stats[b] = (mean, sd, cov)
    mc = stats.mean(axis=0)
    se = stats.std(axis=0, ddof=1) / np.sqrt(batches)
    names = ("mean", "sd", "covariance")
    agreement = {
        name: bool(abs(closed[name] - mc[i]) <= 5.0 * se[i])
        for i, name in enumerate(names)
    }
    return OracleTruths(
        mean=closed["mean"],
        sd=closed["sd"],
        covariance=closed["covariance"],
        mc_mean=float(mc[0]),
        mc_sd=float(mc[1]),
        mc_covariance=float(mc[2]),
        mc_se_mean=float(se[0]),
        mc_se_sd=float(se[1]),
        mc_se_covariance=float(se[2]),
        mc_size=per_batch * batches,
        agreement=agreement,
    )


def study_features() -> list[FeatureSpec]:
    """The three study estimands: mean of y1, sd of y2, covariance(y1, y2)."""
    return [
        FeatureSpec("mean", "y1"),
        FeatureSpec("sd", "y2"),
        FeatureSpec("covariance", "y1", "y2"),
    ]


TRUTH_BY_FEATURE = {"mean[y1]": "mean", "sd[y2]": "sd", "covariance[y1,y2]": "covariance"}


@dataclass
class StudyResult:
    """Per-replicate estimates and ESS values for every scenario and method."""

    scenarios: list[str]
    methods: list[str]
    features: list[str]
    truths: dict[str, dict[str, float]]
    estimates: dict  # (scenario, method, feature) -> array of R values
    ess: dict  # (scenario, method) -> array of R empirical composite ESS
    ess_closed: dict  # (scenario, method) -> array of R closed-form ESS
    anchor_counts: dict = field(default_factory=dict)
    n_failures: dict = field(default_factory=dict)
    r_requested: int = 0
    seed: int = 0
    scenario_configs: dict = field(default_factory=dict)

    def cell(self, scenario_name: str, method: str, feature: str) -> dict:
        est = np.asarray(self.estimates[(scenario_name, method, feature)])
        truth = self.truths[scenario_name][feature]
        r = est.size
        errors = est - truth
        bias = abs(float(errors.mean()))
        rmse = float(np.sqrt((errors**2).mean()))
        se_bias = float(est.std(ddof=1) / np.sqrt(r)) if r > 1 else 0.0
        se_mse = float((errors**2).std(ddof=1) / np.sqrt(r)) if r > 1 else 0.0
        se_rmse = se_mse / (2.0 * rmse) if rmse > 0 else 0.0
        return {
            "scenario": scenario_name,
            "method": method,
            "feature": feature,
            "bias": bias,
            "rmse": rmse,
            "se_bias": se_bias,
            "se_rmse": se_rmse,
            "replicates": int(r),
        }

    def to_records(self) -> list[dict]:
        return [
            self.cell(sc, m, f)
            for sc in self.scenarios
            for m in self.methods
            for f in self.features
        ]

    def ess_summary(self) -> list[dict]:
        out = []
        for sc in self.scenarios:
            n_pi0 = (
                self.scenario_configs[sc]["n"] * self.scenario_configs[sc]["pi0"]
                if sc in self.scenario_configs
                else float("nan")
            )
            for m in self.methods:
                values = np.asarray(self.ess[(sc, m)])
                closed = np.asarray(self.ess_closed[(sc, m)])
                out.append(
                    {
                        "scenario": sc,
                        "method": m,
                        "ess_median": float(np.median(values)),
                        "ess_q25": float(np.quantile(values, 0.25)),
                        "ess_q75": float(np.quantile(values, 0.75)),
                        "ess_closed_median": float(np.median(closed)),
                        "frac_above_n_pi0": float((values > n_pi0).mean()),
                    }
                )
        return out

    def to_text(self, precision: int = 2) -> str:
        """Aligned table: scenario blocks x (bias, rmse) panels x method columns."""
        lines = []
        width = max(len(f) for f in self.features) + 2
        header = "feature".ljust(width) + "".join(
            m.rjust(13) for m in self.methods
        )
        for sc in self.scenarios:
            lines.append(f"== scenario: {sc} (R = {self.r_requested}, "
                         f"seed = {self.seed}) ==")
            for panel in ("bias", "rmse"):
                lines.append(f"-- absolute {panel} --" if panel == "bias"
                             else f"-- {panel} --")
                lines.append(header)
                for f in self.features:
                    row = f.ljust(width)
                    for m in self.methods:
                        cell = self.cell(sc, m, f)
                        se = cell["se_" + panel]
                        row += f"{cell[panel]:.{precision}f} ({se:.{precision}f})".rjust(13)
                    lines.append(row)
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "replicates": self.r_requested,
            "scenarios": self.scenario_configs,
            "truths": self.truths,
            "cells": self.to_records(),
            "ess": self.ess_summary(),
            "failures": {f"{sc}/{m}": v for (sc, m), v in self.n_failures.items()},
        }
        return json.dumps(payload, indent=2)


_STUDY_STATE: dict = {}


def _init_study_worker(cfgs, methods, features, pipeline_cfgs, seed):
    _STUDY_STATE["args"] = (cfgs, methods, features, pipeline_cfgs, seed)


def _run_study_replicate(task):
    scenario_idx, r = task
    cfgs, methods, features, pipeline_cfgs, seed = _STUDY_STATE["args"]
    cfg = cfgs[scenario_idx]
    rng = replicate_rng(seed, scenario_idx * 1_000_003 + r)
    try:
        ds = _dataset_from_draw(cfg, rng)
    except Exception as exc:  # e.g. a cohort came out empty at tiny N
        out = {m: ("failure", repr(exc)) for m in methods}
        return scenario_idx, r, 0, out
    out = {}
    for method in methods:
        try:
            stage1 = compute_weights(ds, pipeline_cfgs[method])
            values = {
                spec.name(): float(estimate_feature(spec, stage1.weights, ds).value)
                for spec in features
            }
            out[method] = (
                values,
                stage1.report.composite_ess_empirical,
                stage1.report.composite_ess_closed_form,
            )
        except Exception as exc:  # recorded and excluded; studies tolerate <= 5%
            out[method] = ("failure", repr(exc))
    return scenario_idx, r, int((ds.labels == 0).sum()), out


def run_study(
    cfgs: list[ScenarioConfig],
    r_reps: int,
    methods: tuple[str, ...] = STUDY_METHODS,
    seed: int = 0,
    model: str = "qda",
    threads: int = 1,
    features: list[FeatureSpec] | None = None,
    pipeline_overrides: dict | None = None,
) -> StudyResult:
    """Generate R datasets per scenario, run every method, aggregate bias/RMSE.

    Deterministic given the seed (replicates use per-(scenario, replicate)
    derived streams regardless of thread count). A replicate whose pipeline
    raises is excluded and counted; more than 5% failures for any
    (scenario, method) raises StudyError.
    """
    if r_reps < 2:
        raise ValueError("a study needs R >= 2 replicates")
    features = features if features is not None else study_features()
    overrides = pipeline_overrides or {}
    pipeline_cfgs = {
        m: PipelineConfig(method=m, model=model, **overrides) for m in methods
    }

    for cfg in cfgs:
        if not cfg.name:
            raise ValueError("every scenario needs a name")

    tasks = [(i, r) for i in range(len(cfgs)) for r in range(r_reps)]
    init_args = (list(cfgs), tuple(methods), features, pipeline_cfgs, seed)
    if threads > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_study_worker, initargs=init_args
        ) as pool:
            chunk = max(1, len(tasks) // (8 * threads))
            outputs = list(pool.map(_run_study_replicate, tasks, chunksize=chunk))
    else:
        _init_study_worker(*init_args)
        outputs = [_run_study_replicate(t) for t in tasks]
    outputs.sort(key=lambda item: (item[0], item[1]))

    feature_names = [spec.name() for spec in features]
    estimates = {}
    ess = {}
    ess_closed = {}
    anchor_counts = {}
    failures = {}
    for i, cfg in enumerate(cfgs):
        for m in methods:
            collected = [[] for _ in feature_names]
            ess_m, closed_m = [], []
            fail = 0
            for sc_idx, r, n0, out in outputs:
                if sc_idx != i:
                    continue
                payload = out[m]
                if payload[0] == "failure":
                    fail += 1
                    continue
                values, ess_value, closed_value = payload
                for j, fname in enumerate(feature_names):
                    collected[j].append(values[fname])
                ess_m.append(ess_value)
                closed_m.append(closed_value)
            if fail > 0.05 * r_reps:
                raise StudyError(
                    f"{fail}/{r_reps} replicates failed for method {m!r} in "
                    f"scenario {cfg.name!r}"
                )
            failures[(cfg.name, m)] = fail
            for j, fname in enumerate(feature_names):
                estimates[(cfg.name, m, fname)] = np.array(collected[j])
            ess[(cfg.name, m)] = np.array(ess_m)
            ess_closed[(cfg.name, m)] = np.array(closed_m)
        anchor_counts[cfg.name] = np.array(
            [n0 for sc_idx, _, n0, _ in outputs if sc_idx == i]
        )

    truths = {cfg.name: {} for cfg in cfgs}
    for cfg in cfgs:
        closed = closed_form_truths(cfg)
        for fname in feature_names:
            key = TRUTH_BY_FEATURE.get(fname)
            if key is None:
                raise StudyError(
                    f"no ground truth recorded for feature {fname!r}; studies "
                    "support the three standard estimands"
                )
            truths[cfg.name][fname] = closed[key]

    return StudyResult(
        scenarios=[cfg.name for cfg in cfgs],
        methods=list(methods),
        features=feature_names,
        truths=truths,
        estimates=estimates,
        ess=ess,
        ess_closed=ess_closed,
        anchor_counts=anchor_counts,
        n_failures=failures,
        r_requested=r_reps,
        seed=seed,
        scenario_configs={cfg.name: cfg.to_dict() for cfg in cfgs},
    )
