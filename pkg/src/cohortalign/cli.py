"""Command-line front end: ingest -> fit -> weight -> estimate -> report.

Three subcommands share the ingestion and stage-1 flags:

  weights    write per-subject weights and an ESS report for one method
  estimate   weighted feature estimates with bootstrap SE / percentile CI
  simulate   run the synthetic two-cohort study and write its tables

Every output embeds the fully resolved configuration (seed included) so any
artifact can be reproduced from its own header; outputs are written via
temporary files and moved into place only when the whole command succeeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from .dataset import ColumnSchema, load_dataset
from .errors import CohortAlignError
from .functionals import parse_feature
from .pipeline import METHODS, MODELS, PipelineConfig, compute_weights
from .resampling import bootstrap_pipeline
from .simulation import oracle_truths, run_study, scenario

DEFAULT_PRECISION = 4


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()[:12]


class _OutputSink:
    """Collects pending writes; commits atomically, discards on failure."""

    def __init__(self):
        self.pending: list[tuple[str, str]] = []

    def write(self, path: str, text: str) -> None:
        tmp = path + ".tmp"
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(tmp, "w") as handle:
            handle.write(text)
        self.pending.append((tmp, path))

    def commit(self) -> None:
        for tmp, path in self.pending:
            os.replace(tmp, path)
        self.pending.clear()

    def discard(self) -> None:
        for tmp, _ in self.pending:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self.pending.clear()


def _add_schema_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="delimited input file")
    parser.add_argument("--label-col", help="cohort label column")
    parser.add_argument("--anchor", default="0", help="anchor label value")
    parser.add_argument("--covariates", help="comma-separated covariate columns")
    parser.add_argument("--outcomes", help="comma-separated outcome columns")
    parser.add_argument(
        "--missing", choices=("drop", "fail"), default="drop",
        help="row policy for missing cells",
    )


def _add_pipeline_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", default="translate",
                        help=f"one of {', '.join(METHODS)}, or a comma list")
    parser.add_argument("--model", choices=MODELS, default="logistic")
    parser.add_argument("--ridge", type=float, default=1e-4)
    parser.add_argument("--reg", type=float, default=0.0)
    parser.add_argument("--feature-map", choices=("identity", "quadratic"),
                        default="identity")
    parser.add_argument("--cap-quantile", type=float, default=None)
    parser.add_argument("--gamma", default=None,
                        help="prespecified alignment shares, comma separated")


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output path")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--precision", type=int, default=DEFAULT_PRECISION)
    parser.add_argument("--config", help="JSON config file; flags win on conflict")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="cohortalign",
        description="Anchor-aligned cohort weighting and weighted estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_weights = sub.add_parser("weights", help="per-subject weights + ESS report")
    _add_schema_args(p_weights)
    _add_pipeline_args(p_weights)
    _add_common_args(p_weights)

    p_est = sub.add_parser("estimate", help="weighted features with bootstrap CIs")
    _add_schema_args(p_est)
    _add_pipeline_args(p_est)
    _add_common_args(p_est)
    p_est.add_argument("--features", nargs="+", required=True,
                       help='e.g. "mean:y1" "subgroup_mean:y1@sex=male"')
    p_est.add_argument("--bootstrap", type=int, default=200, metavar="B")
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.add_argument("--no-refit", action="store_true",
                       help="freeze the membership model across replicates")

    p_sim = sub.add_parser("simulate", help="synthetic two-cohort study")
    p_sim.add_argument("--scenario", default="both",
                       choices=("both", "dissimilar_y", "dissimilar_xy"))
    p_sim.add_argument("--replicates", type=int, default=100, metavar="R")
    p_sim.add_argument("--n", type=int, default=5000)
    p_sim.add_argument("--methods", default="naive,importance,translate")
    p_sim.add_argument("--model", choices=MODELS, default="qda")
    p_sim.add_argument("--mc-size", type=int, default=1_000_000)
    _add_common_args(p_sim)
    subparsers = {"weights": p_weights, "estimate": p_est, "simulate": p_sim}
    return parser, subparsers


def _merge_config_file(args: argparse.Namespace, subparser: argparse.ArgumentParser):
    """File values fill in flags the user left at their defaults; flags win."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as handle:
        overrides = json.load(handle)
    defaults = {a.dest: a.default for a in subparser._actions}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise CohortAlignError(f"unknown config key {key!r}")
        if getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, value)
    return args


def _schema_from_args(args) -> ColumnSchema:
    missing = [
        name
        for name, value in (
            ("--label-col", args.label_col),
            ("--covariates", args.covariates),
            ("--outcomes", args.outcomes),
        )
        if not value
    ]
    if missing:
        raise CohortAlignError(f"missing required flag(s): {', '.join(missing)}")
    split = lambda text: tuple(t.strip() for t in str(text).split(",") if t.strip())
    return ColumnSchema(
        label_col=args.label_col,
        covariate_cols=split(args.covariates),
        outcome_cols=split(args.outcomes),
        anchor_label=str(args.anchor),
        missing=args.missing,
    )


def _pipeline_config(args, method: str) -> PipelineConfig:
    gamma = None
    if getattr(args, "gamma", None):
        gamma = tuple(float(g) for g in str(args.gamma).split(","))
    return PipelineConfig(
        method=method,
        model=args.model,
        ridge=args.ridge,
        reg=args.reg,
        feature_map=args.feature_map,
        cap_quantile=args.cap_quantile,
        gamma=gamma,
    )


def _resolved_config(args, extra: dict | None = None) -> dict:
    skip = {"command", "config"}
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in skip
    }
    if extra:
        config.update(extra)
    return config


def _methods_list(args) -> list[str]:
    methods = [m.strip() for m in str(args.method).split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise CohortAlignError(
                f"unknown method {m!r}; choose from {', '.join(METHODS)}"
            )
    return methods


def cmd_weights(args, sink: _OutputSink) -> None:
    schema = _schema_from_args(args)
    ds = load_dataset(args.input, schema)
    methods = _methods_list(args)
    if len(methods) != 1:
        raise CohortAlignError("the weights command takes exactly one --method")
    stage1 = compute_weights(ds, _pipeline_config(args, methods[0]))

    config = _resolved_config(args)
    digest = _config_hash(config)
    header = f"# cohortalign weights config_sha256={digest} config={json.dumps(config, sort_keys=True)}"
    lines = [header, "index,label,weight"]
    for i in range(ds.n):
        label = ds.label_values[ds.labels[i]]
        lines.append(f"{i},{label},{float(stage1.weights.weights[i])!r}")
    sink.write(args.out, "\n".join(lines) + "\n")

    report = {
        "config": config,
        "config_sha256": digest,
        "dataset": ds.summary(),
        "ess": stage1.report.to_dict(),
    }
    sink.write(_sibling(args.out, "_ess.json"), json.dumps(report, indent=2, default=str) + "\n")
    print(json.dumps(stage1.report.to_dict(), indent=2, default=str))


def _sibling(path: str, suffix: str) -> str:
    root, _ = os.path.splitext(path)
    return root + suffix


def cmd_estimate(args, sink: _OutputSink) -> None:
    schema = _schema_from_args(args)
    ds = load_dataset(args.input, schema)
    methods = _methods_list(args)
    specs = [parse_feature(text) for text in args.features]

    rows = []
    for method in methods:
        cfg = _pipeline_config(args, method)
        run = bootstrap_pipeline(
            ds,
            cfg,
            specs,
            b=args.bootstrap,
            seed=args.seed,
            alpha=args.alpha,
            threads=args.threads,
            refit=not args.no_refit,
        )
        for row in run.to_rows():
            row["method"] = method
            if row["quantity"].startswith("diff["):
                result = run[row["quantity"]]
                low, high = result.ci
                row["significant"] = bool(low > 0.0 or high < 0.0)
            rows.append(row)
        for warning in run.warnings:
            print(f"warning: {warning}", file=sys.stderr)

    config = _resolved_config(args)
    payload = {
        "config": config,
        "config_sha256": _config_hash(config),
        "dataset": ds.summary(),
        "rows": rows,
    }
    sink.write(args.out, json.dumps(payload, indent=2, default=str) + "\n")
    print(_format_rows(rows, args.precision))


def _format_rows(rows: list[dict], precision: int) -> str:
    headers = ["quantity", "method", "estimate", "se", "ci_low", "ci_high", "sig"]
    table = [headers]
    for row in rows:
        table.append(
            [
                row["quantity"],
                row["method"],
                f"{row['estimate']:.{precision}g}",
                f"{row['se']:.{precision}g}",
                f"{row['ci_low']:.{precision}g}",
                f"{row['ci_high']:.{precision}g}",
                {True: "yes", False: "no"}.get(row.get("significant"), ""),
            ]
        )
    widths = [max(len(r[c]) for r in table) for c in range(len(headers))]
    lines = [
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        for row in table
    ]
    return "\n".join(lines)


def cmd_simulate(args, sink: _OutputSink) -> None:
    names = (
        ["dissimilar_y", "dissimilar_xy"]
        if args.scenario == "both"
        else [args.scenario]
    )
    cfgs = [scenario(name, n=args.n) for name in names]
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    result = run_study(
        cfgs,
        r_reps=args.replicates,
        methods=methods,
        seed=args.seed,
        model=args.model,
        threads=args.threads,
    )
    truths = {cfg.name: oracle_truths(cfg, mc_size=args.mc_size, seed=args.seed).to_dict()
              for cfg in cfgs}

    config = _resolved_config(args)
    digest = _config_hash(config)
    out_dir = args.out
    table_header = (
        f"# cohortalign simulate config_sha256={digest} "
        f"config={json.dumps(config, sort_keys=True)}\n"
    )
    sink.write(
        os.path.join(out_dir, "study_table.txt"),
        table_header + result.to_text() + "\n",
    )
    study_payload = json.loads(result.to_json())
    study_payload["config"] = config
    study_payload["config_sha256"] = digest
    sink.write(
        os.path.join(out_dir, "study.json"),
        json.dumps(study_payload, indent=2) + "\n",
    )
    sink.write(
        os.path.join(out_dir, "oracle_truths.json"),
        json.dumps(
            {"config": config, "config_sha256": digest, "truths": truths},
            indent=2,
        )
        + "\n",
    )
    print(f"seed={args.seed} replicates={args.replicates}")
    print(result.to_text())


def main(argv: list[str] | None = None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config_file(args, subparsers[args.command])
    except (OSError, json.JSONDecodeError, CohortAlignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    sink = _OutputSink()
    handlers = {"weights": cmd_weights, "estimate": cmd_estimate,
                "simulate": cmd_simulate}
    try:
        handlers[args.command](args, sink)
        sink.commit()
        return 0
    except (CohortAlignError, OSError, ValueError) as exc:
        sink.discard()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
