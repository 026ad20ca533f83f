import json
import os

import numpy as np
import pytest

from cohortalign.cli import main

from conftest import make_blob_dataset


def _write_csv(ds, path):
    ds.to_csv(path)
    return path


@pytest.fixture
def blob_csv(tmp_path, rng):
    ds = make_blob_dataset(rng, counts=(80, 170), shift=0.4)
    return _write_csv(ds, str(tmp_path / "blob.csv"))


BLOB_FLAGS = [
    "--label-col", "label",
    "--anchor", "0",
    "--covariates", "x0,x1",
    "--outcomes", "y0,y1",
]


def test_weights_command_writes_weight_file_and_report(tmp_path, blob_csv, capsys):
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", blob_csv, *BLOB_FLAGS,
         "--method", "translate", "--model", "qda", "--seed", "7", "--out", out]
    )
    assert rc == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0].startswith("# cohortalign weights config_sha256=")
    assert lines[1] == "index,label,weight"
    assert len(lines) == 2 + 250
    first = lines[2].split(",")
    assert first[0] == "0" and first[1] in {"0", "1"}
    weights = np.array([float(l.split(",")[2]) for l in lines[2:]])
    assert abs(weights.sum() - 250) < 1e-8 * 250  # full precision in the file

    report = json.load(open(str(tmp_path / "w_ess.json")))
    assert report["dataset"]["n"] == 250
    assert {c["label"] for c in report["ess"]["cohorts"]} == {"0", "1"} or {
        c["label"] for c in report["ess"]["cohorts"]
    } == {0, 1}
    assert report["ess"]["composite_ess_empirical"] > 0
    assert "seed" in report["config"]
    shown = capsys.readouterr().out
    assert "composite_ess_empirical" in shown


def test_weights_identical_cohorts_all_near_one(tmp_path, rng):
    ds = make_blob_dataset(rng, counts=(900, 2100), shift=0.0)
    path = _write_csv(ds, str(tmp_path / "same.csv"))
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", path, *BLOB_FLAGS,
         "--method", "translate", "--model", "qda", "--out", out]
    )
    assert rc == 0
    weights = np.loadtxt(out, delimiter=",", skiprows=2, usecols=2)
    assert np.abs(weights - 1.0).mean() < 0.1
    report = json.load(open(str(tmp_path / "w_ess.json")))
    assert report["ess"]["composite_ess_empirical"] > 0.9 * 3000


def test_weights_missing_label_column_fails(tmp_path, blob_csv, capsys):
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", blob_csv, "--label-col", "region",
         "--covariates", "x0,x1", "--outcomes", "y0,y1", "--out", out]
    )
    assert rc != 0
    assert "region" in capsys.readouterr().err
    assert not os.path.exists(out)  # partial outputs removed


def test_estimate_command_three_rows_per_method(tmp_path, rng, capsys):
    # overall mean plus the two subgroup means: the per-outcome block shape
    ds = make_blob_dataset(rng, counts=(120, 240), shift=0.3)
    flag = (ds.covariates[:, 0] > 0).astype(float)
    from cohortalign import Dataset

    ds = Dataset(
        labels=ds.labels,
        covariates=np.column_stack([ds.covariates, flag]),
        outcomes=ds.outcomes,
        covariate_names=("x0", "x1", "sex"),
        outcome_names=("y0", "y1"),
        label_values=(0, 1),
    )
    path = _write_csv(ds, str(tmp_path / "est.csv"))
    out = str(tmp_path / "est.json")
    rc = main(
        ["estimate", "--input", path,
         "--label-col", "label", "--anchor", "0",
         "--covariates", "x0,x1,sex", "--outcomes", "y0,y1",
         "--method", "translate,naive", "--model", "qda",
         "--features", "mean:y0", "subgroup_mean:y0@sex=1.0",
         "subgroup_mean:y0@sex=0.0", "subgroup_diff:y0@sex=1.0,0.0",
         "--bootstrap", "12", "--seed", "3", "--threads", "1", "--out", out]
    )
    assert rc == 0
    payload = json.load(open(out))
    rows = payload["rows"]
    by_method = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    assert set(by_method) == {"translate", "naive"}
    for method_rows in by_method.values():
        quantities = {r["quantity"] for r in method_rows}
        assert "mean[y0]" in quantities and "ess" in quantities
        assert any(q.startswith("diff[") for q in quantities)
        for row in method_rows:
            assert np.isfinite(row["se"]) and row["ci_low"] <= row["ci_high"]
    diff_rows = [r for r in rows if r["quantity"].startswith("diff[")]
    assert all("significant" in r for r in diff_rows)
    table = capsys.readouterr().out
    assert "quantity" in table and "estimate" in table


def test_estimate_b2_smoke(tmp_path, blob_csv):
    out = str(tmp_path / "b2.json")
    rc = main(
        ["estimate", "--input", blob_csv, *BLOB_FLAGS,
         "--method", "naive", "--features", "mean:y0",
         "--bootstrap", "2", "--out", out]
    )
    assert rc == 0
    rows = json.load(open(out))["rows"]
    assert all(np.isfinite(r["se"]) for r in rows)


def test_estimate_pairwise_correlations_by_sex(tmp_path, rng):
    # 4 outcomes -> 6 pairs x 2 sexes, mirroring the application's panel
    ds = make_blob_dataset(rng, counts=(150, 300), n_outcomes=4, shift=0.3)
    flag = (ds.covariates[:, 1] > 0).astype(float)
    from cohortalign import Dataset

    ds = Dataset(
        labels=ds.labels,
        covariates=np.column_stack([ds.covariates[:, :1], flag]),
        outcomes=ds.outcomes,
        covariate_names=("x0", "sex"),
        outcome_names=("y0", "y1", "y2", "y3"),
        label_values=(0, 1),
    )
    path = _write_csv(ds, str(tmp_path / "corr.csv"))
    out = str(tmp_path / "corr.json")
    pairs = [
        f"correlation:y{i},y{j}" for i in range(4) for j in range(i + 1, 4)
    ]
    rc = main(
        ["estimate", "--input", path,
         "--label-col", "label", "--anchor", "0",
         "--covariates", "x0,sex", "--outcomes", "y0,y1,y2,y3",
         "--method", "naive", "--features", *pairs,
         "--bootstrap", "4", "--out", out]
    )
    assert rc == 0
    rows = json.load(open(out))["rows"]
    corr_rows = [r for r in rows if r["quantity"].startswith("correlation")]
    assert len(corr_rows) == 6
    assert all(-1.0 <= r["estimate"] <= 1.0 for r in corr_rows)


def test_simulate_smoke_and_determinism(tmp_path):
    out1 = str(tmp_path / "run1")
    args = ["simulate", "--scenario", "both", "--replicates", "4",
            "--n", "400", "--seed", "9", "--mc-size", "20000",
            "--methods", "naive,translate", "--threads", "1",
            "--out", out1]
    names = ("study_table.txt", "study.json", "oracle_truths.json")
    assert main(args) == 0
    first = {name: open(os.path.join(out1, name)).read() for name in names}
    assert main(args) == 0  # same config rerun overwrites in place
    for name in names:
        assert open(os.path.join(out1, name)).read() == first[name]
    study = json.load(open(os.path.join(out1, "study.json")))
    assert study["replicates"] == 4 and study["seed"] == 9
    assert study["config"]["n"] == 400  # resolved config embedded
    assert all(np.isfinite(c["bias"]) for c in study["cells"])
    truths = json.load(open(os.path.join(out1, "oracle_truths.json")))
    assert truths["truths"]["dissimilar_y"]["closed_form"]["sd"] == pytest.approx(
        np.sqrt(371 / 600)
    )


def test_config_file_merging(tmp_path, blob_csv):
    cfg_path = str(tmp_path / "cfg.json")
    json.dump({"method": "naive", "seed": 17}, open(cfg_path, "w"))
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", blob_csv, *BLOB_FLAGS,
         "--config", cfg_path, "--out", out]
    )
    assert rc == 0
    header = open(out).readline()
    assert '"method": "naive"' in header and '"seed": 17' in header


def test_flags_win_over_config_file(tmp_path, blob_csv):
    cfg_path = str(tmp_path / "cfg.json")
    json.dump({"method": "naive"}, open(cfg_path, "w"))
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", blob_csv, *BLOB_FLAGS,
         "--config", cfg_path, "--method", "anchor_only", "--out", out]
    )
    assert rc == 0
    assert '"method": "anchor_only"' in open(out).readline()


def test_wide_four_cohort_cli_run(tmp_path):
    # synthetic data at full clinical-registry width:
    # N = 6,966, 4 region cohorts, 46 covariates, 4 outcomes
    rng = np.random.default_rng(12)
    counts = (408, 3312, 1551, 1695)
    regions = np.repeat(["NE", "MW", "S", "W"], counts)
    rng.shuffle(regions)
    shift = {"NE": 0.0, "MW": 0.2, "S": 0.4, "W": 0.3}
    offsets = np.array([shift[r] for r in regions])[:, None]
    cov = rng.normal(size=(6966, 46)) + offsets
    sex = (rng.random(6966) < 0.55).astype(float)
    cov[:, 0] = sex
    out_block = rng.normal(size=(6966, 4)) + offsets
    header = ["region"] + [f"c{i}" for i in range(46)] + [f"o{i}" for i in range(4)]
    path = str(tmp_path / "regions.csv")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(6966):
            row = [regions[i]] + [f"{v:.4f}" for v in cov[i]] + [
                f"{v:.4f}" for v in out_block[i]
            ]
            fh.write(",".join(row) + "\n")

    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", path,
         "--label-col", "region", "--anchor", "NE",
         "--covariates", ",".join(f"c{i}" for i in range(46)),
         "--outcomes", "o0,o1,o2,o3",
         "--method", "translate", "--model", "logistic", "--out", out]
    )
    assert rc == 0
    report = json.load(open(str(tmp_path / "w_ess.json")))
    assert report["dataset"]["n"] == 6966
    assert report["dataset"]["n_cohorts"] == 4
    assert report["dataset"]["p"] == 46
    assert report["dataset"]["n_outcomes"] == 4
    assert report["dataset"]["anchor"] == "NE"
    prevs = [c["prevalence"] for c in report["dataset"]["cohorts"]]
    assert round(prevs[0], 2) == 0.06

    est_out = str(tmp_path / "est.json")
    rc = main(
        ["estimate", "--input", path,
         "--label-col", "region", "--anchor", "NE",
         "--covariates", ",".join(f"c{i}" for i in range(46)),
         "--outcomes", "o0,o1,o2,o3",
         "--method", "translate", "--model", "logistic",
         "--features", "mean:o0", "subgroup_mean:o0@c0=1.0",
         "subgroup_mean:o0@c0=0.0",
         "--bootstrap", "2", "--seed", "1", "--out", est_out]
    )
    assert rc == 0
    rows = json.load(open(est_out))["rows"]
    assert len([r for r in rows if r["quantity"] != "ess"]) == 3


def test_estimate_unknown_feature_outcome_fails_cleanly(tmp_path, blob_csv, capsys):
    out = str(tmp_path / "bad.json")
    rc = main(
        ["estimate", "--input", blob_csv, *BLOB_FLAGS,
         "--method", "naive", "--features", "mean:nosuch",
         "--bootstrap", "2", "--out", out]
    )
    assert rc != 0
    assert "nosuch" in capsys.readouterr().err
    assert not os.path.exists(out)


def test_weights_on_generated_scenario_file(tmp_path):
    from cohortalign import generate_dataset, scenario

    ds = generate_dataset(scenario("dissimilar_y", 3000), seed=8)
    path = str(tmp_path / "scen.csv")
    ds.to_csv(path)
    out = str(tmp_path / "w.csv")
    rc = main(
        ["weights", "--input", path,
         "--label-col", "label", "--anchor", "0",
         "--covariates", "x1,x2,x3,x4", "--outcomes", "y1,y2",
         "--method", "translate", "--model", "qda", "--out", out]
    )
    assert rc == 0
    report = json.load(open(str(tmp_path / "w_ess.json")))
    n0 = report["dataset"]["cohorts"][0]["count"]
    assert report["ess"]["composite_ess_empirical"] > n0
    gammas = [c["gamma"] for c in report["ess"]["cohorts"]]
    assert abs(sum(gammas) - 1.0) < 1e-12
