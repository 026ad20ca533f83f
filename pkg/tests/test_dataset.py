import io

import numpy as np
import pytest

from cohortalign import ColumnSchema, Dataset, cohort_prevalences, load_dataset
from cohortalign.errors import ParseError, SchemaError, SupportError

SIX_ROWS = """label,a,b,y1,y2
0,1.0,2.0,0.1,0.2
0,1.5,2.5,0.3,0.4
1,2.0,3.0,0.5,0.6
1,2.5,3.5,0.7,0.8
1,3.0,4.0,0.9,1.0
1,3.5,4.5,1.1,1.2
"""

SCHEMA = ColumnSchema(
    label_col="label",
    covariate_cols=("a", "b"),
    outcome_cols=("y1", "y2"),
    anchor_label="0",
)


def test_six_row_file_dimensions():
    ds = load_dataset(io.StringIO(SIX_ROWS), SCHEMA)
    assert (ds.n, ds.n_external, ds.p, ds.n_outcomes) == (6, 1, 2, 2)
    assert ds.cohort_counts().tolist() == [2, 4]
    assert ds.label_values == (0, 1)


def test_tab_delimited_input():
    ds = load_dataset(io.StringIO(SIX_ROWS.replace(",", "\t")), SCHEMA)
    assert ds.n == 6 and ds.p == 2


def test_anchor_cohort_empty_is_support_error():
    text = SIX_ROWS.replace("\n0,", "\n1,")
    with pytest.raises(SupportError, match="anchor"):
        load_dataset(io.StringIO(text), SCHEMA)


def test_missing_required_column_is_schema_error():
    schema = ColumnSchema("region", ("a", "b"), ("y1", "y2"))
    with pytest.raises(SchemaError, match="region"):
        load_dataset(io.StringIO(SIX_ROWS), schema)


def test_non_numeric_outcome_cell_reports_row():
    text = SIX_ROWS.replace("0.5,0.6", "oops,0.6")
    with pytest.raises(ParseError, match="row 2"):
        load_dataset(io.StringIO(text), SCHEMA)


def test_mixed_numeric_covariate_cell_reports_row():
    text = SIX_ROWS.replace("2.5,3.5", "bad,3.5")
    with pytest.raises(ParseError, match="'a'"):
        load_dataset(io.StringIO(text), SCHEMA)


def test_missing_cells_dropped_and_counted():
    text = SIX_ROWS.replace("1,2.0,3.0,0.5,0.6", "1,,3.0,0.5,0.6")
    ds = load_dataset(io.StringIO(text), SCHEMA)
    assert ds.n == 5
    assert ds.n_dropped == 1


def test_missing_cells_fail_policy():
    text = SIX_ROWS.replace("1,2.0,3.0,0.5,0.6", "1,,3.0,0.5,0.6")
    schema = ColumnSchema("label", ("a", "b"), ("y1", "y2"), missing="fail")
    with pytest.raises(ParseError, match="missing"):
        load_dataset(io.StringIO(text), schema)


def test_wide_four_cohort_file():
    # wide clinical shape: 6,966 rows, 4 region cohorts, 46 covariates,
    # 4 outcomes
    rng = np.random.default_rng(7)
    counts = (408, 3312, 1551, 1695)
    labels = np.repeat(["NE", "MW", "S", "W"], counts)
    rng.shuffle(labels)
    cov_names = [f"c{i}" for i in range(46)]
    out_names = [f"o{i}" for i in range(4)]
    header = ",".join(["region", *cov_names, *out_names])
    block = rng.normal(size=(6966, 50))
    rows = [header]
    for i in range(6966):
        rows.append(labels[i] + "," + ",".join(f"{v:.3f}" for v in block[i]))
    schema = ColumnSchema("region", tuple(cov_names), tuple(out_names), "NE")
    ds = load_dataset(io.StringIO("\n".join(rows)), schema)
    assert (ds.n, ds.n_external, ds.p, ds.n_outcomes) == (6966, 3, 46, 4)
    assert ds.anchor_label == "NE"
    prev = cohort_prevalences(ds)
    assert prev.pi_hat.round(2).tolist() == [0.06, 0.48, 0.22, 0.24]


@pytest.mark.parametrize(
    "counts,expected",
    [((5, 5), [0.5, 0.5]), ((1, 9), [0.1, 0.9])],
)
def test_prevalences_direct_division(counts, expected):
    labels = np.repeat(np.arange(len(counts)), counts)
    ds = Dataset(
        labels=labels,
        covariates=np.ones((labels.size, 1)),
        outcomes=np.ones((labels.size, 1)),
        covariate_names=("x",),
        outcome_names=("y",),
        label_values=tuple(range(len(counts))),
    )
    prev = cohort_prevalences(ds)
    assert prev.pi_hat.tolist() == expected
    # integer recovery: pi_hat * N gives the counts back exactly
    assert np.array_equal(prev.pi_hat * ds.n, np.asarray(counts, dtype=float))
    assert prev.pi_hat.sum() == pytest.approx(1.0, abs=1e-15)


def test_round_trip_load_serialize_load():
    ds = load_dataset(io.StringIO(SIX_ROWS), SCHEMA)
    buffer = io.StringIO()
    ds.to_csv(buffer)
    again = load_dataset(io.StringIO(buffer.getvalue()), ds.schema())
    assert ds.equals(again)


def test_label_remap_keeps_original_values():
    text = SIX_ROWS.replace("label", "region").replace("\n0,", "\nNE,").replace(
        "\n1,", "\nMW,"
    )
    schema = ColumnSchema("region", ("a", "b"), ("y1", "y2"), anchor_label="MW")
    ds = load_dataset(io.StringIO(text), schema)
    assert ds.label_values == ("MW", "NE")  # anchor forced to index 0
    assert ds.cohort_counts().tolist() == [4, 2]


def test_one_hot_expansion_and_subgroup_indicator():
    text = """label,sex,age,y1
0,male,50,1.0
0,female,60,2.0
1,female,55,3.0
1,other,65,4.0
1,male,45,5.0
"""
    schema = ColumnSchema("label", ("sex", "age"), ("y1",))
    ds = load_dataset(io.StringIO(text), schema)
    assert ds.categories == {"sex": ["female", "male", "other"]}
    assert "sex=male" in ds.covariate_names and "sex=other" in ds.covariate_names
    assert "sex=female" not in ds.covariate_names  # baseline carries no column
    male = ds.subgroup_indicator("sex", "male")
    female = ds.subgroup_indicator("sex", "female")
    other = ds.subgroup_indicator("sex", "other")
    assert male.tolist() == [1, 0, 0, 0, 1]
    assert female.tolist() == [0, 1, 1, 0, 0]
    assert np.array_equal(male + female + other, np.ones(5))
    numeric = ds.subgroup_indicator("age", 55)
    assert numeric.tolist() == [0, 0, 1, 0, 0]
    with pytest.raises(SchemaError):
        ds.subgroup_indicator("sex", "unknown")


def test_take_preserves_cohort_structure():
    ds = load_dataset(io.StringIO(SIX_ROWS), SCHEMA)
    sub = ds.take([0, 1, 2, 2])
    assert sub.n == 4 and sub.label_values == ds.label_values
    with pytest.raises(SupportError):
        ds.take([2, 3, 4])  # anchor rows all gone


def test_dataset_is_immutable():
    ds = load_dataset(io.StringIO(SIX_ROWS), SCHEMA)
    with pytest.raises(ValueError):
        ds.labels[0] = 1
    with pytest.raises(ValueError):
        ds.covariates[0, 0] = 9.0


def test_empty_cohort_in_arrays_rejected():
    with pytest.raises(SupportError):
        Dataset(
            labels=np.zeros(3, dtype=int),
            covariates=np.ones((3, 1)),
            outcomes=np.ones((3, 1)),
            covariate_names=("x",),
            outcome_names=("y",),
            label_values=(0, 1),  # cohort 1 has no subjects
        )
