"""Multi-cohort tabular data: ingestion, validation, prevalences.

A Dataset holds N subjects with an integer cohort label in {0..J} (0 is
always the anchor cohort), a numeric covariate matrix and a numeric
outcome matrix. Labels found in the input file are remapped to contiguous
internal ids with the anchor forced to 0; the original values are kept
for reporting. Categorical covariate columns are one-hot expanded at
ingestion (first category is the baseline and gets no column), and the
expansion map is recorded so subgroup features can reference the original
categories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ParseError, SchemaError, SupportError

MISSING_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for delimited-text ingestion.

    missing is the row policy for missing cells: "drop" (default) removes
    the row and counts it, "fail" raises. Cells are never imputed.
    """

    label_col: str
    covariate_cols: tuple[str, ...]
    outcome_cols: tuple[str, ...]
    anchor_label: str = "0"
    missing: str = "drop"

    def __post_init__(self):
        object.__setattr__(self, "covariate_cols", tuple(self.covariate_cols))
        object.__setattr__(self, "outcome_cols", tuple(self.outcome_cols))
        if not self.covariate_cols:
            raise SchemaError("schema needs at least one covariate column")
        if not self.outcome_cols:
            raise SchemaError("schema needs at least one outcome column")
        if self.missing not in ("drop", "fail"):
            raise SchemaError(f"unknown missing-data policy {self.missing!r}")


@dataclass(frozen=True)
class Dataset:
    """Validated multi-cohort sample, immutable after construction."""

    labels: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray
    covariate_names: tuple[str, ...]
    outcome_names: tuple[str, ...]
    label_values: tuple
    label_name: str = "label"
    categories: dict = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        covariates = np.ascontiguousarray(np.asarray(self.covariates, dtype=np.float64))
        outcomes = np.ascontiguousarray(np.asarray(self.outcomes, dtype=np.float64))
        if labels.ndim != 1 or covariates.ndim != 2 or outcomes.ndim != 2:
            raise SchemaError("labels must be a vector; covariates/outcomes matrices")
        n = labels.shape[0]
        if n < 1:
            raise SupportError("dataset is empty")
        if covariates.shape[0] != n or outcomes.shape[0] != n:
            raise SchemaError("labels, covariates and outcomes disagree on N")
        if covariates.shape[1] != len(self.covariate_names):
            raise SchemaError("covariate_names does not match covariate matrix width")
        if outcomes.shape[1] != len(self.outcome_names):
            raise SchemaError("outcome_names does not match outcome matrix width")
        if not (np.isfinite(covariates).all() and np.isfinite(outcomes).all()):
            raise ParseError("covariates/outcomes contain missing or non-finite values")
        k = len(self.label_values)
        counts = np.bincount(labels, minlength=k) if labels.size else np.zeros(k, int)
        if labels.min() < 0 or labels.max() >= k:
            raise SchemaError("labels out of range for label_values")
        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            missing = ", ".join(str(self.label_values[i]) for i in empty)
            raise SupportError(f"cohort(s) with no subjects: {missing}")
        for arr in (labels, covariates, outcomes):
            arr.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "outcome_names", tuple(self.outcome_names))
        object.__setattr__(self, "label_values", tuple(self.label_values))

    # -- basic shape accessors -------------------------------------------------

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_cohorts(self) -> int:
        return len(self.label_values)

    @property
    def n_external(self) -> int:
        return self.n_cohorts - 1

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.shape[1]

    @property
    def anchor_label(self):
        return self.label_values[0]

    def cohort_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_cohorts)

    def z(self) -> np.ndarray:
        """Joint covariate-outcome matrix, one row per subject."""
        return np.hstack([self.covariates, self.outcomes])

    # -- derived views ---------------------------------------------------------

    def take(self, index) -> "Dataset":
        """Row subset/resample preserving the cohort structure.

        Raises SupportError if any cohort disappears from the selection.
        """
        index = np.asarray(index)
        return Dataset(
            labels=self.labels[index],
            covariates=self.covariates[index],
            outcomes=self.outcomes[index],
            covariate_names=self.covariate_names,
            outcome_names=self.outcome_names,
            label_values=self.label_values,
            label_name=self.label_name,
            categories=self.categories,
        )

    def subgroup_indicator(self, name: str, value) -> np.ndarray:
        """0/1 vector for covariate `name` equal to `value`.

        Works both for one-hot expanded categoricals (via the recorded
        category map, including the baseline category) and for numeric
        covariates compared by value.
        """
        if name in self.categories:
            cats = self.categories[name]
            if str(value) not in [str(c) for c in cats]:
                raise SchemaError(f"unknown category {value!r} for covariate {name!r}")
            cols = [f"{name}={c}" for c in cats[1:]]
            idx = [self.covariate_names.index(c) for c in cols]
            block = self.covariates[:, idx]
            if str(value) == str(cats[0]):  # baseline has no column of its own
                return 1.0 - block.sum(axis=1)
            return block[:, [str(c) for c in cats[1:]].index(str(value))].copy()
        if name not in self.covariate_names:
            raise SchemaError(f"unknown covariate {name!r}")
        col = self.covariates[:, self.covariate_names.index(name)]
        return (col == float(value)).astype(float)

    def equals(self, other: "Dataset") -> bool:
        """Content equality (ingestion bookkeeping like drop counts ignored)."""
        return (
            np.array_equal(self.labels, other.labels)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.outcomes, other.outcomes)
            and self.covariate_names == other.covariate_names
            and self.outcome_names == other.outcome_names
            and tuple(map(str, self.label_values)) == tuple(map(str, other.label_values))
        )

    # -- serialization ---------------------------------------------------------

    def summary(self) -> dict:
        counts = self.cohort_counts()
        prev = cohort_prevalences(self)
        return {
            "n": int(self.n),
            "n_cohorts": int(self.n_cohorts),
            "p": int(self.p),
            "n_outcomes": int(self.n_outcomes),
            "anchor": self.anchor_label,
            "dropped_rows": int(self.n_dropped),
            "cohorts": [
                {
                    "label": self.label_values[s],
                    "count": int(counts[s]),
                    "prevalence": float(prev.pi_hat[s]),
                }
                for s in range(self.n_cohorts)
            ],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, default=str)

    def schema(self) -> ColumnSchema:
        """Schema under which to_csv output reloads to an equal Dataset."""
        return ColumnSchema(
            label_col=self.label_name,
            covariate_cols=self.covariate_names,
            outcome_cols=self.outcome_names,
            anchor_label=str(self.anchor_label),
        )

    def to_csv(self, path_or_buf) -> None:
        original = [self.label_values[s] for s in self.labels]
        df = pd.DataFrame({self.label_name: original})
        for j, name in enumerate(self.covariate_names):
            df[name] = self.covariates[:, j]
        for j, name in enumerate(self.outcome_names):
            df[name] = self.outcomes[:, j]
        df.to_csv(path_or_buf, index=False)


@dataclass(frozen=True)
class PrevalenceVector:
    """Observed cohort shares N_s / N; sums to one."""

    pi_hat: np.ndarray

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.pi_hat, dtype=np.float64))
        if pi.ndim != 1 or pi.size < 1:
            raise SchemaError("prevalences must form a non-empty vector")
        if (pi <= 0).any() or (pi > 1).any():
            raise SupportError("each prevalence must lie in (0, 1]")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise SupportError("prevalences must sum to 1 within 1e-12")
        pi.flags.writeable = False
        object.__setattr__(self, "pi_hat", pi)

    @property
    def anchor(self) -> float:
        return float(self.pi_hat[0])


def cohort_prevalences(ds: Dataset) -> PrevalenceVector:
    """Per-cohort shares of the pooled sample."""
    return PrevalenceVector(ds.cohort_counts() / ds.n)


def _is_missing(value: str) -> bool:
    return value.strip().lower() in MISSING_TOKENS


def _numeric_or_none(values: pd.Series) -> np.ndarray | None:
    converted = pd.to_numeric(values, errors="coerce")
    bad = converted.isna()
    if not bad.any():
        return converted.to_numpy(dtype=np.float64)
    return None


def _sort_key(value: str):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


def load_dataset(source, schema: ColumnSchema) -> Dataset:
    """Read a delimited text file (comma or tab, header row required).

    Rows with missing cells in any used column are dropped (or rejected,
    per schema.missing). Label values may be integers or category strings;
    they are remapped to contiguous ids with the anchor at 0. Categorical
    covariate columns are one-hot expanded; outcome columns must be numeric
    and a stray non-numeric cell raises ParseError with its data row index.
    """
    df = pd.read_csv(
        source, sep=None, engine="python", dtype=str, keep_default_na=False
    )
    if df.shape[0] == 0:
        raise SupportError("input file has no data rows")
    used = [schema.label_col, *schema.covariate_cols, *schema.outcome_cols]
    missing_cols = [c for c in used if c not in df.columns]
    if missing_cols:
        raise SchemaError(f"missing required column(s): {', '.join(missing_cols)}")
    if len(set(used)) != len(used):
        raise SchemaError("a column may appear in only one role")
    df = df[used].apply(lambda col: col.str.strip())

    missing_mask = df.apply(lambda col: col.map(_is_missing)).any(axis=1)
    n_dropped = int(missing_mask.sum())
    if n_dropped and schema.missing == "fail":
        first = int(np.nonzero(missing_mask.to_numpy())[0][0])
        raise ParseError(f"missing cell(s) in data row {first} (policy is 'fail')")
    kept = df.loc[~missing_mask]
    row_index = kept.index.to_numpy()  # original data-row positions
    if kept.shape[0] == 0:
        raise SupportError("all rows dropped by the missing-data policy")

    raw_labels = kept[schema.label_col]
    anchor = str(schema.anchor_label).strip()
    uniques = sorted(set(raw_labels), key=_sort_key)
    if anchor not in uniques:
        raise SupportError(
            f"anchor cohort {schema.anchor_label!r} is empty or absent from "
            f"column {schema.label_col!r}"
        )
    ordered = [anchor] + [u for u in uniques if u != anchor]
    mapping = {u: s for s, u in enumerate(ordered)}
    labels = raw_labels.map(mapping).to_numpy(dtype=np.int64)
    try:
        label_values = tuple(int(u) for u in ordered)
    except ValueError:
        label_values = tuple(ordered)

    cov_blocks, cov_names, categories = [], [], {}
    for col in schema.covariate_cols:
        numeric = _numeric_or_none(kept[col])
        if numeric is not None:
            cov_blocks.append(numeric[:, None])
            cov_names.append(col)
            continue
        convertible = ~pd.to_numeric(kept[col], errors="coerce").isna()
        if convertible.any():
            bad = int(row_index[np.nonzero(~convertible.to_numpy())[0][0]])
            raise ParseError(
                f"non-numeric cell in mostly numeric covariate {col!r} at data row {bad}"
            )
        cats = sorted(set(kept[col]))
        categories[col] = cats
        for cat in cats[1:]:  # first category is the baseline
            cov_blocks.append((kept[col] == cat).to_numpy(dtype=np.float64)[:, None])
            cov_names.append(f"{col}={cat}")

    if not cov_blocks:
        raise SchemaError("no usable covariate columns after categorical expansion")

    out_blocks = []
    for col in schema.outcome_cols:
        numeric = _numeric_or_none(kept[col])
        if numeric is None:
            convertible = ~pd.to_numeric(kept[col], errors="coerce").isna()
            bad = int(row_index[np.nonzero(~convertible.to_numpy())[0][0]])
            raise ParseError(f"non-numeric cell in outcome {col!r} at data row {bad}")
        out_blocks.append(numeric[:, None])

    return Dataset(
        labels=labels,
        covariates=np.hstack(cov_blocks),
        outcomes=np.hstack(out_blocks),
        covariate_names=tuple(cov_names),
        outcome_names=tuple(schema.outcome_cols),
        label_values=label_values,
        label_name=schema.label_col,
        categories=categories,
        n_dropped=n_dropped,
    )
