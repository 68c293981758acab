"""Dataset container, CSV loading, preprocessing and group construction.

The dataset stores an n x p covariate matrix with per-column roles
(continuous, binary, count, categorical), a binary treatment vector and
an optional outcome. Preprocessing expands categorical columns to
dummies, optionally standardizes numeric columns, drops near-collinear
columns and can append an intercept, producing the design matrix the
balancing methods operate on.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import BalanceKitError, OutcomeWithheldError, SchemaError

COVARIATE_ROLES = ("continuous", "binary", "count", "categorical")
NUMERIC_ROLES = ("continuous", "count")


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    role: str
    levels: Optional[tuple] = None  # categorical only, sorted


class Dataset:
    """Immutable covariate/treatment/outcome container.

    Covariates are stored as a dense float matrix; categorical columns
    hold integer level codes with the level labels kept in ``columns``.
    """

    def __init__(self, covariates, treatment, outcome=None, ids=None, columns=None):
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim != 2:
            raise BalanceKitError("covariates must be a 2-D matrix")
        treatment = np.asarray(treatment)
        n, p = covariates.shape
        if treatment.shape != (n,):
            raise BalanceKitError("treatment length must match covariate rows")
        if not np.isin(treatment, (0, 1)).all():
            bad = int(np.flatnonzero(~np.isin(treatment, (0, 1)))[0])
            raise BalanceKitError(f"treatment contains non-{{0,1}} value at row {bad}")
        treatment = treatment.astype(int)
        if treatment.sum() == 0 or treatment.sum() == n:
            raise BalanceKitError("need at least one treated and one control subject")
        if not np.isfinite(covariates).all():
            i, j = np.argwhere(~np.isfinite(covariates))[0]
            raise BalanceKitError(f"missing/non-finite covariate at row {i}, column {j}")
        if outcome is not None:
            outcome = np.asarray(outcome, dtype=float)
            if outcome.shape != (n,):
                raise BalanceKitError("outcome length must match covariate rows")
        if ids is None:
            ids = [str(i) for i in range(n)]
        if columns is None:
            columns = [ColumnInfo(f"x{j}", "continuous") for j in range(p)]
        if len(columns) != p:
            raise BalanceKitError("column metadata length must match covariate columns")
        self.covariates = covariates
        self.covariates.setflags(write=False)
        self.treatment = treatment
        self.treatment.setflags(write=False)
        self._outcome = outcome
        if outcome is not None:
            self._outcome.setflags(write=False)
        self.ids = list(ids)
        self.columns = list(columns)
        self._outcome_withheld = False

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def outcome(self):
        if self._outcome_withheld:
            raise OutcomeWithheldError(
                "outcome access during balancing: outcomes are only available "
                "at the estimation stage"
            )
        return self._outcome

    @property
    def has_outcome(self):
        return self._outcome is not None

    def treated_indices(self):
        return np.flatnonzero(self.treatment == 1)

    def control_indices(self):
        return np.flatnonzero(self.treatment == 0)

    def design_view(self):
        """Outcome-withheld view for the balancing (design) stage."""
        view = object.__new__(Dataset)
        view.__dict__.update(self.__dict__)
        view._outcome_withheld = True
        return view


@dataclass(frozen=True)
class EstimandSpec:
    """Which treatment effect is targeted.

    ``cate_selector`` is a predicate over a covariate row (one row of the
    raw covariate matrix) and is required exactly when kind = "CATE".
    Exact-match selectors are only meaningful for discrete covariates.
    """

    kind: str  # "SATE" | "SATT" | "CATE"
    cate_selector: Optional[Callable[[np.ndarray], bool]] = None

    def __post_init__(self):
        if self.kind not in ("SATE", "SATT", "CATE"):
            raise BalanceKitError(f"unknown estimand kind {self.kind!r}")
        if (self.kind == "CATE") != (self.cate_selector is not None):
            raise BalanceKitError("cate_selector present iff kind is CATE")


@dataclass(frozen=True)
class GroupPair:
    """The (U, V) index sets a weight vector is estimated over.

    Weights live on U; the targets are the (uniform) V moments.
    """

    u_indices: np.ndarray
    v_indices: np.ndarray
    role: str  # "treated-side" | "control-side"

    def __post_init__(self):
        object.__setattr__(self, "u_indices", np.asarray(self.u_indices, dtype=int))
        object.__setattr__(self, "v_indices", np.asarray(self.v_indices, dtype=int))
        if self.u_indices.size == 0 or self.v_indices.size == 0:
            raise BalanceKitError("group index sets must be nonempty")


@dataclass(frozen=True)
class PreprocessSpec:
    standardize: bool = True
    dummy_mode: str = "k-minus-one"  # or "full-k"
    collinearity_tol: float = 1e-8
    add_intercept: bool = False

    def __post_init__(self):
        if self.collinearity_tol < 0:
            raise BalanceKitError("collinearity_tol must be nonnegative")
        if self.dummy_mode not in ("k-minus-one", "full-k"):
            raise BalanceKitError(f"unknown dummy_mode {self.dummy_mode!r}")


@dataclass
class DesignMatrix:
    """Preprocessed covariates plus bookkeeping back to source columns."""

    matrix: np.ndarray
    names: list[str]
    source: list[str]  # source covariate name per design column
    dropped: list[str] = field(default_factory=list)
    has_intercept: bool = False

    @property
    def k(self):
        return self.matrix.shape[1]


def load_csv(path, schema) -> Dataset:
    """Load a CSV with a column-role schema into a validated Dataset.

    ``schema`` maps column name -> role, where exactly one column has
    role "treatment", at most one "outcome", optionally one "id", and
    every remaining column carries a covariate role. A path to a JSON
    sidecar is accepted in place of the dict.
    """
    if isinstance(schema, (str,)) or hasattr(schema, "read_text"):
        with open(schema) as fh:
            schema = json.load(fh)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}")
    roles = dict(schema)
    unknown = [r for r in roles.values()
               if r not in COVARIATE_ROLES + ("treatment", "outcome", "id")]
    if unknown:
        raise SchemaError(f"unknown column role(s): {sorted(set(unknown))}")
    missing_cols = [c for c in roles if c not in frame.columns]
    if missing_cols:
        raise SchemaError(f"schema names absent columns: {missing_cols}")
    uncovered = [c for c in frame.columns if c not in roles]
    if uncovered:
        raise SchemaError(f"columns without a declared role: {uncovered}")
    treat_cols = [c for c, r in roles.items() if r == "treatment"]
    if len(treat_cols) != 1:
        raise SchemaError("schema must declare exactly one treatment column")

    na = frame.isna()
    if na.to_numpy().any():
        row = int(na.any(axis=1).idxmax())
        col = na.columns[na.loc[row].to_numpy().argmax()]
        raise SchemaError(f"missing value at row {row}, column {col!r}")

    zcol = treat_cols[0]
    z = frame[zcol].to_numpy()
    bad = ~np.isin(z, (0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaError(
            f"treatment column {zcol!r} has non-{{0,1}} value "
            f"{frame[zcol].iloc[row]!r} at row {row}"
        )

    outcome_cols = [c for c, r in roles.items() if r == "outcome"]
    id_cols = [c for c, r in roles.items() if r == "id"]
    outcome = frame[outcome_cols[0]].to_numpy(dtype=float) if outcome_cols else None
    ids = frame[id_cols[0]].astype(str).tolist() if id_cols else None

    columns, mats = [], []
    for col in frame.columns:
        role = roles[col]
        if role not in COVARIATE_ROLES:
            continue
        if role == "categorical":
            levels = tuple(sorted(frame[col].astype(str).unique()))
            codes = frame[col].astype(str).map({v: i for i, v in enumerate(levels)})
            mats.append(codes.to_numpy(dtype=float))
            columns.append(ColumnInfo(col, role, levels))
        else:
            try:
                mats.append(frame[col].to_numpy(dtype=float))
            except ValueError:
                raise SchemaError(f"non-numeric value in {role} column {col!r}")
            columns.append(ColumnInfo(col, role))
    if not mats:
        raise SchemaError("no covariate columns declared")
    X = np.column_stack(mats)
    return Dataset(X, z.astype(int), outcome=outcome, ids=ids, columns=columns)


def save_csv(dataset: Dataset, path):
    """Write a Dataset back to CSV (categoricals as their level labels)."""
    data = {}
    for j, col in enumerate(dataset.columns):
        vals = dataset.covariates[:, j]
        if col.role == "categorical":
            data[col.name] = [col.levels[int(v)] for v in vals]
        else:
            data[col.name] = vals
    data["treatment"] = dataset.treatment
    if dataset.has_outcome:
        data["outcome"] = dataset.outcome
    pd.DataFrame(data).to_csv(path, index=False)


def schema_of(dataset: Dataset) -> dict:
    schema = {c.name: c.role for c in dataset.columns}
    schema["treatment"] = "treatment"
    if dataset.has_outcome:
        schema["outcome"] = "outcome"
    return schema


def preprocess(dataset: Dataset, spec: PreprocessSpec = PreprocessSpec()) -> DesignMatrix:
    """Expand, standardize and de-collinearize into a design matrix.

    Standardization statistics are computed over the full sample so both
    groups of any pair share one coordinate system. Near-collinear
    columns are dropped by pivoted Gram-Schmidt in column order (later
    columns lose), reported in ``dropped``.
    """
    cols, names, source = [], [], []
    for j, info in enumerate(dataset.columns):
        x = dataset.covariates[:, j]
        if info.role == "categorical":
            levels = info.levels
            start = 1 if spec.dummy_mode == "k-minus-one" else 0
            for code in range(start, len(levels)):
                cols.append((x == code).astype(float))
                names.append(f"{info.name}={levels[code]}")
                source.append(info.name)
        else:
            cols.append(x.astype(float))
            names.append(info.name)
            source.append(info.name)

    matrix_cols, kept_names, kept_source, dropped = [], [], [], []
    for x, name, src in zip(cols, names, source):
        srcinfo = next(c for c in dataset.columns if c.name == src)
        if spec.standardize and srcinfo.role in NUMERIC_ROLES:
            sd = x.std(ddof=1)
            if sd == 0.0:
                warnings.warn(f"column {name!r} has zero variance; dropped")
                dropped.append(name)
                continue
            x = (x - x.mean()) / sd
        matrix_cols.append(x)
        kept_names.append(name)
        kept_source.append(src)

    if spec.add_intercept:
        matrix_cols.append(np.ones(dataset.n))
        kept_names.append("(intercept)")
        kept_source.append("(intercept)")

    # Pivoted Gram-Schmidt: keep a column only if its residual against the
    # span of the kept earlier columns is large enough relative to its norm.
    basis = []
    final_cols, final_names, final_source = [], [], []
    for x, name, src in zip(matrix_cols, kept_names, kept_source):
        r = x.copy()
        for q in basis:
            r -= (q @ r) * q
        nrm0 = np.linalg.norm(x)
        if nrm0 == 0.0 or np.linalg.norm(r) <= spec.collinearity_tol * max(nrm0, 1.0):
            dropped.append(name)
            continue
        basis.append(r / np.linalg.norm(r))
        final_cols.append(x)
        final_names.append(name)
        final_source.append(src)

    if not final_cols:
        raise BalanceKitError("all design columns dropped; nothing to balance on")
    return DesignMatrix(
        matrix=np.column_stack(final_cols),
        names=final_names,
        source=final_source,
        dropped=dropped,
        has_intercept=spec.add_intercept and "(intercept)" in final_names,
    )


def build_groups(dataset: Dataset, estimand: EstimandSpec) -> list[GroupPair]:
    """Construct the (U, V) pairs whose weights realize the estimand.

    SATE balances each arm against the full sample (two pairs); SATT
    balances controls against the treated (one pair); CATE balances each
    arm against the selected subjects (two pairs).
    """
    treated = dataset.treated_indices()
    controls = dataset.control_indices()
    everyone = np.arange(dataset.n)
    if estimand.kind == "SATT":
        return [GroupPair(controls, treated, "control-side")]
    if estimand.kind == "SATE":
        return [
            GroupPair(treated, everyone, "treated-side"),
            GroupPair(controls, everyone, "control-side"),
        ]
    selected = np.array(
        [i for i in everyone if estimand.cate_selector(dataset.covariates[i])],
        dtype=int,
    )
    if selected.size == 0:
        raise BalanceKitError("CATE selector matched no subjects")
    return [
        GroupPair(treated, selected, "treated-side"),
        GroupPair(controls, selected, "control-side"),
    ]
