"""Tabular ingestion, preprocessing, k-NN imputation, PCA, and split planning.

Numeric columns are min-max normalized to [0, 1] on training rows,
categoricals are one-hot encoded against training-observed levels, and
ordinals are mapped through a declared rank map and then treated as numeric.
Tree consumers work on original (unnormalized) values, so the pipeline can
export both a normalized and a raw view of the same table.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SchemaError

NUMERIC_ROLES = ("numeric", "integer")
PASSIVE_ROLES = ("treatment", "outcome", "join-key", "drop")


def round_half_away(x):
    """Round half away from zero (1.5 -> 2, -1.5 -> -2)."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


# ---------------------------------------------------------------------------
# Raw tables
# ---------------------------------------------------------------------------

@dataclass
class RawTable:
    """Column-oriented table of raw cell values.

    Cells are kept as parsed floats, strings, or None (missing). Column
    names must be unique and all columns equally long.
    """

    names: list[str]
    columns: dict[str, list]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate column names in table")
        lengths = {len(self.columns[c]) for c in self.names}
        if len(lengths) > 1:
            raise DataError(f"ragged table: column lengths {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.names[0]]) if self.names else 0

    @classmethod
    def from_csv(cls, path) -> "RawTable":
        """Load a UTF-8 CSV with a header row; empty cells become None."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise DataError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        columns = {
            name: [row[j] if row[j] != "" else None for row in rows]
            for j, name in enumerate(header)
        }
        return cls(names=header, columns=columns)


def _parse_numeric(value, column: str, row: int) -> float:
    """Parse one numeric cell; None -> NaN gap, non-finite -> DataError."""
    if value is None:
        return math.nan
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise DataError(f"column '{column}' row {row}: cannot parse {value!r} as numeric") from None
    if not math.isfinite(out):
        raise DataError(f"column '{column}' row {row}: non-finite value {value!r}")
    return out


# ---------------------------------------------------------------------------
# Feature schema
# ---------------------------------------------------------------------------

@dataclass
class NumericStats:
    vmin: float
    vmax: float
    degenerate: bool  # vmin == vmax on training rows


@dataclass
class FeatureSchema:
    """Per-column roles plus normalization state learned on training rows."""

    roles: dict[str, str]
    numeric_stats: dict[str, NumericStats]
    categorical_levels: dict[str, list[str]]
    ordinal_maps: dict[str, dict[str, float]]
    ordinal_observed: dict[str, list[str]]
    treatment_columns: list[str]
    outcome_column: str

    def feature_columns(self) -> list[str]:
        """Table columns that become model features, in table order."""
        return [c for c, r in self.roles.items() if r in ("numeric", "integer", "categorical", "ordinal")]


def _normalize_roles(spec: dict) -> tuple[dict[str, str], dict[str, dict[str, float]]]:
    roles: dict[str, str] = {}
    ordinal_maps: dict[str, dict[str, float]] = {}
    for col, role in spec.items():
        if isinstance(role, dict):
            if set(role) != {"ordinal"}:
                raise SchemaError(f"column '{col}': unsupported role spec {role!r}")
            mapping = {str(k): float(v) for k, v in role["ordinal"].items()}
            if len(set(mapping.values())) != len(mapping):
                raise SchemaError(f"column '{col}': ordinal map is not injective")
            roles[col] = "ordinal"
            ordinal_maps[col] = mapping
        elif role in NUMERIC_ROLES + ("categorical",) + PASSIVE_ROLES:
            roles[col] = role
        else:
            raise SchemaError(f"column '{col}': unknown role {role!r}")
    return roles, ordinal_maps


def fit_schema(table: RawTable, role_spec: dict, train_rows) -> FeatureSchema:
    """Fit normalization stats and level inventories on training rows only.

    ``role_spec`` maps every column name to a role: "numeric", "integer"
    (numeric kept integral under imputation), "categorical",
    {"ordinal": {level: rank}}, "treatment", "outcome", "join-key", "drop".
    """
    roles, ordinal_maps = _normalize_roles(role_spec)
    missing = [c for c in table.names if c not in roles]
    if missing:
        raise SchemaError(f"roles missing for columns: {missing}")
    unknown = [c for c in roles if c not in table.names]
    if unknown:
        raise SchemaError(f"roles declared for absent columns: {unknown}")

    treatment_columns = [c for c in table.names if roles[c] == "treatment"]
    outcome_columns = [c for c in table.names if roles[c] == "outcome"]
    if not treatment_columns:
        raise SchemaError("no treatment column declared")
    if len(outcome_columns) != 1:
        raise SchemaError(f"exactly one outcome column required, got {outcome_columns}")

    train_rows = np.asarray(sorted(train_rows), dtype=int)
    numeric_stats: dict[str, NumericStats] = {}
    categorical_levels: dict[str, list[str]] = {}
    ordinal_observed: dict[str, list[str]] = {}

    for col in table.names:
        role = roles[col]
        values = table.columns[col]
        if role in NUMERIC_ROLES:
            parsed = [_parse_numeric(values[i], col, i) for i in train_rows]
            observed = [v for v in parsed if not math.isnan(v)]
            if observed:
                vmin, vmax = min(observed), max(observed)
            else:
                vmin = vmax = 0.0
            numeric_stats[col] = NumericStats(vmin, vmax, degenerate=vmin == vmax)
        elif role == "ordinal":
            mapping = ordinal_maps[col]
            seen = []
            for i in train_rows:
                v = values[i]
                if v is None:
                    continue
                v = str(v)
                if v not in mapping:
                    raise SchemaError(f"column '{col}': unknown ordinal level {v!r} in training data")
                if v not in seen:
                    seen.append(v)
            ordinal_observed[col] = seen
            ranks = [mapping[v] for v in seen]
            if ranks:
                vmin, vmax = min(ranks), max(ranks)
            else:
                vmin = vmax = 0.0
            numeric_stats[col] = NumericStats(vmin, vmax, degenerate=vmin == vmax)
        elif role == "categorical":
            levels = sorted({str(values[i]) for i in train_rows if values[i] is not None})
            categorical_levels[col] = levels

    return FeatureSchema(
        roles=roles,
        numeric_stats=numeric_stats,
        categorical_levels=categorical_levels,
        ordinal_maps=ordinal_maps,
        ordinal_observed=ordinal_observed,
        treatment_columns=treatment_columns,
        outcome_column=outcome_columns[0],
    )


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Dense float matrix with column labels and per-column metadata.

    ``kinds`` distinguishes "numeric" from "indicator" columns (imputation
    uses mean vs mode); ``integral`` marks columns whose imputed values are
    rounded to the nearest integer.
    """

    values: np.ndarray
    columns: list[str]
    kinds: list[str] = field(default_factory=list)
    integral: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        if self.values.shape[1] != len(self.columns):
            raise DataError("column label count does not match matrix width")
        if not self.kinds:
            self.kinds = ["numeric"] * len(self.columns)
        if not self.integral:
            self.integral = [False] * len(self.columns)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def _transform_view(table: RawTable, schema: FeatureSchema, normalized: bool) -> FeatureMatrix:
    n = table.n_rows
    blocks, labels, kinds, integral = [], [], [], []
    for col in table.names:
        role = schema.roles[col]
        values = table.columns[col]
        if role in NUMERIC_ROLES:
            parsed = np.array([_parse_numeric(values[i], col, i) for i in range(n)])
            stats = schema.numeric_stats[col]
            if normalized:
                if stats.degenerate:
                    out = np.where(np.isnan(parsed), np.nan, 0.0)
                else:
                    out = (parsed - stats.vmin) / (stats.vmax - stats.vmin)
            else:
                out = parsed
            blocks.append(out[:, None])
            labels.append(col)
            kinds.append("numeric")
            integral.append(role == "integer" and not normalized)
        elif role == "ordinal":
            mapping = schema.ordinal_maps[col]
            parsed = np.empty(n)
            for i, v in enumerate(values):
                if v is None:
                    parsed[i] = np.nan
                    continue
                v = str(v)
                if v not in mapping:
                    raise DataError(f"column '{col}' row {i}: unknown ordinal level {v!r}")
                parsed[i] = mapping[v]
            stats = schema.numeric_stats[col]
            if normalized and not stats.degenerate:
                out = (parsed - stats.vmin) / (stats.vmax - stats.vmin)
            elif normalized:
                out = np.where(np.isnan(parsed), np.nan, 0.0)
            else:
                out = parsed
            blocks.append(out[:, None])
            labels.append(col)
            kinds.append("numeric")
            integral.append(False)
        elif role == "categorical":
            levels = schema.categorical_levels[col]
            block = np.zeros((n, len(levels)))
            for i, v in enumerate(values):
                if v is None:
                    block[i, :] = np.nan  # gap: imputable, unlike an unseen level
                    continue
                v = str(v)
                if v in levels:
                    block[i, levels.index(v)] = 1.0
            blocks.append(block)
            labels.extend(f"{col}={lvl}" for lvl in levels)
            kinds.extend(["indicator"] * len(levels))
            integral.extend([False] * len(levels))
    if not blocks:
        return FeatureMatrix(np.zeros((n, 0)), [], [], [])
    return FeatureMatrix(np.hstack(blocks), labels, kinds, integral)


def transform(table: RawTable, schema: FeatureSchema) -> FeatureMatrix:
    """Produce the normalized model-ready matrix (numeric in [0,1] on train rows)."""
    return _transform_view(table, schema, normalized=True)


def transform_raw(table: RawTable, schema: FeatureSchema) -> FeatureMatrix:
    """Produce the unnormalized view used by tree models for readable splits."""
    return _transform_view(table, schema, normalized=False)


# ---------------------------------------------------------------------------
# k-NN imputation
# ---------------------------------------------------------------------------

def impute_missing(matrix: FeatureMatrix, k: int, distance_values: np.ndarray | None = None) -> FeatureMatrix:
    """Fill NaN cells from the k nearest complete rows.

    Distances are Euclidean over the columns observed in both rows, rescaled
    by sqrt(total/shared) so rows with few observed columns are comparable.
    ``distance_values`` may supply a normalized copy of the matrix to compute
    distances on while the fills are taken from ``matrix`` itself. Numeric
    cells take the neighbor mean, indicator cells the neighbor mode, and
    integral columns are rounded half away from zero. Observed cells are
    left bit-identical.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    values = matrix.values
    dist_vals = values if distance_values is None else np.asarray(distance_values, dtype=float)
    if dist_vals.shape != values.shape:
        raise DataError("distance matrix shape does not match value matrix")
    n, p = values.shape
    missing = np.isnan(values)
    if not missing.any():
        return matrix

    complete = ~missing.any(axis=1)
    n_complete = int(complete.sum())
    if n_complete < k:
        raise DataError(f"need at least k={k} complete rows, found {n_complete}")
    pool = np.flatnonzero(complete)
    pool_vals = values[pool]
    pool_dist = dist_vals[pool]

    out = values.copy()
    indicator = np.array([kind == "indicator" for kind in matrix.kinds])
    integral = np.array(matrix.integral, dtype=bool)
    for i in np.flatnonzero(missing.any(axis=1)):
        observed = ~missing[i]
        if not observed.any():
            raise DataError(f"row {i}: all features missing, cannot impute")
        shared = int(observed.sum())
        diff = pool_dist[:, observed] - dist_vals[i, observed]
        sq = np.einsum("ij,ij->i", diff, diff) * (p / shared)
        order = pool[np.argsort(sq, kind="stable")[:k]]
        neighbors = values[order]
        for j in np.flatnonzero(missing[i]):
            col = neighbors[:, j]
            if indicator[j]:
                counts = np.bincount(col.astype(int), minlength=2)
                out[i, j] = float(np.argmax(counts))  # tie -> smaller value
            else:
                fill = float(np.mean(col))
                if integral[j]:
                    fill = float(round_half_away(fill))
                out[i, j] = fill
    return FeatureMatrix(out, list(matrix.columns), list(matrix.kinds), list(matrix.integral))


# ---------------------------------------------------------------------------
# Embeddings and PCA
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    """Row-aligned dense embedding block for one modality."""

    values: np.ndarray
    modality: str
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError(f"modality '{self.modality}': embeddings must be 2-D")
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(
                f"modality '{self.modality}': non-finite value at row {bad[0]}, column {bad[1]}"
            )
        if not self.columns:
            self.columns = [f"{self.modality}:e{j + 1}" for j in range(self.values.shape[1])]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_csv(cls, path, modality: str) -> "EmbeddingMatrix":
        """Load a headerless CSV of floats; row order must match the table."""
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.reader(fh)):
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    bad = next(j for j, v in enumerate(row) if not _is_float(v))
                    raise DataError(
                        f"modality '{modality}': non-numeric cell at row {i}, column {bad}"
                    ) from None
        if not rows:
            raise DataError(f"modality '{modality}': empty embedding file {path}")
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise DataError(f"modality '{modality}': ragged rows, widths {sorted(widths)}")
        return cls(np.array(rows), modality)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


@dataclass
class PcaModel:
    """Mean vector plus orthonormal component rows sorted by variance."""

    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray  # (k,), non-increasing

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        obj = json.loads(text)
        return cls(
            mean=np.array(obj["mean"], dtype=float),
            components=np.array(obj["components"], dtype=float),
            explained_variance=np.array(obj["explained_variance"], dtype=float),
        )


def fit_pca(embeddings, k: int) -> PcaModel:
    """Fit top-k principal components of the sample covariance.

    Components carry a fixed sign (largest-magnitude entry positive) so
    repeated fits are reproducible. Raises when k exceeds the rank of the
    centered data.
    """
    X = embeddings.values if isinstance(embeddings, EmbeddingMatrix) else np.asarray(embeddings, dtype=float)
    n, d = X.shape
    if n < 2:
        raise DataError("PCA needs at least 2 rows")
    if k < 1 or k > min(n, d):
        raise DataError(f"k={k} out of range for {n}x{d} data")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    eigvals = np.maximum(eigvals, 0.0)
    rank = int(np.sum(eigvals > max(eigvals[0], 0.0) * 1e-10)) if eigvals[0] > 0 else 0
    if k > rank:
        raise DataError(f"k={k} exceeds rank of centered data (achievable rank {rank})")
    components = eigvecs[:, :k].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=eigvals[:k].copy())


def project(embeddings: EmbeddingMatrix, model: PcaModel) -> EmbeddingMatrix:
    """Project rows onto the fitted components: (x - mean) @ components.T."""
    d = model.mean.shape[0]
    if embeddings.values.shape[1] != d:
        raise DataError(
            f"modality '{embeddings.modality}': dimension {embeddings.values.shape[1]} "
            f"does not match PCA dimension {d}"
        )
    projected = (embeddings.values - model.mean) @ model.components.T
    k = model.components.shape[0]
    columns = [f"{embeddings.modality}:pc{j + 1}" for j in range(k)]
    return EmbeddingMatrix(projected, embeddings.modality, columns)


def reconstruct(projected: np.ndarray, model: PcaModel) -> np.ndarray:
    """Map projected rows back to the original space: mean + z @ components."""
    return model.mean + np.asarray(projected, dtype=float) @ model.components


def concat_modalities(tabular: FeatureMatrix, extras: list[EmbeddingMatrix]) -> FeatureMatrix:
    """Append embedding blocks after the tabular block, in declared order."""
    if not extras:
        return tabular
    blocks = [tabular.values]
    columns = list(tabular.columns)
    kinds = list(tabular.kinds)
    integral = list(tabular.integral)
    for emb in extras:
        if emb.n_rows != tabular.n_rows:
            raise DataError(
                f"modality '{emb.modality}': {emb.n_rows} rows, expected {tabular.n_rows}"
            )
        blocks.append(emb.values)
        columns.extend(emb.columns)
        kinds.extend(["numeric"] * emb.values.shape[1])
        integral.extend([False] * emb.values.shape[1])
    return FeatureMatrix(np.hstack(blocks), columns, kinds, integral)


# ---------------------------------------------------------------------------
# Split planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/validation/test row indices covering range(n)."""

    seed: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @property
    def trainval(self) -> np.ndarray:
        return np.concatenate([self.train, self.validation])


def make_split(n: int, seed: int) -> SplitPlan:
    """Split rows 50/50 into (train+validation)/test, with 15% of the first
    half held out for validation. Deterministic given the seed."""
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_trainval = (n + 1) // 2
    trainval, test = perm[:n_trainval], perm[n_trainval:]
    n_val = int(math.floor(0.15 * n_trainval + 0.5))
    return SplitPlan(
        seed=seed,
        train=np.sort(trainval[n_val:]),
        validation=np.sort(trainval[:n_val]),
        test=np.sort(test),
    )
