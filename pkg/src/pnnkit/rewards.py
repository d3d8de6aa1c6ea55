"""Counterfactual reward estimation: direct, doubly-robust, and dose-grid.

The reward matrix holds one estimated outcome per (observation, treatment)
pair and is the shared currency between estimation, policy training, and
evaluation. Estimators here are backed by the in-repo forests.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .trees import ForestModel, fit_forest, predict_proba, predict_value


# ---------------------------------------------------------------------------
# Treatment catalogs
# ---------------------------------------------------------------------------

DISCRETE_KINDS = ("binary", "multi-discrete")
CONTINUOUS_KINDS = ("continuous", "multi-continuous")


@dataclass(frozen=True)
class TreatmentSpace:
    """Finite catalog of treatment options.

    Discrete kinds list string labels; continuous kinds list dose vectors
    (a finite grid stands in for the continuum). ``severity_ordered``
    declares that catalog order is meaningful as a distance scale.
    """

    kind: str
    catalog: tuple
    severity_ordered: bool = False

    def __post_init__(self):
        if self.kind not in DISCRETE_KINDS + CONTINUOUS_KINDS:
            raise ConfigError(f"unknown treatment kind {self.kind!r}")
        if not self.catalog:
            raise ConfigError("treatment catalog is empty")
        if self.kind == "binary" and len(self.catalog) != 2:
            raise ConfigError("binary treatment space needs exactly 2 entries")
        if self.kind in CONTINUOUS_KINDS:
            object.__setattr__(
                self, "catalog", tuple(tuple(float(v) for v in np.atleast_1d(entry)) for entry in self.catalog)
            )
        else:
            object.__setattr__(self, "catalog", tuple(str(entry) for entry in self.catalog))
        if len(set(self.catalog)) != len(self.catalog):
            raise ConfigError("treatment catalog entries must be distinct")
        if self.kind in CONTINUOUS_KINDS:
            dims = {len(entry) for entry in self.catalog}
            if len(dims) != 1:
                raise ConfigError(f"dose vectors have mixed dimensions {sorted(dims)}")

    @property
    def size(self) -> int:
        return len(self.catalog)

    @property
    def is_continuous(self) -> bool:
        return self.kind in CONTINUOUS_KINDS

    @property
    def dose_dim(self) -> int:
        if not self.is_continuous:
            raise ConfigError(f"{self.kind} space has no dose dimension")
        return len(self.catalog[0])

    def dose_matrix(self) -> np.ndarray:
        """Catalog as a (size, dose_dim) float grid."""
        return np.array(self.catalog, dtype=float)

    def labels(self) -> list[str]:
        """Canonical string label per catalog entry (CSV headers, tree leaves)."""
        if self.is_continuous:
            return [";".join(repr(v) for v in entry) for entry in self.catalog]
        return list(self.catalog)

    def index_of(self, entry) -> int:
        try:
            if self.is_continuous:
                key = tuple(float(v) for v in np.atleast_1d(entry))
            else:
                key = str(entry)
            return self.catalog.index(key)
        except ValueError:
            raise DataError(f"treatment {entry!r} is not in the catalog") from None

    def values_for(self, indices: np.ndarray) -> np.ndarray:
        """Treatment values usable in distance metrics: catalog indices for
        discrete spaces, dose vectors for continuous ones."""
        indices = np.asarray(indices, dtype=int)
        if self.is_continuous:
            return self.dose_matrix()[indices]
        return indices.astype(float)[:, None]


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

@dataclass
class RewardMatrix:
    """n x |catalog| estimated outcomes with estimator provenance."""

    values: np.ndarray
    direction: str  # minimize | maximize
    estimator: str  # direct | doubly-robust | continuous-grid
    labels: list[str]
    modality: str = "tabular"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.labels):
            raise DataError("reward matrix shape does not match catalog size")
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise NumericalError(f"non-finite reward at row {bad[0]}, treatment column {bad[1]}")
        if self.direction not in ("minimize", "maximize"):
            raise ConfigError(f"unknown objective direction {self.direction!r}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def to_csv(self) -> str:
        return _matrix_to_csv(self.values, self.labels)

    @classmethod
    def from_csv(cls, text: str, direction: str, estimator: str, modality: str = "tabular") -> "RewardMatrix":
        labels, values = _matrix_from_csv(text)
        return cls(values, direction, estimator, labels, modality)


@dataclass
class PropensityMatrix:
    """Modeled assignment probabilities, floored away from zero."""

    values: np.ndarray
    floor: float
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if (self.values <= 0).any():
            raise DataError("propensities must be strictly positive")

    def to_csv(self) -> str:
        return _matrix_to_csv(self.values, self.labels)

    @classmethod
    def from_csv(cls, text: str, floor: float) -> "PropensityMatrix":
        labels, values = _matrix_from_csv(text)
        return cls(values, floor, labels)


def _matrix_to_csv(values: np.ndarray, labels: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(labels)
    for row in values:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _matrix_from_csv(text: str) -> tuple[list[str], np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    labels = next(reader)
    values = np.array([[float(v) for v in row] for row in reader])
    return labels, values


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _forest_kwargs(learner_params: dict | None) -> dict:
    defaults = {"n_trees": 200, "max_depth": 12, "min_leaf": 5}
    if learner_params:
        defaults.update(learner_params)
    return defaults


def estimate_direct(
    X: np.ndarray,
    t_idx: np.ndarray,
    y: np.ndarray,
    space: TreatmentSpace,
    direction: str,
    outcome_kind: str = "continuous",
    learner_params: dict | None = None,
    min_per_treatment: int = 20,
    seed: int = 0,
    modality: str = "tabular",
) -> tuple[RewardMatrix, list[ForestModel]]:
    """Fit one outcome model per treatment arm and score every row under it.

    Binary outcomes use a classifier's positive-class probability; continuous
    outcomes use a regressor mean. Arm ``k`` is fit with seed ``seed + k``.
    """
    X = np.asarray(X, dtype=float)
    t_idx = np.asarray(t_idx, dtype=int)
    y = np.asarray(y, dtype=float)
    counts = np.bincount(t_idx, minlength=space.size)
    if (counts < min_per_treatment).any():
        detail = {space.labels()[k]: int(c) for k, c in enumerate(counts)}
        raise DataError(f"undersampled treatments (min {min_per_treatment} rows each): {detail}")
    gamma = np.empty((X.shape[0], space.size))
    models = []
    kwargs = _forest_kwargs(learner_params)
    for k in range(space.size):
        rows = t_idx == k
        if outcome_kind == "binary":
            model = fit_forest(X[rows], y[rows].astype(int), task="classify", seed=seed + k, n_classes=2, **kwargs)
            gamma[:, k] = predict_proba(model, X)[:, 1]
        else:
            model = fit_forest(X[rows], y[rows], task="regress", seed=seed + k, **kwargs)
            gamma[:, k] = predict_value(model, X)
    return RewardMatrix(gamma, direction, "direct", space.labels(), modality), models


def _floor_rows(p: np.ndarray, floor: float) -> np.ndarray:
    """Raise every entry to >= floor while keeping each row summing to 1.

    Water-filling: entries at or below the floor are pinned there and the
    remaining mass is spread proportionally over the rest, repeating until
    no entry sinks under the floor.
    """
    k = p.shape[1]
    if floor * k > 1.0:
        raise ConfigError(f"floor {floor} infeasible for {k} treatments")
    out = p.copy()
    for i in range(out.shape[0]):
        row = out[i]
        pinned = np.zeros(k, dtype=bool)
        for _ in range(k):
            low = (row < floor) & ~pinned
            if not low.any():
                break
            pinned |= low
            row[pinned] = floor
            free = ~pinned
            free_mass = 1.0 - floor * pinned.sum()
            total = row[free].sum()
            if total > 0:
                row[free] *= free_mass / total
            else:
                row[free] = free_mass / max(free.sum(), 1)
        out[i] = row
    return out


def estimate_propensity(
    X: np.ndarray,
    t_idx: np.ndarray,
    space: TreatmentSpace,
    learner_params: dict | None = None,
    floor: float = 0.01,
    seed: int = 0,
) -> PropensityMatrix:
    """Model assignment probabilities with a multiclass forest, then floor
    them so inverse-propensity weights stay bounded."""
    t_idx = np.asarray(t_idx, dtype=int)
    if np.unique(t_idx).size < 2:
        raise DataError("propensity estimation needs at least 2 observed treatments")
    kwargs = _forest_kwargs(learner_params)
    model = fit_forest(np.asarray(X, dtype=float), t_idx, task="classify", seed=seed, n_classes=space.size, **kwargs)
    raw = predict_proba(model, np.asarray(X, dtype=float))
    return PropensityMatrix(_floor_rows(raw, floor), floor, space.labels())


def doubly_robust(
    direct: RewardMatrix,
    propensity: PropensityMatrix,
    t_idx: np.ndarray,
    y: np.ndarray,
) -> RewardMatrix:
    """Inverse-propensity correction of the direct estimates.

    Unobserved (row, treatment) entries are returned bit-identical to the
    direct estimates; observed entries get the residual correction
    ``y_hat + (y - y_hat) / p`` and collapse to ``y`` exactly when p == 1.
    """
    t_idx = np.asarray(t_idx, dtype=int)
    y = np.asarray(y, dtype=float)
    yhat = direct.values
    p = propensity.values
    if p.shape != yhat.shape:
        raise DataError(f"propensity shape {p.shape} does not match rewards {yhat.shape}")
    if t_idx.shape[0] != yhat.shape[0]:
        raise DataError("treatment vector length does not match reward rows")
    gamma = yhat.copy()
    rows = np.arange(yhat.shape[0])
    p_obs = p[rows, t_idx]
    yhat_obs = yhat[rows, t_idx]
    with np.errstate(over="ignore", invalid="ignore"):
        corrected = np.where(p_obs == 1.0, y, yhat_obs + (y - yhat_obs) / p_obs)
    bad = ~np.isfinite(corrected)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"doubly-robust correction overflowed at row {i}, treatment {direct.labels[t_idx[i]]} "
            f"(propensity {p_obs[i]!r})"
        )
    gamma[rows, t_idx] = corrected
    return RewardMatrix(gamma, direct.direction, "doubly-robust", list(direct.labels), direct.modality)


def estimate_continuous(
    X: np.ndarray,
    doses: np.ndarray,
    y: np.ndarray,
    space: TreatmentSpace,
    direction: str,
    outcome_kind: str = "continuous",
    learner_params: dict | None = None,
    seed: int = 0,
    modality: str = "tabular",
) -> tuple[RewardMatrix, ForestModel]:
    """Fit a single model on (features, dose) pairs and sweep the dose grid.

    ``doses`` is the observed (n, dose_dim) matrix; the catalog supplies the
    finite grid of candidate dose vectors scored for every row.
    """
    X = np.asarray(X, dtype=float)
    doses = np.asarray(doses, dtype=float)
    if doses.ndim == 1:
        doses = doses[:, None]
    grid = space.dose_matrix()
    if doses.shape[1] != grid.shape[1]:
        raise DataError(
            f"grid entries have dimension {grid.shape[1]}, observed doses have {doses.shape[1]}"
        )
    augmented = np.hstack([X, doses])
    kwargs = _forest_kwargs(learner_params)
    if outcome_kind == "binary":
        model = fit_forest(augmented, np.asarray(y).astype(int), task="classify", seed=seed, n_classes=2, **kwargs)
    else:
        model = fit_forest(augmented, np.asarray(y, dtype=float), task="regress", seed=seed, **kwargs)
    gamma = np.empty((X.shape[0], space.size))
    for g in range(space.size):
        probe = np.hstack([X, np.tile(grid[g], (X.shape[0], 1))])
        if outcome_kind == "binary":
            gamma[:, g] = predict_proba(model, probe)[:, 1]
        else:
            gamma[:, g] = predict_value(model, probe)
    return RewardMatrix(gamma, direction, "continuous-grid", space.labels(), modality), model


def dr_policy_value(rewards: RewardMatrix, assignments: np.ndarray) -> float:
    """Mean estimated outcome of a policy under the given reward matrix."""
    assignments = np.asarray(assignments, dtype=int)
    if assignments.min() < 0 or assignments.max() >= rewards.values.shape[1]:
        raise DataError("policy assignment outside the treatment catalog")
    rows = np.arange(rewards.values.shape[0])
    return float(np.mean(rewards.values[rows, assignments]))
