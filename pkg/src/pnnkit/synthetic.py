"""Seeded synthetic observational datasets with exact oracles.

Each generator returns a Dataset carrying the observational draws plus the
true outcome surface, the oracle policy over the catalog, and (where the
assignment mechanism is known) the true propensities, so estimator and
policy claims can be checked against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_pipeline import FeatureMatrix
from .errors import ConfigError
from .rewards import TreatmentSpace


@dataclass
class Dataset:
    """Model-ready bundle: feature views, observed treatments, outcome."""

    features: FeatureMatrix  # normalized view (network inputs)
    raw: FeatureMatrix  # unnormalized view (tree inputs)
    space: TreatmentSpace
    y: np.ndarray
    direction: str
    outcome_kind: str = "continuous"
    t_idx: np.ndarray | None = None  # catalog indices (discrete observations)
    doses: np.ndarray | None = None  # observed dose matrix (continuous observations)
    prices: np.ndarray | None = None  # per-catalog prices (revenue objective)
    revenue: bool = False
    oracle_idx: np.ndarray | None = None
    true_propensity: np.ndarray | None = None
    true_outcome: object = None  # callable(X, catalog_index) -> expected outcome
    modalities: dict[str, list[int]] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.features.n_rows

    def observed_values(self) -> np.ndarray:
        """Observed treatments as metric values (indices or dose vectors)."""
        if self.space.is_continuous:
            return np.asarray(self.doses, dtype=float)
        return np.asarray(self.t_idx, dtype=float)[:, None]


GENERATORS = {}


def _register(name):
    def inner(fn):
        GENERATORS[name] = fn
        return fn

    return inner


def make_synthetic(name: str, n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Draw a named synthetic dataset; deterministic given the seed."""
    if name not in GENERATORS:
        raise ConfigError(f"unknown synthetic generator {name!r} (have {sorted(GENERATORS)})")
    return GENERATORS[name](n, noise, seed)


def _feature_matrix(X: np.ndarray) -> FeatureMatrix:
    names = [f"x{j + 1}" for j in range(X.shape[1])]
    return FeatureMatrix(X, names)


@_register("two-arm-threshold")
def two_arm_threshold(n: int, noise: float, seed: int) -> Dataset:
    """Binary arms with confounded assignment.

    Outcome is x1 under arm 0 and 1 - x1 under arm 1 (plus Gaussian noise),
    to be minimized; historically P(arm 1 | x) = clip(x1, 0.1, 0.9), so the
    observed assignment is correlated with the optimal one.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    p1 = np.clip(X[:, 0], 0.1, 0.9)
    t = (rng.random(n) < p1).astype(int)
    base = np.where(t == 0, X[:, 0], 1.0 - X[:, 0])
    y = base + (rng.normal(0.0, noise, n) if noise > 0 else 0.0)
    space = TreatmentSpace("binary", ("arm-0", "arm-1"), severity_ordered=True)
    fm = _feature_matrix(X)

    def true_outcome(Xq: np.ndarray, k: int) -> np.ndarray:
        x1 = np.asarray(Xq)[:, 0]
        return x1 if k == 0 else 1.0 - x1

    return Dataset(
        features=fm,
        raw=fm,
        space=space,
        y=y,
        direction="minimize",
        outcome_kind="continuous",
        t_idx=t,
        oracle_idx=(X[:, 0] > 0.5).astype(int),
        true_propensity=np.column_stack([1.0 - p1, p1]),
        true_outcome=true_outcome,
        modalities={"tabular": list(range(2))},
    )


@_register("dose-quadratic")
def dose_quadratic(n: int, noise: float, seed: int, grid_points: int = 11) -> Dataset:
    """Single continuous dose with a quadratic response peaked at x1.

    Outcome is -(dose - x1)^2 (plus noise), to be maximized; historical
    doses are uniform on [0, 1], so assignment is independent of covariates.
    The catalog is an evenly spaced grid on [0, 1].
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    dose = rng.uniform(0.0, 1.0, size=n)
    y = -((dose - X[:, 0]) ** 2) + (rng.normal(0.0, noise, n) if noise > 0 else 0.0)
    grid = np.linspace(0.0, 1.0, grid_points)
    space = TreatmentSpace("continuous", tuple((g,) for g in grid), severity_ordered=True)
    fm = _feature_matrix(X)

    def true_outcome(Xq: np.ndarray, k: int) -> np.ndarray:
        x1 = np.asarray(Xq)[:, 0]
        return -((grid[k] - x1) ** 2)

    oracle = np.argmax(np.stack([true_outcome(X, k) for k in range(grid_points)], axis=1), axis=1)
    return Dataset(
        features=fm,
        raw=fm,
        space=space,
        y=y,
        direction="maximize",
        outcome_kind="continuous",
        doses=dose[:, None],
        oracle_idx=oracle,
        true_propensity=np.full((n, grid_points), 1.0 / grid_points),
        true_outcome=true_outcome,
        modalities={"tabular": list(range(2))},
    )


@_register("revenue-logit")
def revenue_logit(n: int, noise: float, seed: int) -> Dataset:
    """Single-product pricing with a logistic purchase response.

    Prices run $2 to $5 in $0.50 steps; purchase probability falls with
    price and rises with income, and the objective is expected revenue
    (price when purchased, zero otherwise).
    """
    rng = np.random.default_rng(seed)
    income = rng.uniform(0.0, 1.0, size=n)
    basket = rng.uniform(0.0, 1.0, size=n)
    X = np.column_stack([income, basket])
    prices = np.arange(2.0, 5.0 + 1e-9, 0.5)
    k = prices.size
    assigned = rng.integers(0, k, size=n)
    price = prices[assigned]

    def buy_prob(inc: np.ndarray, pr: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-(1.2 + 3.0 * inc - 1.5 * (pr - 2.0))))

    logits = 1.2 + 3.0 * income - 1.5 * (price - 2.0)
    if noise > 0:
        logits = logits + rng.normal(0.0, noise, n)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
    space = TreatmentSpace("continuous", tuple((p,) for p in prices), severity_ordered=True)
    fm = _feature_matrix(X)

    def true_outcome(Xq: np.ndarray, kk: int) -> np.ndarray:
        return buy_prob(np.asarray(Xq)[:, 0], np.full(len(Xq), prices[kk]))

    revenue_surface = np.stack([prices[kk] * true_outcome(X, kk) for kk in range(k)], axis=1)
    return Dataset(
        features=fm,
        raw=fm,
        space=space,
        y=y,
        direction="maximize",
        outcome_kind="binary",
        doses=price[:, None],
        prices=prices.copy(),
        revenue=True,
        oracle_idx=np.argmax(revenue_surface, axis=1),
        true_propensity=np.full((n, k), 1.0 / k),
        true_outcome=true_outcome,
        modalities={"tabular": list(range(2))},
    )
