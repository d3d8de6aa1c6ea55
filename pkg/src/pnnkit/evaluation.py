"""Policy evaluation: improvement / realism / stability metrics, the
Regress & Compare baseline, and the seeded multi-split experiment harness.

The harness runs N_s randomized splits with N_m/N_s models per split.
Improvement is aggregated as mean +/- std across split-level means; the
realism and stability metrics pool all N_m models.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data_pipeline import SplitPlan, make_split
from .distill import distill
from .errors import ConfigError, DataError, ToolkitError
from .network import default_config, prescribe, train
from .rewards import (
    RewardMatrix,
    TreatmentSpace,
    doubly_robust,
    estimate_continuous,
    estimate_direct,
    estimate_propensity,
)
from .seeding import derive_seed
from .synthetic import Dataset
from .trees import fit_forest, predict_proba, predict_value

EXTERNAL_PLACEHOLDERS = ("causal-forest", "optimal-policy-tree")
BUILTIN_METHODS = ("pnn", "mirrored-tree", "regress-compare")


# ---------------------------------------------------------------------------
# Regress & Compare
# ---------------------------------------------------------------------------

def regress_compare(
    X_fit: np.ndarray,
    t_fit,
    y_fit: np.ndarray,
    space: TreatmentSpace,
    direction: str,
    outcome_kind: str = "continuous",
    learner_params: dict | None = None,
    seed: int = 0,
    X_query: np.ndarray | None = None,
    prices: np.ndarray | None = None,
) -> np.ndarray:
    """Append the treatment as a feature, fit one outcome model, and pick
    the best-scoring catalog entry per row (ties to the lowest index).

    Discrete treatments enter as their catalog index; continuous ones as
    their dose vector. When ``prices`` is given the per-option scores are
    weighted by price before picking (revenue objective).
    """
    X_fit = np.asarray(X_fit, dtype=float)
    X_query = X_fit if X_query is None else np.asarray(X_query, dtype=float)
    if space.is_continuous:
        t_cols = np.asarray(t_fit, dtype=float)
        if t_cols.ndim == 1:
            t_cols = t_cols[:, None]
        option_rows = space.dose_matrix()
    else:
        t_cols = np.asarray(t_fit, dtype=float)[:, None]
        option_rows = np.arange(space.size, dtype=float)[:, None]
    params = {"n_trees": 200, "max_depth": 12, "min_leaf": 5}
    if learner_params:
        params.update(learner_params)
    augmented = np.hstack([X_fit, t_cols])
    if outcome_kind == "binary":
        model = fit_forest(augmented, np.asarray(y_fit).astype(int), task="classify", seed=seed, n_classes=2, **params)
    else:
        model = fit_forest(augmented, np.asarray(y_fit, dtype=float), task="regress", seed=seed, **params)
    scores = np.empty((X_query.shape[0], space.size))
    for k in range(space.size):
        probe = np.hstack([X_query, np.tile(option_rows[k], (X_query.shape[0], 1))])
        if outcome_kind == "binary":
            scores[:, k] = predict_proba(model, probe)[:, 1]
        else:
            scores[:, k] = predict_value(model, probe)
    if prices is not None:
        scores = scores * np.asarray(prices, dtype=float)[None, :]
    if direction == "minimize":
        return np.argmin(scores, axis=1)
    return np.argmax(scores, axis=1)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def improvement(
    rewards: RewardMatrix,
    prescribed_idx: np.ndarray,
    actual_idx: np.ndarray,
    absolute: bool = False,
) -> float:
    """Relative outcome improvement of the prescribed over the historical
    treatment, in percent, with both sides drawn from the reward matrix.

    Signed by default so harmful policies report negative values; the
    ``absolute`` flag switches the numerator to summed absolute gaps. The
    denominator uses the magnitude of the historical reward total so an
    objective flip combined with a negated matrix reports identically.
    """
    prescribed_idx = np.asarray(prescribed_idx, dtype=int)
    actual_idx = np.asarray(actual_idx, dtype=int)
    vals = rewards.values
    k = vals.shape[1]
    for name, idx in (("prescribed", prescribed_idx), ("actual", actual_idx)):
        if idx.min() < 0 or idx.max() >= k:
            raise DataError(f"{name} treatments fall outside the catalog")
    rows = np.arange(vals.shape[0])
    gamma_actual = vals[rows, actual_idx]
    gamma_prescribed = vals[rows, prescribed_idx]
    den = gamma_actual.sum()
    if den == 0.0:
        raise DataError("historical reward total is zero; improvement undefined")
    diff = gamma_actual - gamma_prescribed
    if absolute:
        num = np.abs(diff).sum()
    else:
        sign = 1.0 if rewards.direction == "minimize" else -1.0
        num = sign * diff.sum()
    return float(100.0 * num / abs(den))


def revenue_improvement(
    rewards: RewardMatrix,
    prescribed_idx: np.ndarray,
    prices: np.ndarray,
    y_actual: np.ndarray,
    actual_idx: np.ndarray,
) -> float:
    """Percent gain of model revenue over realized revenue.

    Model revenue weighs the estimated purchase outcome at the prescribed
    option by its price; actual revenue uses the observed outcomes at the
    historical option.
    """
    prescribed_idx = np.asarray(prescribed_idx, dtype=int)
    actual_idx = np.asarray(actual_idx, dtype=int)
    prices = np.asarray(prices, dtype=float)
    rows = np.arange(rewards.values.shape[0])
    model_rev = float(np.mean(rewards.values[rows, prescribed_idx] * prices[prescribed_idx]))
    actual_rev = float(np.mean(np.asarray(y_actual, dtype=float) * prices[actual_idx]))
    if actual_rev == 0.0:
        raise DataError("actual revenue is zero; revenue improvement undefined")
    return 100.0 * (model_rev - actual_rev) / actual_rev


def mean_abs_difference(prescribed_idx: np.ndarray, actual, space: TreatmentSpace) -> float:
    """Mean L1 distance between prescribed and historical treatments.

    Discrete treatments are compared by catalog index, which requires a
    declared severity order for multi-discrete spaces; continuous ones by
    their dose vectors (``actual`` may be the raw dose matrix).
    """
    if space.kind == "multi-discrete" and not space.severity_ordered:
        raise ConfigError("multi-discrete distance needs severity_ordered=True on the space")
    prescribed = space.values_for(np.asarray(prescribed_idx, dtype=int))
    actual = np.asarray(actual, dtype=float)
    if actual.ndim == 1:
        if space.is_continuous and space.dose_dim == 1:
            actual = actual[:, None]
        else:
            actual = space.values_for(actual.astype(int))
    return float(np.mean(np.abs(prescribed - actual).sum(axis=1)))


def aggregate_difference(per_model: list[float]) -> float:
    """Average the per-model mean absolute differences."""
    return float(np.mean(per_model))


def coverage(assignments_per_model: list[np.ndarray], space: TreatmentSpace) -> float:
    """Mean percent of the catalog each model actually prescribes."""
    if not assignments_per_model:
        raise DataError("coverage needs at least one model")
    used = [np.unique(np.asarray(a, dtype=int)).size for a in assignments_per_model]
    return float(100.0 * np.mean(used) / space.size)


def stability(assignments_per_model: list[np.ndarray], space: TreatmentSpace) -> float:
    """Mean per-sample spread of prescriptions across models.

    For each sample, the population standard deviation of its prescriptions
    across the models; dose-vector catalogs take the per-dose standard
    deviation first and then average across doses.
    """
    stack = np.stack([np.asarray(a, dtype=int) for a in assignments_per_model])  # (N_m, n)
    if space.is_continuous:
        doses = space.dose_matrix()[stack]  # (N_m, n, dose_dim)
        per_dose = doses.std(axis=0)  # (n, dose_dim)
        per_sample = per_dose.mean(axis=1)
    else:
        per_sample = stack.astype(float).std(axis=0)
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    n_splits: int = 5
    models_per_split: int = 5
    base_seed: int = 0
    methods: tuple = BUILTIN_METHODS
    estimator: str = "doubly-robust"  # or "direct"
    propensity_floor: float = 0.01
    min_per_treatment: int = 20
    learner_params: dict = field(default_factory=lambda: {"n_trees": 100, "max_depth": 12, "min_leaf": 5})
    pnn: dict = field(default_factory=dict)
    distill_params: dict = field(default_factory=dict)
    improvement_absolute: bool = False
    registry: dict = field(default_factory=dict)  # method name -> builtin implementation

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ConfigError("method list is empty")
        if self.estimator not in ("doubly-robust", "direct"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        for name in self.methods:
            impl = self.registry.get(name, name)
            if impl not in BUILTIN_METHODS:
                raise ConfigError(f"unknown method {name!r} (register it against one of {BUILTIN_METHODS})")

    @property
    def n_models(self) -> int:
        return self.n_splits * self.models_per_split

    def implementation(self, name: str) -> str:
        return self.registry.get(name, name)


@dataclass
class MetricReport:
    methods: dict  # name -> metric dict
    references: dict
    external: dict
    config: dict

    def to_json(self) -> str:
        import json

        return json.dumps(
            {
                "methods": self.methods,
                "references": self.references,
                "external": self.external,
                "config": self.config,
            },
            sort_keys=True,
            indent=2,
        )

    def results_payload(self) -> dict:
        """Metric values only (no config echo), for cross-run comparison."""
        return {"methods": self.methods, "references": self.references}

    def to_text(self) -> str:
        lines = []
        mods = sorted(next(iter(self.methods.values()))["improvement"]) if self.methods else []
        header = (
            ["method"]
            + [f"improvement[{m}] (%)" for m in mods]
            + ["mean-abs-diff", "coverage (%)", "stability", "fidelity (%)"]
        )
        rows = []
        for name in list(self.methods) + list(self.references):
            entry = self.methods.get(name) or self.references[name]
            cells = [name]
            for m in mods:
                imp = entry["improvement"][m]
                cells.append(f"{imp['mean']:.2f} ± {imp['std']:.2f}")
            cells.append(f"{entry['mean_abs_difference']:.4f}")
            cells.append(f"{entry['coverage']:.2f}")
            cells.append(f"{entry['stability']:.4f}")
            fid = entry.get("fidelity")
            cells.append(f"{100 * fid['mean']:.2f} ± {100 * fid['std']:.2f}" if fid else "-")
            rows.append(cells)
        for name, note in self.external.items():
            rows.append([name, note] + ["-"] * (len(header) - 2))
        widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines.append(fmt.format(*header))
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append(fmt.format(*r))
        return "\n".join(lines) + "\n"


def _actual_indices(dataset: Dataset) -> np.ndarray:
    """Historical treatments as catalog indices; off-grid doses snap to the
    nearest catalog entry (L1, ties to the lowest index)."""
    if not dataset.space.is_continuous:
        return np.asarray(dataset.t_idx, dtype=int)
    grid = dataset.space.dose_matrix()
    doses = np.asarray(dataset.doses, dtype=float)
    dist = np.abs(doses[:, None, :] - grid[None, :, :]).sum(axis=2)
    return np.argmin(dist, axis=1)


def _estimate_rewards(
    dataset: Dataset,
    rows: np.ndarray,
    config: ExperimentConfig,
    seed: int,
    columns=None,
    modality: str = "tabular",
) -> RewardMatrix:
    X = dataset.features.values[rows]
    if columns is not None:
        X = X[:, columns]
    y = dataset.y[rows]
    if dataset.space.is_continuous:
        rm, _ = estimate_continuous(
            X,
            np.asarray(dataset.doses)[rows],
            y,
            dataset.space,
            dataset.direction,
            outcome_kind=dataset.outcome_kind,
            learner_params=config.learner_params,
            seed=seed,
            modality=modality,
        )
        return rm
    t = np.asarray(dataset.t_idx, dtype=int)[rows]
    rm, _ = estimate_direct(
        X,
        t,
        y,
        dataset.space,
        dataset.direction,
        outcome_kind=dataset.outcome_kind,
        learner_params=config.learner_params,
        min_per_treatment=config.min_per_treatment,
        seed=seed,
        modality=modality,
    )
    if config.estimator == "doubly-robust":
        prop = estimate_propensity(
            X, t, dataset.space, config.learner_params, config.propensity_floor,
            seed=derive_seed(seed, "propensity"),
        )
        rm = doubly_robust(rm, prop, t, y)
    return rm


def _training_rewards(dataset: Dataset, rewards: RewardMatrix) -> tuple[np.ndarray, str]:
    """Reward matrix and direction the policy actually optimizes; revenue
    objectives weight outcome estimates by price."""
    if dataset.revenue:
        return rewards.values * np.asarray(dataset.prices)[None, :], "maximize"
    return rewards.values, dataset.direction


def _local_plan(plan: SplitPlan) -> SplitPlan:
    """Index the train/validation rows within the concatenated trainval block."""
    n_train = plan.train.size
    return SplitPlan(
        seed=plan.seed,
        train=np.arange(n_train),
        validation=n_train + np.arange(plan.validation.size),
        test=np.arange(0),
    )


def _run_split(dataset: Dataset, config: ExperimentConfig, s: int) -> dict:
    """Everything for one split: reward estimation, model fits, prescriptions."""
    plan = make_split(dataset.n_rows, derive_seed(config.base_seed, "split", s))
    tv = plan.trainval
    rewards_tv = _estimate_rewards(dataset, tv, config, derive_seed(config.base_seed, "rewards-train", s))
    modalities = dataset.modalities or {"tabular": None}
    rewards_test = {
        name: _estimate_rewards(
            dataset, plan.test, config, derive_seed(config.base_seed, "rewards-test", s, name), cols, name
        )
        for name, cols in sorted(modalities.items())
    }
    gamma_train, train_direction = _training_rewards(dataset, rewards_tv)

    out = {
        "split": s,
        "plan": plan,
        "rewards_test": rewards_test,
        "rewards_tv_values": rewards_tv.values,
        "models": {},
    }
    X_all = dataset.features.values
    X_tv = X_all[tv]
    local = _local_plan(plan)

    for m in range(config.models_per_split):
        model_seed = derive_seed(config.base_seed, "model", s, m)
        cache: dict = {}

        def fit_pnn():
            if "pnn" not in cache:
                overrides = {k: v for k, v in config.pnn.items() if k not in ("seed", "direction")}
                cfg = default_config(X_tv.shape[1], seed=model_seed, direction=train_direction, **overrides)
                model, trace = train(X_tv, gamma_train, local, cfg)
                assign, _ = prescribe(model, X_all)
                cache["pnn"] = (model, trace, assign)
            return cache["pnn"]

        for name in config.methods:
            impl = config.implementation(name)
            try:
                if impl == "pnn":
                    _, _, assign = fit_pnn()
                    result = {"assignments": assign, "fidelity": None}
                elif impl == "mirrored-tree":
                    _, _, pnn_assign = fit_pnn()
                    params = {"max_depth": 7, "min_leaf": 1, "alpha": 0.0, "passes": 30}
                    params.update(config.distill_params)
                    tree = distill(
                        dataset.raw.values[tv],
                        pnn_assign[tv],
                        dataset.space.size,
                        feature_names=dataset.raw.columns,
                        class_labels=dataset.space.labels(),
                        seed=derive_seed(model_seed, "distill"),
                        **params,
                    )
                    result = {"assignments": tree.predict(dataset.raw.values), "fidelity": tree.fidelity_train}
                else:
                    t_fit = dataset.doses[tv] if dataset.space.is_continuous else dataset.t_idx[tv]
                    assign = regress_compare(
                        X_tv,
                        t_fit,
                        dataset.y[tv],
                        dataset.space,
                        train_direction,
                        outcome_kind=dataset.outcome_kind,
                        learner_params=config.learner_params,
                        seed=model_seed,
                        X_query=X_all,
                        prices=dataset.prices if dataset.revenue else None,
                    )
                    result = {"assignments": assign, "fidelity": None}
            except ToolkitError as exc:
                raise type(exc)(f"split {s} model {m} method {name}: {exc}") from exc
            out["models"].setdefault(name, {})[m] = result
    return out


def run_experiment(dataset: Dataset, config: ExperimentConfig, jobs: int = 1) -> MetricReport:
    """Run the full multi-split protocol and aggregate every metric.

    Deterministic given ``config.base_seed`` regardless of ``jobs``.
    """
    n = dataset.n_rows
    if jobs > 1:
        worker_data = replace(dataset, true_outcome=None)  # closures are not picklable
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_split, worker_data, config, s) for s in range(config.n_splits)]
            split_results = [f.result() for f in futures]
    else:
        split_results = [_run_split(dataset, config, s) for s in range(config.n_splits)]
    split_results.sort(key=lambda r: r["split"])

    actual_idx = _actual_indices(dataset)
    actual_values = dataset.observed_values()
    modality_names = sorted((dataset.modalities or {"tabular": None}).keys())

    def metric_bundle(assign_by_model: dict, fidelities: list[float]) -> dict:
        per_split_imp: dict[str, list[float]] = {mod: [] for mod in modality_names}
        d_list = []
        assignment_list = []
        for res in split_results:
            s = res["split"]
            test_rows = res["plan"].test
            model_imps = {mod: [] for mod in modality_names}
            for m in range(config.models_per_split):
                assign = assign_by_model[(s, m)]
                assignment_list.append(assign)
                d_list.append(mean_abs_difference(assign, actual_values, dataset.space))
                for mod in modality_names:
                    rm = res["rewards_test"][mod]
                    if dataset.revenue:
                        val = revenue_improvement(
                            rm, assign[test_rows], dataset.prices, dataset.y[test_rows], actual_idx[test_rows]
                        )
                    else:
                        val = improvement(
                            rm, assign[test_rows], actual_idx[test_rows], absolute=config.improvement_absolute
                        )
                    model_imps[mod].append(val)
            for mod in modality_names:
                per_split_imp[mod].append(float(np.mean(model_imps[mod])))
        bundle = {
            "improvement": {
                mod: {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "per_split": vals}
                for mod, vals in per_split_imp.items()
            },
            "mean_abs_difference": aggregate_difference(d_list),
            "coverage": coverage(assignment_list, dataset.space),
            "stability": stability(assignment_list, dataset.space),
        }
        if fidelities:
            bundle["fidelity"] = {"mean": float(np.mean(fidelities)), "std": float(np.std(fidelities))}
        return bundle

    methods_out = {}
    for name in config.methods:
        assign_by_model = {}
        fidelities = []
        for res in split_results:
            for m, payload in sorted(res["models"][name].items()):
                assign_by_model[(res["split"], m)] = payload["assignments"]
                if payload["fidelity"] is not None:
                    fidelities.append(payload["fidelity"])
        methods_out[name] = metric_bundle(assign_by_model, fidelities)

    # reference policies: seeded random, and the row-wise best of the
    # estimated rewards (train-side matrix on trainval rows, test-side on
    # test rows of the first declared modality)
    rng_assignments = {}
    oracle_assignments = {}
    primary = modality_names[0]
    for res in split_results:
        s = res["split"]
        plan = res["plan"]
        composite = np.empty((n, dataset.space.size))
        composite[plan.trainval] = res["rewards_tv_values"]
        composite[plan.test] = res["rewards_test"][primary].values
        if dataset.revenue:
            composite = composite * np.asarray(dataset.prices)[None, :]
            oracle = np.argmax(composite, axis=1)
        elif dataset.direction == "minimize":
            oracle = np.argmin(composite, axis=1)
        else:
            oracle = np.argmax(composite, axis=1)
        for m in range(config.models_per_split):
            rng = np.random.default_rng(derive_seed(config.base_seed, "random-policy", s, m))
            rng_assignments[(s, m)] = rng.integers(0, dataset.space.size, size=n)
            oracle_assignments[(s, m)] = oracle
    references = {
        "reference:random": metric_bundle(rng_assignments, []),
        "reference:oracle": metric_bundle(oracle_assignments, []),
    }

    external = {name: "external - not implemented" for name in EXTERNAL_PLACEHOLDERS}
    config_echo = {
        "n_splits": config.n_splits,
        "models_per_split": config.models_per_split,
        "base_seed": config.base_seed,
        "methods": list(config.methods),
        "estimator": config.estimator,
        "direction": dataset.direction,
        "revenue": dataset.revenue,
        "n_rows": n,
        "treatments": dataset.space.labels(),
    }
    return MetricReport(methods=methods_out, references=references, external=external, config=config_echo)
