"""Command-line entry point tying the pipeline stages together.

Subcommands: estimate-rewards, train-pnn, distill, run-experiment,
extract-embeddings. One JSON run config describes the dataset, treatment
catalog, objective, estimator, network, and experiment; CLI flags override
the seed, output directory, methods, and synthetic source. All randomness
derives from a single base seed, so rerunning a command with the same
config produces byte-identical artifacts.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data_pipeline as dp
from .distill import distill as fit_mirror, export_tree, fidelity
from .errors import ConfigError, DataError, NumericalError, ToolkitError
from .evaluation import ExperimentConfig, run_experiment
from .network import (
    default_config,
    model_from_json,
    model_to_json,
    prescribe,
    trace_to_csv,
    train,
)
from .rewards import RewardMatrix, TreatmentSpace, doubly_robust, estimate_continuous, estimate_direct, estimate_propensity
from .seeding import derive_seed
from .synthetic import Dataset, make_synthetic


# ---------------------------------------------------------------------------
# Run config
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    base_seed: int
    output_dir: str
    raw: dict

    @property
    def has_synthetic(self) -> bool:
        return "synthetic" in self.raw

    def experiment_config(self, methods=None) -> ExperimentConfig:
        exp = dict(self.raw.get("experiment", {}))
        est = self.raw.get("estimator", {})
        kwargs = {
            "n_splits": exp.get("n_splits", 5),
            "models_per_split": exp.get("models_per_split", 5),
            "base_seed": self.base_seed,
            "methods": tuple(methods or exp.get("methods", ("pnn", "mirrored-tree", "regress-compare"))),
            "estimator": est.get("method", "doubly-robust"),
            "propensity_floor": est.get("propensity_floor", 0.01),
            "min_per_treatment": est.get("min_per_treatment", 20),
            "pnn": dict(self.raw.get("pnn", {})),
            "distill_params": dict(self.raw.get("distill", {})),
            "improvement_absolute": bool(exp.get("improvement_absolute", False)),
            "registry": dict(exp.get("registry", {})),
        }
        if "forest" in est:
            kwargs["learner_params"] = dict(est["forest"])
        return ExperimentConfig(**kwargs)


def load_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    if path is None:
        raw: dict = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if getattr(overrides, "synthetic", None):
        raw["synthetic"] = {
            "name": overrides.synthetic,
            "n": overrides.n or raw.get("synthetic", {}).get("n", 4000),
            "noise": overrides.noise if overrides.noise is not None else raw.get("synthetic", {}).get("noise", 0.1),
        }
    if "table" not in raw and "synthetic" not in raw:
        raise ConfigError("config must declare either a 'table' or a 'synthetic' source")
    if "table" in raw:
        for key in ("roles", "treatment_space", "objective", "outcome_kind"):
            if key not in raw:
                raise ConfigError(f"config missing required key {key!r}")
        for ref in [raw["table"]] + [e["path"] for e in raw.get("embeddings", [])]:
            if not Path(ref).exists():
                raise ConfigError(f"referenced file not found: {ref}")
    base_seed = overrides.seed if overrides.seed is not None else raw.get("base_seed", 0)
    out_dir = overrides.out or raw.get("output_dir", "out")
    return RunConfig(base_seed=int(base_seed), output_dir=out_dir, raw=raw)


def _parse_space(obj: dict) -> TreatmentSpace:
    try:
        return TreatmentSpace(
            kind=obj["kind"],
            catalog=tuple(obj["catalog"]),
            severity_ordered=bool(obj.get("severity_ordered", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"treatment_space missing key {exc}") from None


def _parse_objective(obj: dict, space: TreatmentSpace):
    direction = obj.get("direction")
    if direction == "revenue":
        prices_map = obj.get("prices")
        if prices_map is None:
            raise ConfigError("revenue objective requires a 'prices' map")
        labels = space.labels()
        try:
            prices = np.array([float(prices_map[l]) for l in labels])
        except KeyError as exc:
            raise ConfigError(f"price missing for treatment {exc}") from None
        return "maximize", prices, True
    if direction not in ("minimize", "maximize"):
        raise ConfigError(f"objective.direction must be minimize | maximize | revenue, got {direction!r}")
    return direction, None, False


def _renormalize(raw_fm: dp.FeatureMatrix, schema: dp.FeatureSchema) -> dp.FeatureMatrix:
    """Rebuild the normalized view from (possibly imputed) raw values."""
    values = raw_fm.values.copy()
    for j, label in enumerate(raw_fm.columns):
        if raw_fm.kinds[j] != "numeric" or label not in schema.numeric_stats:
            continue
        stats = schema.numeric_stats[label]
        if stats.degenerate:
            values[:, j] = np.where(np.isnan(values[:, j]), np.nan, 0.0)
        else:
            values[:, j] = (values[:, j] - stats.vmin) / (stats.vmax - stats.vmin)
    return dp.FeatureMatrix(values, list(raw_fm.columns), list(raw_fm.kinds), [False] * len(raw_fm.columns))


def build_dataset(cfg: RunConfig) -> Dataset:
    """Assemble the model-ready dataset from the run config."""
    raw_cfg = cfg.raw
    if cfg.has_synthetic:
        syn = raw_cfg["synthetic"]
        return make_synthetic(syn["name"], int(syn["n"]), float(syn.get("noise", 0.1)), cfg.base_seed)

    table = dp.RawTable.from_csv(raw_cfg["table"])
    space = _parse_space(raw_cfg["treatment_space"])
    direction, prices, revenue = _parse_objective(raw_cfg["objective"], space)
    outcome_kind = raw_cfg["outcome_kind"]
    if outcome_kind not in ("binary", "continuous"):
        raise ConfigError(f"outcome_kind must be binary | continuous, got {outcome_kind!r}")

    # schema is fit on the training rows of the base split so test rows never
    # leak into normalization stats
    plan = dp.make_split(table.n_rows, derive_seed(cfg.base_seed, "split", 0))
    schema = dp.fit_schema(table, raw_cfg["roles"], plan.trainval)
    raw_view = dp.transform_raw(table, schema)
    norm_view = dp.transform(table, schema)

    impute_cfg = raw_cfg.get("impute")
    if np.isnan(raw_view.values).any():
        if impute_cfg is None:
            raise DataError("table has missing cells; add an 'impute' block with neighbor count k")
        raw_view = dp.impute_missing(raw_view, int(impute_cfg.get("k", 5)), distance_values=norm_view.values)
        norm_view = _renormalize(raw_view, schema)

    modalities: dict[str, list[int]] = {"tabular": list(range(len(norm_view.columns)))}
    extras = []
    for emb_cfg in raw_cfg.get("embeddings", []):
        emb = dp.EmbeddingMatrix.from_csv(emb_cfg["path"], emb_cfg["modality"])
        if emb.n_rows != table.n_rows:
            raise DataError(
                f"modality '{emb.modality}': {emb.n_rows} rows, table has {table.n_rows}"
            )
        if "pca_dim" in emb_cfg:
            fit_rows = plan.trainval if emb_cfg.get("pca_on_train_only", True) else np.arange(table.n_rows)
            pca = dp.fit_pca(emb.values[fit_rows], int(emb_cfg["pca_dim"]))
            emb = dp.project(emb, pca)
        extras.append(emb)
    if extras:
        start = len(norm_view.columns)
        norm_view = dp.concat_modalities(norm_view, extras)
        raw_view = dp.concat_modalities(raw_view, extras)
        modalities["tabular+" + "+".join(e.modality for e in extras)] = list(range(len(norm_view.columns)))

    y = np.array([dp._parse_numeric(v, schema.outcome_column, i) for i, v in enumerate(table.columns[schema.outcome_column])])
    if np.isnan(y).any():
        raise DataError(f"outcome column '{schema.outcome_column}' has missing values")
    if outcome_kind == "binary" and not np.isin(y, (0.0, 1.0)).all():
        raise DataError("binary outcome column must contain only 0 and 1")

    t_idx = None
    doses = None
    if space.is_continuous:
        cols = schema.treatment_columns
        if len(cols) != space.dose_dim:
            raise ConfigError(
                f"{len(cols)} treatment columns declared but dose vectors have dimension {space.dose_dim}"
            )
        doses = np.column_stack(
            [[dp._parse_numeric(v, c, i) for i, v in enumerate(table.columns[c])] for c in cols]
        )
        if np.isnan(doses).any():
            raise DataError("treatment dose columns have missing values")
    else:
        if len(schema.treatment_columns) != 1:
            raise ConfigError("discrete treatment spaces need exactly one treatment column")
        col = schema.treatment_columns[0]
        labels = space.labels()
        t_idx = np.empty(table.n_rows, dtype=int)
        for i, v in enumerate(table.columns[col]):
            v = str(v) if v is not None else None
            if v not in labels:
                raise DataError(f"treatment column '{col}' row {i}: value {v!r} not in catalog {labels}")
            t_idx[i] = labels.index(v)

    return Dataset(
        features=norm_view,
        raw=raw_view,
        space=space,
        y=y,
        direction=direction,
        outcome_kind=outcome_kind,
        t_idx=t_idx,
        doses=doses,
        prices=prices,
        revenue=revenue,
        modalities=modalities,
    )


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------

def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _split_to_json(plan: dp.SplitPlan) -> str:
    return json.dumps(
        {
            "seed": plan.seed,
            "train": plan.train.tolist(),
            "validation": plan.validation.tolist(),
            "test": plan.test.tolist(),
        },
        sort_keys=True,
    )


def _split_from_json(text: str) -> dp.SplitPlan:
    obj = json.loads(text)
    return dp.SplitPlan(
        seed=obj["seed"],
        train=np.array(obj["train"], dtype=int),
        validation=np.array(obj["validation"], dtype=int),
        test=np.array(obj["test"], dtype=int),
    )


def _estimate_side(dataset: Dataset, rows: np.ndarray, cfg: RunConfig, side: str):
    """Direct (and doubly-robust, when configured) rewards for one side."""
    est = cfg.raw.get("estimator", {})
    method = est.get("method", "doubly-robust")
    learner = est.get("forest", {"n_trees": 100, "max_depth": 12, "min_leaf": 5})
    seed = derive_seed(cfg.base_seed, f"rewards-{side}", 0)
    X = dataset.features.values[rows]
    y = dataset.y[rows]
    if dataset.space.is_continuous:
        direct, _ = estimate_continuous(
            X, np.asarray(dataset.doses)[rows], y, dataset.space, dataset.direction,
            outcome_kind=dataset.outcome_kind, learner_params=learner, seed=seed,
        )
        return direct, None, None
    t = dataset.t_idx[rows]
    direct, _ = estimate_direct(
        X, t, y, dataset.space, dataset.direction,
        outcome_kind=dataset.outcome_kind, learner_params=learner,
        min_per_treatment=est.get("min_per_treatment", 20), seed=seed,
    )
    if method != "doubly-robust":
        return direct, None, None
    prop = estimate_propensity(
        X, t, dataset.space, learner, est.get("propensity_floor", 0.01),
        seed=derive_seed(seed, "propensity"),
    )
    return doubly_robust(direct, prop, t, y), direct, prop


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_estimate_rewards(args) -> int:
    cfg = load_config(args.config, args)
    dataset = build_dataset(cfg)
    out = Path(cfg.output_dir)
    plan = dp.make_split(dataset.n_rows, derive_seed(cfg.base_seed, "split", 0))
    artifacts = {}
    for side, rows in (("train", plan.trainval), ("test", plan.test)):
        final, direct, prop = _estimate_side(dataset, rows, cfg, side)
        _write(out / f"rewards_{side}.csv", final.to_csv())
        artifacts[f"rewards_{side}"] = f"rewards_{side}.csv"
        if direct is not None:
            _write(out / f"direct_{side}.csv", direct.to_csv())
            _write(out / f"propensity_{side}.csv", prop.to_csv())
            artifacts[f"direct_{side}"] = f"direct_{side}.csv"
            artifacts[f"propensity_{side}"] = f"propensity_{side}.csv"
    _write(out / "split.json", _split_to_json(plan))
    est = cfg.raw.get("estimator", {})
    manifest = {
        "seed": cfg.base_seed,
        "estimator": "continuous-grid" if dataset.space.is_continuous else est.get("method", "doubly-robust"),
        "modality": "tabular" if len(dataset.modalities) <= 1 else sorted(dataset.modalities)[-1],
        "direction": dataset.direction,
        "catalog": dataset.space.labels(),
        "artifacts": artifacts,
    }
    _write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2))
    print(f"rewards written to {out}")
    return 0


def cmd_train_pnn(args) -> int:
    cfg = load_config(args.config, args)
    dataset = build_dataset(cfg)
    rewards_dir = Path(args.rewards)
    if not rewards_dir.exists():
        raise ConfigError(f"rewards directory not found: {rewards_dir}")
    plan = _split_from_json((rewards_dir / "split.json").read_text(encoding="utf-8"))
    manifest = json.loads((rewards_dir / "manifest.json").read_text(encoding="utf-8"))
    rm = RewardMatrix.from_csv(
        (rewards_dir / "rewards_train.csv").read_text(encoding="utf-8"),
        direction=manifest["direction"],
        estimator=manifest["estimator"],
    )
    tv = plan.trainval
    gamma = rm.values
    direction = dataset.direction
    if dataset.revenue:
        gamma = gamma * dataset.prices[None, :]
        direction = "maximize"
    overrides = {k: v for k, v in cfg.raw.get("pnn", {}).items() if k not in ("seed", "direction")}
    net_cfg = default_config(
        dataset.features.values.shape[1],
        seed=derive_seed(cfg.base_seed, "model", 0, 0),
        direction=direction,
        **overrides,
    )
    n_train = plan.train.size
    local = dp.SplitPlan(
        seed=plan.seed,
        train=np.arange(n_train),
        validation=n_train + np.arange(plan.validation.size),
        test=np.arange(0),
    )
    model, trace = train(dataset.features.values[tv], gamma, local, net_cfg)
    out = Path(cfg.output_dir)
    _write(out / "model.json", model_to_json(model))
    _write(out / "trace.csv", trace_to_csv(trace))
    summary = {
        "best_epoch": trace.best_epoch,
        "best_val_loss": trace.best_val_loss,
        "stopped_epoch": trace.stopped_epoch,
    }
    _write(out / "training_summary.json", json.dumps(summary, sort_keys=True, indent=2))
    print(f"model written to {out} (best epoch {trace.best_epoch}, val loss {trace.best_val_loss:.6f})")
    return 0


def cmd_distill(args) -> int:
    cfg = load_config(args.config, args)
    dataset = build_dataset(cfg)
    model_path = Path(args.model)
    if not model_path.exists():
        raise ConfigError(f"model file not found: {model_path}")
    model = model_from_json(model_path.read_text(encoding="utf-8"))
    plan = dp.make_split(dataset.n_rows, derive_seed(cfg.base_seed, "split", 0))
    tv = plan.trainval
    assign, _ = prescribe(model, dataset.features.values[tv])
    params = {"max_depth": 7, "min_leaf": 1, "alpha": 0.0, "passes": 30}
    params.update(cfg.raw.get("distill", {}))
    tree = fit_mirror(
        dataset.raw.values[tv],
        assign,
        dataset.space.size,
        feature_names=dataset.raw.columns,
        class_labels=dataset.space.labels(),
        seed=derive_seed(cfg.base_seed, "distill", 0, 0),
        **params,
    )
    out = Path(cfg.output_dir)
    _write(out / "tree.dot", export_tree(tree, "dot"))
    _write(out / "tree.json", export_tree(tree, "json"))
    report = {
        "fidelity_train": tree.fidelity_train,
        "depth": tree.depth,
        "max_depth": tree.max_depth,
        "moves_accepted": tree.moves_accepted,
        "passes_run": tree.passes_run,
    }
    _write(out / "fidelity.json", json.dumps(report, sort_keys=True, indent=2))
    print(f"mirrored tree written to {out} (fidelity {tree.fidelity_train:.4f}, depth {tree.depth})")
    return 0


def cmd_run_experiment(args) -> int:
    cfg = load_config(args.config, args)
    dataset = build_dataset(cfg)
    methods = tuple(args.methods.split(",")) if args.methods else None
    exp_cfg = cfg.experiment_config(methods=methods)
    report = run_experiment(dataset, exp_cfg, jobs=max(1, args.jobs))
    out = Path(cfg.output_dir)
    _write(out / "report.json", report.to_json())
    _write(out / "report.txt", report.to_text())
    print(report.to_text())
    print(f"report written to {out}")
    return 0


def cmd_extract_embeddings(args) -> int:
    # generation is the extractor component's job; this side only validates
    # that a produced file lines up with the table
    table = dp.RawTable.from_csv(args.table)
    emb = dp.EmbeddingMatrix.from_csv(args.file, args.modality)
    if emb.n_rows != table.n_rows:
        raise DataError(
            f"modality '{args.modality}': embedding file has {emb.n_rows} rows, table has {table.n_rows}"
        )
    print(f"ok: modality '{args.modality}' shape {emb.n_rows}x{emb.values.shape[1]}")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pnnkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run config JSON")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")

    p = sub.add_parser("estimate-rewards", help="estimate reward and propensity matrices")
    common(p)
    p.set_defaults(fn=cmd_estimate_rewards)

    p = sub.add_parser("train-pnn", help="train the policy network on estimated rewards")
    common(p)
    p.add_argument("--rewards", required=True, help="output directory of estimate-rewards")
    p.set_defaults(fn=cmd_train_pnn)

    p = sub.add_parser("distill", help="mirror a trained network with a classification tree")
    common(p)
    p.add_argument("--model", required=True, help="model.json from train-pnn")
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("run-experiment", help="run the multi-split evaluation protocol")
    common(p, config_required=False)
    p.add_argument("--jobs", type=int, default=1, help="parallel split workers")
    p.add_argument("--methods", default=None, help="comma-separated method subset")
    p.add_argument("--synthetic", default=None, help="synthetic generator name")
    p.add_argument("--n", type=int, default=None, help="synthetic sample count")
    p.add_argument("--noise", type=float, default=None, help="synthetic noise level")
    p.set_defaults(fn=cmd_run_experiment)

    p = sub.add_parser("extract-embeddings", help="validate an embedding file against a table")
    p.add_argument("--table", required=True, help="main table CSV")
    p.add_argument("--file", required=True, help="embedding CSV to validate")
    p.add_argument("--modality", required=True, help="modality name")
    p.set_defaults(fn=cmd_extract_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr in ("config", "out", "seed", "synthetic", "n", "noise", "methods"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
