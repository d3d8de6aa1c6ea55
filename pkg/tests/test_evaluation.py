import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pnnkit as pk
from pnnkit.errors import ConfigError, DataError
from pnnkit.evaluation import ExperimentConfig, aggregate_difference, run_experiment
from pnnkit.rewards import RewardMatrix

BINARY = pk.TreatmentSpace("binary", ("A", "B"), severity_ordered=True)
TRIPLE = pk.TreatmentSpace("multi-discrete", ("obs", "angio", "surgery"), severity_ordered=True)
FAST = {"n_trees": 40, "max_depth": 10, "min_leaf": 5}


def _rm(values, direction="minimize"):
    values = np.asarray(values, dtype=float)
    labels = [f"t{k}" for k in range(values.shape[1])]
    return RewardMatrix(values, direction, "direct", labels)


class TestRegressCompare:
    def test_planted_rule_recovered(self):
        rng = np.random.default_rng(0)
        n = 2000
        X = rng.uniform(0, 1, (n, 2))
        t = rng.integers(0, 2, n)
        best = (X[:, 0] > 0.5).astype(int)
        y = (t != best).astype(float)  # 1 when mistreated, minimize
        assign = pk.regress_compare(X, t, y, BINARY, "minimize", "binary",
                                    {"n_trees": 60, "max_depth": 12, "min_leaf": 5, "max_features": 3}, seed=1)
        assert np.mean(assign == best) >= 0.98

    def test_outcome_independent_of_treatment_ties_to_lowest(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 1, (300, 2))
        t = rng.integers(0, 2, 300)
        y = np.full(300, 2.0)  # constant: every leaf predicts 2.0 for either arm
        assign = pk.regress_compare(X, t, y, BINARY, "minimize", "continuous", FAST, seed=2)
        assert (assign == 0).all()

    def test_single_treatment_catalog(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 1, (100, 2))
        space = pk.TreatmentSpace("multi-discrete", ("only",))
        assign = pk.regress_compare(X, np.zeros(100, dtype=int), rng.uniform(0, 1, 100),
                                    space, "minimize", "continuous", FAST, seed=3)
        assert (assign == 0).all()

    def test_dose_catalog_scoring(self):
        rng = np.random.default_rng(3)
        n = 1500
        X = rng.uniform(0, 1, (n, 1))
        doses = rng.uniform(0, 1, n)
        y = -((doses - X[:, 0]) ** 2)
        grid = pk.TreatmentSpace("continuous", tuple((g,) for g in np.linspace(0, 1, 6)))
        assign = pk.regress_compare(X, doses, y, grid, "maximize", "continuous",
                                    {"n_trees": 60, "max_depth": 12, "min_leaf": 5, "max_features": 2}, seed=4)
        picked = grid.dose_matrix()[assign, 0]
        assert np.mean(np.abs(picked - X[:, 0]) <= 0.2) >= 0.9


class TestImprovement:
    def test_identity_policy_zero(self):
        rm = _rm([[1.0, 2.0], [3.0, 1.0]])
        actual = np.array([0, 1])
        assert pk.improvement(rm, actual, actual) == 0.0

    def test_hand_case_fifty_percent(self):
        rm = _rm([[1.0, 2.0], [3.0, 1.0]])
        value = pk.improvement(rm, np.array([0, 1]), np.array([0, 0]))
        assert value == 50.0

    def test_dominated_policy_negative(self):
        rm = _rm([[1.0, 2.0], [3.0, 1.0]])
        worst = np.argmax(rm.values, axis=1)
        best = np.argmin(rm.values, axis=1)
        assert pk.improvement(rm, worst, best) < 0

    def test_zero_denominator_errors(self):
        rm = _rm([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(DataError, match="zero"):
            pk.improvement(rm, np.array([1, 1]), np.array([0, 0]))

    def test_absolute_variant_uses_abs_gaps(self):
        rm = _rm([[1.0, 2.0], [3.0, 1.0]])
        signed = pk.improvement(rm, np.array([1, 0]), np.array([0, 1]))
        absolute = pk.improvement(rm, np.array([1, 0]), np.array([0, 1]), absolute=True)
        assert signed == -150.0
        assert absolute == 150.0

    def test_maximize_on_negated_matches_minimize_bitwise(self):
        rng = np.random.default_rng(4)
        vals = rng.uniform(0.5, 2.0, (50, 3))
        prescribed = rng.integers(0, 3, 50)
        actual = rng.integers(0, 3, 50)
        lo = pk.improvement(_rm(vals, "minimize"), prescribed, actual)
        hi = pk.improvement(_rm(-vals, "maximize"), prescribed, actual)
        assert lo == hi

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_oracle_dominance(self, seed):
        rng = np.random.default_rng(seed)
        vals = rng.normal(1.0, 0.3, (20, 4))
        rm = _rm(vals)
        actual = rng.integers(0, 4, 20)
        oracle = np.argmin(vals, axis=1)
        challenger = rng.integers(0, 4, 20)
        assert pk.improvement(rm, oracle, actual) >= pk.improvement(rm, challenger, actual)


class TestRevenueImprovement:
    def test_certain_buyer_takes_max_price(self):
        rm = _rm(np.ones((4, 2)), "maximize")
        prices = np.array([2.0, 5.0])
        prescribed = np.argmax(rm.values * prices, axis=1)
        assert (prescribed == 1).all()
        value = pk.revenue_improvement(rm, prescribed, prices, np.ones(4), np.zeros(4, dtype=int))
        assert value == pytest.approx(100 * (5.0 - 2.0) / 2.0)

    def test_price_probability_tie_takes_lowest_index(self):
        scores = np.array([[1.0, 0.4]])
        prices = np.array([2.0, 5.0])
        revenue = scores * prices  # 2.0 vs 2.0: exact tie
        assert np.argmax(revenue, axis=1)[0] == 0

    def test_identity_policy_zero(self):
        vals = np.array([[0.6, 0.2], [0.3, 0.8]])
        rm = _rm(vals, "maximize")
        actual = np.array([0, 1])
        y = vals[np.arange(2), actual]  # estimated equals observed
        assert pk.revenue_improvement(rm, actual, np.array([2.0, 3.0]), y, actual) == 0.0

    def test_zero_actual_revenue_errors(self):
        rm = _rm(np.ones((3, 2)), "maximize")
        with pytest.raises(DataError, match="revenue"):
            pk.revenue_improvement(rm, np.zeros(3, dtype=int), np.array([2.0, 3.0]),
                                   np.zeros(3), np.zeros(3, dtype=int))


class TestMeanAbsDifference:
    def test_binary_hand_case(self):
        d = pk.mean_abs_difference(np.array([1, 0, 1]), np.array([0, 0, 1]), BINARY)
        assert d == pytest.approx(1 / 3)

    def test_identical_zero(self):
        t = np.array([0, 1, 2])
        assert pk.mean_abs_difference(t, t, TRIPLE) == 0.0

    def test_dose_vectors_l1(self):
        space = pk.TreatmentSpace("multi-continuous", ((1.0, 0.0, 2.0), (0.0, 0.0, 1.0)))
        d = pk.mean_abs_difference(np.array([0]), np.array([[0.0, 0.0, 1.0]]), space)
        assert d == 2.0

    def test_multi_discrete_needs_severity_order(self):
        unordered = pk.TreatmentSpace("multi-discrete", ("a", "b", "c"))
        with pytest.raises(ConfigError, match="severity"):
            pk.mean_abs_difference(np.array([0]), np.array([1]), unordered)

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_metric_properties(self, data):
        n = data.draw(st.integers(1, 12))
        a = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)))
        b = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)))
        c = np.array(data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n)))
        d_ab = pk.mean_abs_difference(a, b, TRIPLE)
        d_ba = pk.mean_abs_difference(b, a, TRIPLE)
        assert d_ab == d_ba
        assert (d_ab == 0.0) == (a == b).all()
        assert pk.mean_abs_difference(a, c, TRIPLE) <= d_ab + pk.mean_abs_difference(b, c, TRIPLE) + 1e-12

    def test_aggregate_over_models(self):
        assert aggregate_difference([0.2, 0.4]) == pytest.approx(0.3)


class TestCoverage:
    def test_full_coverage(self):
        assigns = [np.array([0, 1, 2]), np.array([2, 1, 0])]
        assert pk.coverage(assigns, TRIPLE) == 100.0

    def test_two_of_three(self):
        assigns = [np.array([0, 1, 0]), np.array([1, 2, 2])]
        value = pk.coverage(assigns, TRIPLE)
        assert value == pytest.approx(100 * 2 / 3)
        assert round(value, 2) == 66.67

    def test_mixed_models(self):
        assigns = [np.array([0, 0]), np.array([0, 1])]
        assert pk.coverage(assigns, BINARY) == 75.0


class TestStability:
    def test_identical_models_zero(self):
        assigns = [np.array([0, 1, 0])] * 4
        assert pk.stability(assigns, BINARY) == 0.0

    def test_half_split_sample(self):
        assigns = [np.array([0]), np.array([0]), np.array([1]), np.array([1])]
        assert pk.stability(assigns, BINARY) == 0.5

    def test_dose_vector_per_drug_averaging(self):
        space = pk.TreatmentSpace("multi-continuous", ((0.0, 0.0, 0.0), (0.0, 1.0, 0.0)))
        assigns = [np.array([0]), np.array([1])]  # only drug 2 varies as (0, 1)
        assert pk.stability(assigns, space) == pytest.approx((0.0 + 0.5 + 0.0) / 3)


class TestSynthetic:
    def test_two_arm_oracle_and_propensity(self):
        data = pk.make_synthetic("two-arm-threshold", 200, 0.0, 0)
        hi = data.features.values[:, 0] > 0.5
        assert (data.oracle_idx == hi.astype(int)).all()
        mid = np.argmin(np.abs(data.features.values[:, 0] - 0.5))
        assert data.true_propensity[mid, 1] == pytest.approx(data.features.values[mid, 0])

    def test_dose_quadratic_oracle_nearest_grid(self):
        data = pk.make_synthetic("dose-quadratic", 100, 0.0, 1)
        grid = data.space.dose_matrix()[:, 0]
        nearest = np.argmin(np.abs(grid[None, :] - data.features.values[:, 0:1]), axis=1)
        assert (data.oracle_idx == nearest).all()

    def test_revenue_logit_prices(self):
        data = pk.make_synthetic("revenue-logit", 50, 0.0, 2)
        assert data.prices.tolist() == [2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
        assert data.revenue

    def test_deterministic(self):
        a = pk.make_synthetic("two-arm-threshold", 100, 0.1, 3)
        b = pk.make_synthetic("two-arm-threshold", 100, 0.1, 3)
        assert (a.y == b.y).all() and (a.t_idx == b.t_idx).all()

    def test_unknown_generator(self):
        with pytest.raises(ConfigError, match="unknown synthetic"):
            pk.make_synthetic("nope", 100)


SMALL = dict(
    learner_params={"n_trees": 25, "max_depth": 8, "min_leaf": 5},
    pnn={"max_epochs": 40, "patience": 5, "hidden": (16,)},
    distill_params={"passes": 3},
)


class TestRunExperiment:
    def test_degenerate_single_run(self):
        data = pk.make_synthetic("two-arm-threshold", 300, 0.1, 4)
        cfg = ExperimentConfig(n_splits=1, models_per_split=1, base_seed=1, methods=("pnn",), **SMALL)
        report = run_experiment(data, cfg)
        entry = report.methods["pnn"]
        imp = entry["improvement"]["tabular"]
        assert imp["std"] == 0.0
        assert imp["per_split"] == [imp["mean"]]

    def test_identical_methods_under_two_names(self):
        data = pk.make_synthetic("two-arm-threshold", 300, 0.1, 5)
        cfg = ExperimentConfig(
            n_splits=1, models_per_split=2, base_seed=2,
            methods=("regress-compare", "rc-again"),
            registry={"rc-again": "regress-compare"},
            **SMALL,
        )
        report = run_experiment(data, cfg)
        assert report.methods["regress-compare"] == report.methods["rc-again"]

    def test_pnn_beats_random_reference(self):
        data = pk.make_synthetic("two-arm-threshold", 600, 0.1, 6)
        cfg = ExperimentConfig(n_splits=2, models_per_split=1, base_seed=3, methods=("pnn",), **SMALL)
        report = run_experiment(data, cfg)
        pnn = report.methods["pnn"]["improvement"]["tabular"]["mean"]
        rand = report.references["reference:random"]["improvement"]["tabular"]["mean"]
        assert pnn > 0 and pnn >= rand

    def test_bit_reproducible(self):
        data = pk.make_synthetic("two-arm-threshold", 300, 0.1, 7)
        cfg = ExperimentConfig(n_splits=2, models_per_split=1, base_seed=4, methods=("pnn", "mirrored-tree"), **SMALL)
        r1 = run_experiment(data, cfg)
        r2 = run_experiment(data, cfg)
        assert r1.to_json() == r2.to_json()

    def test_external_placeholders_present(self):
        data = pk.make_synthetic("two-arm-threshold", 300, 0.1, 8)
        cfg = ExperimentConfig(n_splits=1, models_per_split=1, base_seed=5, methods=("pnn",), **SMALL)
        report = run_experiment(data, cfg)
        assert set(report.external) == {"causal-forest", "optimal-policy-tree"}
        text = report.to_text()
        assert "external - not implemented" in text

    def test_empty_methods_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(methods=())

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError, match="unknown method"):
            ExperimentConfig(methods=("gradient-boost",))
