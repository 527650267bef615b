# tests/test_learners.py

import json

import numpy as np
import pytest

from app.exception import InvalidInputError, ModelConfigError
from app.learners import dump_model, load_model, read_model, save_model, train_model
from app.learners.base import ModelFamily, ModelSpec, sigmoid
from app.learners.boosting import base_log_odds
from app.learners.logistic import logistic_loss_and_gradient, logistic_model_from_coefficients
from app.learners.mlp import PARAM_NAMES, init_mlp_params, mlp_loss_and_gradients
from app.learners.scaler import fit_scaler
from app.learners.tree import best_gini_split, build_classification_tree, leaf_weight, soft_threshold

SMALL_SPECS = {
    "LR": {"epochs": 200},
    "RF": {"n_trees": 10, "max_depth": 4},
    "NN": {"hidden_nodes": 8, "epochs": 100, "learning_rate": 0.05},
    "XGB": {"n_estimators": 20, "max_depth": 2},
}


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    return X, y


def numeric_gradient(f, value, eps=1e-6):
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        original = value[index]
        value[index] = original + eps
        up = f()
        value[index] = original - eps
        down = f()
        value[index] = original
        grad[index] = (up - down) / (2 * eps)
    return grad


class TestModelSpec:

    def test_defaults_filled(self):
        spec = ModelSpec.create("rf", {"n_trees": 5}, seed=3, name="RF #1")

        assert spec.family == ModelFamily.RF
        assert spec.hyperparameters["n_trees"] == 5
        assert spec.hyperparameters["features_per_split"] == "sqrt"
        assert spec.name == "RF #1"

    def test_name_defaults_to_family(self):
        assert ModelSpec.create("XGB").name == "XGB"

    @pytest.mark.parametrize(
        "family, hyperparameters",
        [
            ("LR", {"alpha": 1.5}),
            ("LR", {"epochs": True}),
            ("RF", {"max_depth": 0}),
            ("RF", {"features_per_split": "half"}),
            ("NN", {"dropout": 1.0}),
            ("XGB", {"learning_rate": 0}),
            ("XGB", {"depth": 3}),
        ],
    )
    def test_invalid_hyperparameters(self, family, hyperparameters):
        with pytest.raises(ModelConfigError):
            ModelSpec.create(family, hyperparameters)

    def test_unknown_family(self):
        with pytest.raises(ModelConfigError, match="not a model family"):
            ModelSpec.create("SVM")

    def test_dict_form(self):
        spec = ModelSpec.create("NN", {"hidden_nodes": 4}, seed=9, name="NN #2")

        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestNumerics:

    def test_sigmoid_is_stable(self):
        values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))

        assert values.tolist() == [0.0, 0.5, 1.0]

    def test_soft_threshold(self):
        assert soft_threshold(np.array([-2.0, 0.5, 3.0]), 1.0).tolist() == [-1.0, 0.0, 2.0]

    def test_leaf_weight(self):
        assert leaf_weight(-4.0, 1.0, 0.0, 1.0) == pytest.approx(2.0)
        assert leaf_weight(1.0, 0.0, 0.0, 0.0) == 0.0

    def test_base_log_odds(self):
        assert base_log_odds(np.array([1, 1, 1, 0])) == pytest.approx(np.log(3.0))

    def test_scaler_constant_column(self):
        X = np.array([[1.0, 5.0], [3.0, 5.0]])
        scaler = fit_scaler(X)

        assert scaler.transform(X).tolist() == [[-1.0, 5.0], [1.0, 5.0]]

    def test_scaler_empty(self):
        with pytest.raises(InvalidInputError):
            fit_scaler(np.empty((0, 2)))


class TestGradients:

    def test_logistic_gradient(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((12, 3))
        y = (rng.random(12) < 0.5).astype(float)
        w, b = rng.standard_normal(3), 0.2

        _, grad_w, grad_b = logistic_loss_and_gradient(w, b, X, y, l2=0.3)
        numeric_w = numeric_gradient(lambda: logistic_loss_and_gradient(w, b, X, y, 0.3)[0], w)
        numeric_b = (
            logistic_loss_and_gradient(w, b + 1e-6, X, y, 0.3)[0]
            - logistic_loss_and_gradient(w, b - 1e-6, X, y, 0.3)[0]
        ) / 2e-6

        assert grad_w == pytest.approx(numeric_w, rel=1e-4, abs=1e-7)
        assert grad_b == pytest.approx(numeric_b, rel=1e-4, abs=1e-7)

    def test_mlp_gradients(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((10, 3))
        y = (rng.random(10) < 0.5).astype(float)
        params = init_mlp_params(3, 4, rng)

        _, grads = mlp_loss_and_gradients(params, X, y)

        for name in PARAM_NAMES:
            numeric = numeric_gradient(lambda: mlp_loss_and_gradients(params, X, y)[0], params[name])
            assert np.ravel(grads[name]) == pytest.approx(np.ravel(numeric), rel=1e-4, abs=1e-7), name


class TestTrees:

    @pytest.fixture
    def xor(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        return X, y

    def test_zero_gain_split_is_taken(self, xor):
        X, y = xor

        assert best_gini_split(X, y, np.arange(4), range(2)) == (0, 0.5)

    def test_xor_is_learned(self, xor):
        X, y = xor

        tree = build_classification_tree(X, y, max_depth=2)

        assert tree.predict(X).tolist() == [0.0, 1.0, 1.0, 0.0]
        assert tree.depth() == 2

    def test_forest_without_bootstrap_learns_xor(self, xor):
        X, y = xor
        spec = ModelSpec.create(
            "RF", {"n_trees": 3, "max_depth": 2, "features_per_split": "all", "bootstrap": False}
        )

        model = train_model(spec, X, y)

        assert model.predict_proba(X).tolist() == [0.0, 1.0, 1.0, 0.0]

    def test_max_depth_one_gives_stump(self, data):
        X, y = data

        tree = build_classification_tree(X, y.astype(float), max_depth=1)

        assert tree.n_leaves == 2

    def test_tree_dict_form(self, xor):
        X, y = xor
        tree = build_classification_tree(X, y, max_depth=2)

        restored = type(tree).from_dict(json.loads(json.dumps(tree.to_dict())))

        assert restored.predict(X).tolist() == tree.predict(X).tolist()


class TestTraining:

    @pytest.mark.parametrize("family", ["LR", "RF", "NN", "XGB"])
    def test_learns_linear_signal(self, data, family):
        X, y = data
        model = train_model(ModelSpec.create(family, SMALL_SPECS[family], seed=4), X, y)

        accuracy = np.mean(model.predict(X) == y)

        assert accuracy >= 0.85
        assert ((model.predict_proba(X) >= 0) & (model.predict_proba(X) <= 1)).all()

    def test_logistic_objective_nonincreasing(self, data):
        X, y = data
        spec = ModelSpec.create("LR", {"alpha": 0.5, "lambda": 0.01, "epochs": 50})

        trace = train_model(spec, X, y).metadata["loss_trace"]

        assert np.all(np.diff(trace) <= 1e-12)

    def test_strong_lasso_zeroes_weights(self, data):
        X, y = data
        spec = ModelSpec.create("LR", {"alpha": 1.0, "lambda": 10.0, "epochs": 20})

        model = train_model(spec, X, y)

        assert np.all(model.coef == 0.0)

    def test_logistic_needs_both_classes(self, data):
        X, _ = data

        with pytest.raises(InvalidInputError, match="both classes"):
            train_model(ModelSpec.create("LR"), X, np.ones(len(X)))

    def test_raw_coefficients_reproduce_scores(self, data):
        X, y = data
        model = train_model(ModelSpec.create("LR", {"epochs": 30}), X, y)

        weights, intercept = model.raw_coefficients()

        assert sigmoid(X @ weights + intercept) == pytest.approx(model.predict_proba(X))

    def test_model_from_coefficients(self):
        model = logistic_model_from_coefficients(np.array([1.0, -1.0]), 0.0)

        assert model.predict_proba(np.array([[2.0, 2.0]])) == pytest.approx([0.5])

    def test_boosting_loss_nonincreasing(self, data):
        X, y = data
        spec = ModelSpec.create("XGB", {"n_estimators": 15, "max_depth": 3, "learning_rate": 1.0})

        model = train_model(spec, X, y)
        trace = model.metadata["loss_trace"]

        assert np.all(np.diff(trace) <= 0.0)
        assert model.metadata["stages"] + len(model.metadata["dropped_stages"]) == 15

    @pytest.mark.parametrize("family", ["RF", "NN"])
    def test_seeded_training_is_deterministic(self, data, family):
        X, y = data
        spec = ModelSpec.create(family, SMALL_SPECS[family], seed=21)

        first = train_model(spec, X, y).predict_proba(X)
        second = train_model(spec, X, y).predict_proba(X)

        assert first.tolist() == second.tolist()

    def test_width_mismatch(self, data):
        X, y = data
        model = train_model(ModelSpec.create("XGB", SMALL_SPECS["XGB"]), X, y)

        with pytest.raises(InvalidInputError, match="expects 3 features"):
            model.predict_proba(X[:, :2])


class TestSerialization:

    @pytest.mark.parametrize("family", ["LR", "RF", "NN", "XGB"])
    def test_saved_model_predicts_the_same(self, data, family, tmp_path):
        X, y = data
        model = train_model(ModelSpec.create(family, SMALL_SPECS[family], seed=2), X, y)

        restored = read_model(save_model(model, tmp_path / "model.json"))

        assert restored.family == model.family
        assert restored.predict_proba(X) == pytest.approx(model.predict_proba(X), abs=1e-12)

    def test_dump_is_self_describing(self, data):
        X, y = data
        dumped = dump_model(train_model(ModelSpec.create("LR", {"epochs": 5}), X, y))

        assert dumped["family"] == "LR"
        assert dumped["n_features"] == 3
        assert set(dumped["scaler"]) == {"mean", "scale"}

    def test_not_a_model(self):
        with pytest.raises(InvalidInputError, match="Not a serialized model"):
            load_model({"family": "LR"})
