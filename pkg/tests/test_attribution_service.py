# tests/test_attribution_service.py

import math
from itertools import permutations
from types import SimpleNamespace

import numpy as np
import pytest

from app.exception import AttributionBudgetError, InvalidInputError, NotFoundError
from app.learners.base import sigmoid
from app.services.attribution_service import (
    Attribution,
    AttributionConfig,
    AttributionMode,
    AttributionService,
    BackgroundSet,
    attributions_frame,
    bin_attributions,
    exact_shapley,
    explain_instances,
    global_summary,
    rank_features,
    sampled_shapley,
    select_instances,
    validate_bin_edges,
)
from app.services.indicator_service import FeatureMatrix
from app.utility import write_frame, write_json

WEIGHTS = np.array([0.5, -1.0, 2.0, 0.0])


def additive(X):
    return X @ WEIGHTS + 0.1


def interacting(X):
    return sigmoid(X[:, 0] * X[:, 1] + 0.5 * X[:, 2] - X[:, 3] ** 2)


def permutation_oracle(f, x, rows):
    """Average marginal contributions over every feature ordering."""
    m = len(x)

    def value(coalition):
        composite = rows.copy()
        composite[:, coalition] = x[coalition]
        return float(f(composite).mean())

    phi = np.zeros(m)
    for order in permutations(range(m)):
        coalition = []
        for i in order:
            before = value(coalition)
            coalition.append(i)
            phi[i] += value(coalition) - before
    return phi / math.factorial(m)


@pytest.fixture
def background():
    rng = np.random.default_rng(3)
    return BackgroundSet(rng.standard_normal((6, 4)))


@pytest.fixture
def instance():
    return np.array([1.2, -0.7, 0.4, 0.9])


def attribution(patent_id, output, phi, values) -> Attribution:
    return Attribution(
        patent_id=patent_id,
        base_value=0.5,
        phi=np.array(phi, dtype=float),
        model_output=output,
        values=np.array(values, dtype=float),
    )


class FakeValuationManager:

    def __init__(self, out_dir, cfg, seed=7):
        self.out_dir = out_dir
        self.config = SimpleNamespace(attribution=cfg, seed=seed)

    def stage_dir(self, stage, create=True):
        path = self.out_dir / stage
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def write_json(self, path, data):
        return write_json(path, data)

    def write_frame(self, path, frame):
        return write_frame(path, frame)


class TestExactShapley:

    def test_matches_permutation_oracle(self, background, instance):
        result = exact_shapley(interacting, instance, background)

        assert result.phi == pytest.approx(permutation_oracle(interacting, instance, background.rows), abs=1e-12)

    def test_efficiency(self, background, instance):
        result = exact_shapley(interacting, instance, background)

        assert result.efficiency_gap == pytest.approx(0.0, abs=1e-9)
        assert result.base_value == pytest.approx(float(interacting(background.rows).mean()))

    def test_additive_model(self, background, instance):
        result = exact_shapley(additive, instance, background)

        expected = WEIGHTS * (instance - background.rows.mean(axis=0))
        assert result.phi == pytest.approx(expected, abs=1e-12)

    def test_unused_feature_gets_zero(self, background, instance):
        def ignores_last(X):
            return sigmoid(X[:, 0] * X[:, 1] + X[:, 2])

        result = exact_shapley(ignores_last, instance, background)

        assert result.phi[3] == pytest.approx(0.0, abs=1e-15)

    def test_symmetric_features_share_credit(self):
        def product(X):
            return X[:, 0] * X[:, 1]

        background = BackgroundSet(np.array([[0.0, 0.0], [1.0, 1.0]]))

        result = exact_shapley(product, np.array([2.0, 2.0]), background)

        assert result.phi[0] == pytest.approx(result.phi[1])

    def test_constant_model(self, background, instance):
        result = exact_shapley(lambda X: np.full(len(X), 0.3), instance, background)

        assert result.phi == pytest.approx(np.zeros(4))
        assert result.base_value == pytest.approx(0.3)

    def test_accepts_model_objects(self, background, instance):
        model = SimpleNamespace(predict_proba=interacting)

        assert exact_shapley(model, instance, background).phi == pytest.approx(
            exact_shapley(interacting, instance, background).phi
        )

    def test_budget(self, background, instance):
        with pytest.raises(AttributionBudgetError, match="max_features=3"):
            exact_shapley(interacting, instance, background, max_features=3)

    def test_width_mismatch(self, background):
        with pytest.raises(InvalidInputError, match="3 features"):
            exact_shapley(interacting, np.zeros(3), background)


class TestSampledShapley:

    def test_additive_model_is_exact(self, background, instance):
        result = sampled_shapley(additive, instance, background, n_permutations=5, seed=1)

        expected = WEIGHTS * (instance - background.rows.mean(axis=0))
        assert result.phi == pytest.approx(expected, abs=1e-12)
        assert result.mode == AttributionMode.SAMPLED

    def test_efficiency_holds_per_sample(self, background, instance):
        result = sampled_shapley(interacting, instance, background, n_permutations=3, seed=2)

        assert result.efficiency_gap == pytest.approx(0.0, abs=1e-9)

    def test_converges_to_exact(self, background, instance):
        exact = exact_shapley(interacting, instance, background)

        sampled = sampled_shapley(interacting, instance, background, n_permutations=1500, seed=4)

        assert sampled.phi == pytest.approx(exact.phi, abs=0.05)

    def test_seeded(self, background, instance):
        first = sampled_shapley(interacting, instance, background, n_permutations=10, seed=9)
        second = sampled_shapley(interacting, instance, background, n_permutations=10, seed=9)

        assert first.phi.tolist() == second.phi.tolist()

    def test_single_feature(self):
        background = BackgroundSet(np.array([[0.0], [2.0]]))

        result = sampled_shapley(lambda X: 3.0 * X[:, 0], np.array([4.0]), background, 2, seed=0)

        assert result.phi.tolist() == pytest.approx([9.0])

    def test_needs_a_permutation(self, background, instance):
        with pytest.raises(InvalidInputError):
            sampled_shapley(additive, instance, background, n_permutations=0, seed=0)


class TestBackgroundSet:

    def test_small_pool_kept_whole(self):
        rows = np.arange(6.0).reshape(3, 2)

        assert BackgroundSet.sample(rows, 10, seed=0).rows.tolist() == rows.tolist()

    def test_subsample_keeps_row_order(self):
        rows = np.arange(40.0).reshape(20, 2)

        sample = BackgroundSet.sample(rows, 5, seed=3)

        assert sample.size == 5
        assert np.all(np.diff(sample.rows[:, 0]) > 0)
        assert set(sample.rows[:, 0]) <= set(rows[:, 0])

    def test_empty_pool(self):
        with pytest.raises(InvalidInputError):
            BackgroundSet.sample(np.empty((0, 2)), 5, seed=0)


class TestBins:

    def test_features_ranked_inside_each_bin(self):
        attributions = [
            attribution("A", 0.2, [0.5, -3.0], [1.0, 0.0]),
            attribution("B", 0.4, [1.5, 1.0], [3.0, 0.0]),
            attribution("C", 0.9, [2.0, 0.0], [1.0, 1.0]),
        ]

        low, high = bin_attributions(attributions, (0.0, 0.5, 1.0), ["sc", "cp"])

        assert low.count == 2
        assert low.ranked_names() == ["cp", "sc"]
        assert low.mean_phi.tolist() == pytest.approx([1.0, -1.0])
        assert low.correlation.tolist() == pytest.approx([1.0, 0.0])
        assert high.count == 1
        assert high.ranking == [0, 1]

    def test_bins_are_right_closed(self):
        attributions = [attribution("A", 0.2, [1.0], [0.0]), attribution("B", 0.0, [1.0], [0.0])]

        bins = bin_attributions(attributions)

        assert [b.count for b in bins] == [2, 0, 0, 0, 0]

    def test_empty_bins_are_reported(self):
        bins = bin_attributions([attribution("A", 0.95, [1.0, 2.0], [0.0, 0.0])])

        assert [b.empty for b in bins] == [True, True, True, True, False]
        assert bins[0].to_dict() == {"lower": 0.0, "upper": 0.2, "count": 0, "empty": True, "features": []}
        assert bins[4].to_dict()["features"][0]["feature"] == "x2"

    def test_no_attributions(self):
        assert all(b.empty for b in bin_attributions([]))

    @pytest.mark.parametrize("edges", [(0.0, 1.1), (0.1, 1.0), (0.0, 0.5, 0.5, 1.0), (0.0,), "abc"])
    def test_invalid_edges(self, edges):
        with pytest.raises(InvalidInputError):
            validate_bin_edges(edges)

    def test_rank_ties_by_index(self):
        assert rank_features(np.array([1.0, 3.0, 1.0, 0.5])) == [1, 0, 2, 3]


class TestGlobalSummary:

    @pytest.fixture
    def attributions(self):
        return [
            attribution("A", 0.2, [0.1, -2.0], [1.0, 5.0]),
            attribution("B", 0.6, [0.3, 1.0], [2.0, 4.0]),
            attribution("C", 0.9, [0.5, 0.0], [3.0, 3.0]),
        ]

    def test_ranking(self, attributions):
        summary = global_summary(attributions, ["sc", "cp"])

        assert summary.top(1) == ["cp"]
        assert summary.mean_abs_phi.tolist() == pytest.approx([0.3, 1.0])
        assert summary.correlation.tolist() == pytest.approx([1.0, np.corrcoef([5, 4, 3], [-2, 1, 0])[0, 1]])

    def test_points(self, attributions):
        points = global_summary(attributions, ["sc", "cp"]).points

        assert list(points.columns) == ["patent_id", "feature", "value", "value_percentile", "phi"]
        assert len(points) == 6
        sc = points[points["feature"] == "sc"]
        assert sc["value_percentile"].tolist() == pytest.approx([1 / 3, 2 / 3, 1.0])

    def test_dict_form(self, attributions):
        data = global_summary(attributions).to_dict()

        assert data["n_instances"] == 3
        assert [f["feature"] for f in data["features"]] == ["x2", "x1"]

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            global_summary([])

    def test_name_count(self, attributions):
        with pytest.raises(InvalidInputError):
            global_summary(attributions, ["only"])


class TestExplainInstances:

    @pytest.fixture
    def matrix(self):
        rng = np.random.default_rng(6)
        rows = rng.standard_normal((8, 4))
        return FeatureMatrix(
            patent_ids=[f"P{i}" for i in range(8)],
            rows=rows,
            labels=(rows[:, 0] > 0).astype(int),
            feature_names=["a", "b", "c", "d"],
        )

    def test_select_instances(self):
        assert select_instances(4, 10, seed=0).tolist() == [0, 1, 2, 3]
        picked = select_instances(50, 10, seed=0)
        assert len(set(picked.tolist())) == 10
        assert np.all(np.diff(picked) > 0)

    def test_exact_mode(self, matrix):
        cfg = AttributionConfig(mode="exact", background_size=3, max_instances=5)

        result = explain_instances(interacting, matrix, matrix.rows, cfg, seed=1)

        assert len(result) == 5
        assert [a.patent_id for a in result] == sorted(a.patent_id for a in result)
        assert all(a.efficiency_gap < 1e-9 for a in result)

    def test_sampled_mode_is_deterministic(self, matrix):
        cfg = AttributionConfig(n_permutations=4, background_size=3)

        first = explain_instances(interacting, matrix, matrix.rows, cfg, seed=2)
        second = explain_instances(interacting, matrix, matrix.rows, cfg, seed=2)

        assert [a.phi.tolist() for a in first] == [a.phi.tolist() for a in second]

    def test_exact_over_budget(self, matrix):
        cfg = AttributionConfig(mode="exact", max_features=3)

        with pytest.raises(AttributionBudgetError, match="sampled"):
            explain_instances(interacting, matrix, matrix.rows, cfg, seed=1)

    def test_frame(self, matrix):
        cfg = AttributionConfig(mode="exact", background_size=2, max_instances=2)
        result = explain_instances(interacting, matrix, matrix.rows, cfg, seed=1)

        frame = attributions_frame(result, matrix.feature_names)

        assert list(frame.columns) == [
            "patent_id", "confidence", "base_value", "model_output", "phi_a", "phi_b", "phi_c", "phi_d",
        ]

    @pytest.mark.parametrize("field, value", [("n_permutations", 0), ("mode", "kernel"), ("bin_edges", (0.2, 1.0))])
    def test_invalid_config(self, field, value):
        with pytest.raises(InvalidInputError):
            AttributionConfig(**{field: value})


class TestAttributionService:

    @pytest.fixture
    def matrix(self):
        rng = np.random.default_rng(12)
        rows = rng.standard_normal((6, 3))
        return FeatureMatrix(
            patent_ids=["P1", "P2", "P3", "P4", "P5", "P6"],
            rows=rows,
            labels=[1, 0, 1, 0, 1, 0],
            feature_names=["a", "b", "c"],
        )

    def test_background_rows_follow_training_ids(self, tmp_path, matrix):
        service = AttributionService(FakeValuationManager(tmp_path, AttributionConfig()))

        rows = service.background_rows(matrix, ["P3", "P1"])

        assert rows.tolist() == [matrix.rows[2].tolist(), matrix.rows[0].tolist()]

    def test_unknown_training_id(self, tmp_path, matrix):
        service = AttributionService(FakeValuationManager(tmp_path, AttributionConfig()))

        with pytest.raises(NotFoundError, match="P9"):
            service.background_rows(matrix, ["P1", "P9"])

    def test_explain_and_emit(self, tmp_path, matrix):
        cfg = AttributionConfig(mode="exact", bin_edges=(0.0, 0.5, 1.0))
        service = AttributionService(FakeValuationManager(tmp_path, cfg))

        def model(X):
            return sigmoid(X[:, 0] - X[:, 2])

        attributions, summary, bins = service.explain(model, matrix, ["P1", "P2", "P3"])
        service.emit(attributions, summary, bins, matrix.feature_names)

        assert len(attributions) == 6
        assert sum(b.count for b in bins) == 6
        assert service.load_global_summary()["n_instances"] == 6
        assert [b["upper"] for b in service.load_bins()] == [0.5, 1.0]
        assert (tmp_path / "explain" / "attributions.csv").exists()

    def test_bins_missing(self, tmp_path):
        service = AttributionService(FakeValuationManager(tmp_path, AttributionConfig()))

        with pytest.raises(NotFoundError):
            service.load_bins()
