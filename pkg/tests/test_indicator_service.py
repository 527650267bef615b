# tests/test_indicator_service.py

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.exception import IndicatorError, InvalidInputError, NotFoundError
from app.models import IpcLevel, LabelPolicy, PatentRecord
from app.services.corpus_service import build_index, parse_corpus
from app.services.indicator_service import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureMatrix,
    FieldConfig,
    compute_all,
    compute_tech_environment,
    feature_names,
    technology_breadth,
)

DATA_DIR = Path(__file__).parent / "data"


def record(patent_id="R1", filing="2001-01-01", citations=(), ipcs=("H01L21/02",)) -> PatentRecord:
    return PatentRecord.from_dict(
        {
            "patent_id": patent_id,
            "filing_date": filing,
            "grant_date": "2002-01-01",
            "ipcs": list(ipcs),
            "backward_citations": list(citations),
            "lifetime_years": 4,
        }
    )


@pytest.fixture(scope="module")
def golden_records():
    return parse_corpus(DATA_DIR / "golden_corpus.jsonl", "jsonl").records


@pytest.fixture(scope="module")
def golden_matrix(golden_records):
    return compute_all(golden_records, build_index(golden_records), FieldConfig())


class TestFeatureNames:

    def test_fifty_unique_names(self):
        names = feature_names()

        assert len(names) == N_FEATURES == 50
        assert len(set(names)) == 50

    def test_category_boundaries(self):
        assert FEATURE_NAMES[0] == "SC_1"
        assert FEATURE_NAMES[7] == "PR_1"
        assert FEATURE_NAMES[14] == "CP_5"
        assert FEATURE_NAMES[22:26] == ["TE_1", "TE_2", "TE_3", "TE_4(A)"]
        assert FEATURE_NAMES[-3:] == ["PK_8(H)", "PK_9", "PK_10"]


class TestGoldenCorpus:

    def test_matches_hand_computed_features(self, golden_matrix):
        expected = pd.read_csv(DATA_DIR / "golden_features.csv", dtype={"patent_id": str})

        assert golden_matrix.patent_ids == expected["patent_id"].tolist()
        assert list(expected.columns[2:]) == FEATURE_NAMES
        for i, patent_id in enumerate(golden_matrix.patent_ids):
            actual = dict(zip(FEATURE_NAMES, golden_matrix.rows[i]))
            wanted = expected.iloc[i][FEATURE_NAMES].astype(float).to_dict()
            assert actual == pytest.approx(wanted, abs=1e-9), patent_id

    def test_labels(self, golden_matrix):
        assert golden_matrix.labels.tolist() == [1, 0, 1, 0, 1]

    def test_core_and_noncore_add_up(self, golden_matrix):
        frame = golden_matrix.to_frame()

        assert np.allclose(frame["PK_4"] + frame["PK_5"], frame["PK_2"])

    def test_values_are_finite(self, golden_matrix):
        assert np.isfinite(golden_matrix.rows).all()

    def test_excluded_patents_are_dropped(self, golden_records):
        policy = LabelPolicy(nvp_lifetimes=frozenset({12}))

        matrix = compute_all(golden_records, build_index(golden_records), FieldConfig(), policy)

        assert matrix.patent_ids == ["P1", "P3", "P5"]
        assert matrix.labels.tolist() == [1, 1, 1]

    def test_all_excluded_gives_empty_matrix(self, golden_records):
        policy = LabelPolicy(nvp_lifetimes=frozenset({12}), vp_lifetimes=frozenset({8}))

        matrix = compute_all(golden_records, build_index(golden_records), FieldConfig(), policy)

        assert len(matrix) == 0
        assert matrix.rows.shape == (0, N_FEATURES)


class TestTechnologyEnvironment:

    def test_median_citation_age(self, golden_records):
        p3 = next(r for r in golden_records if r.patent_id == "P3")

        te = compute_tech_environment(p3, build_index(golden_records))

        # cited 100, 400 and 900 days before filing
        assert te[-1] == 400.0

    def test_future_cited_filing_counts_as_zero_age(self, golden_records):
        citing = record(
            filing="2001-01-01",
            citations=[
                {"cited_id": "C1", "cited_filing_date": "2002-06-01", "cited_ipcs": ["H01L21/02"]},
                {"cited_id": "C2", "cited_filing_date": "2000-12-01", "cited_ipcs": ["H01L21/02"]},
            ],
        )

        te = compute_tech_environment(citing, build_index(golden_records))

        # median of (0, 31)
        assert te[-1] == pytest.approx(15.5)

    def test_section_only_ipc_fails_with_patent_id(self, golden_records):
        coarse = record(patent_id="BAD", ipcs=("H",))

        with pytest.raises(IndicatorError, match="patent BAD"):
            compute_tech_environment(coarse, build_index(golden_records))


class TestTechnologyBreadth:

    def test_no_cited_ipcs(self):
        assert technology_breadth(record()) == 0.0

    def test_single_subclass(self):
        cited = [{"cited_id": f"C{i}", "cited_ipcs": ["H01L21/02"]} for i in range(3)]

        assert technology_breadth(record(citations=cited)) == 0.0

    def test_two_subclasses_evenly(self):
        cited = [
            {"cited_id": "C1", "cited_ipcs": ["H01L21/02"]},
            {"cited_id": "C2", "cited_ipcs": ["G06F17/30"]},
        ]

        assert technology_breadth(record(citations=cited)) == pytest.approx(0.5)

    def test_multi_code_citation_is_split(self):
        cited = [{"cited_id": "C1", "cited_ipcs": ["H01L21/02", "G06F17/30"]}]

        assert technology_breadth(record(citations=cited)) == pytest.approx(0.5)

    def test_section_level(self):
        cited = [
            {"cited_id": "C1", "cited_ipcs": ["H01L21/02"]},
            {"cited_id": "C2", "cited_ipcs": ["H04L29/06"]},
        ]

        assert technology_breadth(record(citations=cited), IpcLevel.SECTION) == 0.0


class TestFieldConfig:

    def test_focal_field_is_normalized(self):
        assert FieldConfig(focal_field="h01l").focal_field == "H01L"

    def test_invalid_focal_field(self):
        with pytest.raises(InvalidInputError):
            FieldConfig(focal_field="not-an-ipc")


class TestFeatureMatrixCsv:

    def test_column_layout(self, golden_matrix, tmp_path):
        path = golden_matrix.to_csv(tmp_path / "feature_matrix.csv")
        header = path.read_text().splitlines()[0].split(",")

        assert header == [*FEATURE_NAMES, "patent_id", "label"]

    def test_read_back(self, golden_matrix, tmp_path):
        path = golden_matrix.to_csv(tmp_path / "feature_matrix.csv")

        loaded = FeatureMatrix.from_csv(path)

        assert loaded.patent_ids == golden_matrix.patent_ids
        assert np.allclose(loaded.rows, golden_matrix.rows)

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError):
            FeatureMatrix.from_csv(tmp_path / "missing.csv")

    def test_unknown_label(self, golden_matrix, tmp_path):
        frame = golden_matrix.to_frame()
        frame.loc[0, "label"] = "MAYBE"
        frame.to_csv(tmp_path / "bad.csv", index=False)

        with pytest.raises(InvalidInputError, match="unknown labels"):
            FeatureMatrix.from_csv(tmp_path / "bad.csv")

    def test_misaligned_rows(self):
        with pytest.raises(InvalidInputError):
            FeatureMatrix(patent_ids=["A", "B"], rows=np.zeros((1, N_FEATURES)), labels=[1])
