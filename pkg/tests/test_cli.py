# tests/test_cli.py

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from app.cli import cli
from app.config import load_config
from app.exception import OutputLockedError
from app.services.synthetic_service import PLANTED_FEATURES, write_synthetic_corpus
from app.valuation_manager import ValuationManager

GOLDEN_CORPUS = Path(__file__).parent / "data" / "golden_corpus.jsonl"

SMALL_RUN = """
seed = 5

[corpus]
path = "corpus.jsonl"

[training]
k = 3

[[training.models]]
family = "LR"
hyperparameters = { epochs = 50 }

[[training.models]]
family = "XGB"
hyperparameters = { n_estimators = 5, max_depth = 2 }

[screening]
f1_floor = 0.0

[attribution]
n_permutations = 2
background_size = 10
max_instances = 10
"""

# default grid, default floor and selection policy; explanations kept small
SIGNAL_RUN = """
seed = 7

[corpus]
path = "corpus.jsonl"

[attribution]
n_permutations = 10
background_size = 50
max_instances = 40
"""


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def write_workdir(directory: Path, corpus: Path | None = None, config: str = SMALL_RUN) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    if corpus is None:
        write_synthetic_corpus(directory / "corpus.jsonl", n_patents=120, seed=3)
    else:
        shutil.copy(corpus, directory / "corpus.jsonl")
    path = directory / "run.toml"
    path.write_text(config, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    config_path = write_workdir(root)
    out = root / "out"
    result = invoke("run", "--config", config_path, "--out", out)
    assert result.exit_code == 0, result.output
    return config_path, out, result


class TestExtract:

    def test_golden_corpus(self, tmp_path):
        config_path = write_workdir(tmp_path, GOLDEN_CORPUS)
        out = tmp_path / "out"

        result = invoke("extract", "--config", config_path, "--out", out)

        assert result.exit_code == 0, result.output
        assert "--- extract ---" in result.output
        assert json.loads((out / "extract" / "label_counts.json").read_text()) == {
            "VP": 3, "NVP": 2, "EXCLUDED": 0,
        }
        assert (out / "extract" / "feature_matrix.csv").exists()
        assert (out / "run_config.json").exists()
        assert json.loads((out / "stages" / "extract.json").read_text())["stage"] == "extract"

    def test_empty_corpus(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        config_path = write_workdir(tmp_path / "work", empty)

        result = invoke("extract", "--config", config_path, "--out", tmp_path / "out")

        assert result.exit_code == 1
        assert "Error: empty corpus" in result.output

    def test_missing_config(self, tmp_path):
        result = invoke("extract", "--config", tmp_path / "none.toml", "--out", tmp_path / "out")

        assert result.exit_code == 1
        assert "Error: Config file" in result.output

    def test_stage_without_inputs(self, tmp_path):
        config_path = write_workdir(tmp_path, GOLDEN_CORPUS)

        result = invoke("pareto", "--config", config_path, "--out", tmp_path / "out")

        assert result.exit_code == 1
        assert "Error:" in result.output

    def test_locked_output(self, tmp_path):
        config_path = write_workdir(tmp_path, GOLDEN_CORPUS)
        out = tmp_path / "out"
        out.mkdir()
        (out / ".lock").write_text("123")

        result = invoke("extract", "--config", config_path, "--out", out)

        assert result.exit_code == 1
        assert "locked" in result.output

    def test_unexpected_failure_is_reported(self, tmp_path, monkeypatch):
        config_path = write_workdir(tmp_path, GOLDEN_CORPUS)
        out = tmp_path / "out"

        def fail(self):
            raise RuntimeError("disk full")

        monkeypatch.setattr(ValuationManager, "extract", fail)
        result = invoke("extract", "--config", config_path, "--out", out)

        assert result.exit_code == 1
        assert "Error: unexpected RuntimeError: disk full" in result.output
        assert "Traceback" not in result.output
        assert not (out / ".lock").exists()


class TestFullRun:

    def test_every_stage_reported(self, finished_run):
        _, out, result = finished_run

        for stage in ("extract", "train_eval", "pareto", "explain", "report"):
            assert f"--- {stage} ---" in result.output
            assert (out / "stages" / f"{stage}.json").exists()

    def test_manifest_lists_hashed_files(self, finished_run):
        _, out, _ = finished_run

        manifest = json.loads((out / "manifest.json").read_text())

        assert "run_config.json" in manifest["files"]
        assert "pareto/selected_model.json" in manifest["files"]
        assert all(len(digest) == 64 for digest in manifest["files"].values())
        assert set(manifest["versions"]) == {"numpy", "pandas", "scikit-learn"}
        assert "timing" not in manifest

    def test_report_contents(self, finished_run):
        _, out, _ = finished_run

        report = json.loads((out / "report" / "report.json").read_text())
        selection = json.loads((out / "pareto" / "selection.json").read_text())

        assert report["seed"] == 5
        assert [row["name"] for row in report["metrics_table"]] == ["LR #1", "XGB #1"]
        assert selection["training_patent_ids"]
        assert (out / "explain" / "bins" / "bin_1.json").exists()

    def test_rerun_is_byte_identical(self, finished_run, tmp_path):
        config_path, out, _ = finished_run
        again = tmp_path / "again"

        result = invoke("run", "--config", config_path, "--out", again)

        assert result.exit_code == 0, result.output
        first = json.loads((out / "manifest.json").read_text())["files"]
        second = json.loads((again / "manifest.json").read_text())["files"]
        assert first == second

    def test_report_detects_altered_config(self, finished_run, tmp_path):
        config_path, out, _ = finished_run
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)
        stored = json.loads((copy / "run_config.json").read_text())
        stored["seed"] = 99
        (copy / "run_config.json").write_text(json.dumps(stored), encoding="utf-8")

        result = invoke("report", "--config", config_path, "--out", copy)

        assert result.exit_code == 1
        assert "Error: run_config.json" in result.output

    def test_report_rejects_other_seed(self, finished_run, tmp_path):
        config_path, out, _ = finished_run
        copy = tmp_path / "copy"
        shutil.copytree(out, copy)

        result = invoke("report", "--config", config_path, "--out", copy, "--seed", 6)

        assert result.exit_code == 1
        assert "does not match" in result.output


class TestGenerate:

    def test_writes_corpus(self, tmp_path):
        path = tmp_path / "synthetic.jsonl"

        result = invoke("generate", "--out", path, "--n-patents", 25, "--seed", 2)

        assert result.exit_code == 0, result.output
        assert "Wrote 25 patents" in result.output
        assert len(path.read_text().splitlines()) == 25

    def test_invalid_ratio(self, tmp_path):
        result = invoke("generate", "--out", tmp_path / "x.jsonl", "--vp-ratio", 0)

        assert result.exit_code == 1
        assert "Error: vp_ratio" in result.output


class TestValuationManager:

    def test_lock_is_exclusive(self, tmp_path):
        config = load_config(write_workdir(tmp_path, GOLDEN_CORPUS), out=tmp_path / "out")

        with ValuationManager(config) as manager:
            with pytest.raises(OutputLockedError):
                ValuationManager(config).lock()
            assert manager.lock_path.exists()

        assert not (tmp_path / "out" / ".lock").exists()

    def test_stage_record_lists_relative_files(self, tmp_path):
        config = load_config(write_workdir(tmp_path, GOLDEN_CORPUS), out=tmp_path / "out")
        manager = ValuationManager(config)

        summary = manager.extract()
        record = manager.read_stage_record("extract")

        assert summary["rows"] == 5
        assert record["config_hash"] == config.config_hash
        assert "extract/feature_matrix.csv" in record["files"]
        assert "seconds" not in record


@pytest.mark.slow
class TestSignalRecovery:

    @pytest.fixture(scope="class")
    def signal_run(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("signal")
        generated = invoke("generate", "--out", root / "corpus.jsonl", "--n-patents", 2000, "--seed", 0)
        assert generated.exit_code == 0, generated.output
        config_path = root / "run.toml"
        config_path.write_text(SIGNAL_RUN, encoding="utf-8")

        result = invoke("run", "--config", config_path, "--out", root / "out")

        assert result.exit_code == 0, result.output
        return root / "out"

    def test_default_grid_is_screened(self, signal_run):
        report = json.loads((signal_run / "report" / "report.json").read_text())

        assert len(report["metrics_table"]) == 16
        assert report["front"]["members"]

    def test_selected_model_beats_all_vp_baseline(self, signal_run):
        counts = json.loads((signal_run / "extract" / "label_counts.json").read_text())
        selection = json.loads((signal_run / "pareto" / "selection.json").read_text())
        baseline = 2 * counts["VP"] / (2 * counts["VP"] + counts["NVP"])

        assert selection["metrics"]["f1"] >= baseline + 0.10

    def test_planted_indicators_rank_in_top_three(self, signal_run):
        report = json.loads((signal_run / "report" / "report.json").read_text())

        assert set(PLANTED_FEATURES) <= set(report["global_ranking"][:3])
