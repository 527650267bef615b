# app/valuation_manager.py

from __future__ import annotations

import logging
import os
import time
from pathlib import Path
from typing import Any

import pandas as pd

from app.config import RunConfig
from app.exception import ConfigError, NotFoundError, OutputLockedError
from app.learners import read_model
from app.services.attribution_service import AttributionService
from app.services.corpus_service import CorpusService, build_index, label_counts
from app.services.indicator_service import IndicatorService
from app.services.report_service import ReportService
from app.services.screening_service import ScreeningService, candidates_table
from app.utility import read_json, sha256_file, write_frame, write_json

logger = logging.getLogger(__name__)

STAGES = ("extract", "train_eval", "pareto", "explain", "report")
RUN_CONFIG_FILE = "run_config.json"
LOCK_FILE = ".lock"


class ValuationManager:
    """
    Central manager for one pipeline run: configuration, output directory and services.

    Attributes:
        config (RunConfig): Resolved run configuration.
        out_dir (Path): Output directory every stage writes into.
        warnings (list[str]): Non-fatal problems recorded during this command.
        corpus_service (CorpusService): Corpus parsing and labelling.
        indicator_service (IndicatorService): Feature-matrix extraction.
        screening_service (ScreeningService): Grid evaluation and Pareto selection.
        attribution_service (AttributionService): Shapley explanations.
        report_service (ReportService): Consolidated report and manifest.
    """

    def __init__(self, config: RunConfig, out_dir: str | Path | None = None) -> None:
        """
        Initialize ValuationManager and set up services.

        Args:
            config (RunConfig): The run configuration.
            out_dir (str | Path | None, optional): Output directory; defaults to config.output_dir.

        Raises:
            ConfigError: If no output directory is given.
        """
        self.config = config
        target = out_dir if out_dir is not None else config.output_dir
        if target is None:
            raise ConfigError("No output directory: set output_dir or pass --out.")
        self.out_dir = Path(target)
        self.warnings: list[str] = []

        self._locked = False
        self._stage_started: dict[str, tuple[float, int]] = {}

        # Initialize service objects
        self.corpus_service = CorpusService(manager=self)
        self.indicator_service = IndicatorService(manager=self)
        self.screening_service = ScreeningService(manager=self)
        self.attribution_service = AttributionService(manager=self)
        self.report_service = ReportService(manager=self)

    # -- output directory --------------------------------------------------

    @property
    def lock_path(self) -> Path:
        return self.out_dir / LOCK_FILE

    @property
    def run_config_path(self) -> Path:
        return self.out_dir / RUN_CONFIG_FILE

    def lock(self) -> None:
        """
        Take the output directory lock.

        Raises:
            OutputLockedError: If another command holds it.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(
                f"Output directory '{self.out_dir}' is locked by another run "
                f"(remove '{self.lock_path}' if that run is gone)."
            )
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        self._locked = True

    def unlock(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "ValuationManager":
        self.lock()
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.unlock()

    def stage_dir(self, stage: str, create: bool = True) -> Path:
        """Return (and by default create) the directory of a stage."""
        path = self.out_dir / stage
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def write_json(self, path: str | Path, data: Any) -> Path:
        return write_json(path, data)

    def write_frame(self, path: str | Path, frame: pd.DataFrame) -> Path:
        return write_frame(path, frame)

    def warn(self, message: str) -> None:
        """Log a warning and record it in the run's warnings."""
        logger.warning(message)
        self.warnings.append(message)

    def relative(self, path: str | Path) -> str:
        """Return a path relative to the output directory, with forward slashes."""
        return Path(path).resolve().relative_to(self.out_dir.resolve()).as_posix()

    # -- stage records -----------------------------------------------------

    def write_run_config(self) -> Path:
        """Write the resolved configuration as run_config.json."""
        return self.write_json(self.run_config_path, self.config.to_dict())

    def begin_stage(self, stage: str) -> None:
        """Mark the start of a stage (time and warning count)."""
        logger.info("Stage %s started", stage)
        self._stage_started[stage] = (time.perf_counter(), len(self.warnings))

    def finish_stage(self, stage: str, files: list[Path]) -> Path:
        """
        Write the stage record: config hash, files written and warnings raised.

        Args:
            stage (str): Stage name.
            files (list[Path]): Files the stage wrote.

        Returns:
            Path: The stage record path.
        """
        started, first_warning = self._stage_started.pop(stage, (time.perf_counter(), 0))
        record = {
            "stage": stage,
            "config_hash": self.config.config_hash,
            "files": sorted(self.relative(f) for f in files),
            "warnings": self.warnings[first_warning:],
        }
        if self.config.report.record_timing:
            record["seconds"] = round(time.perf_counter() - started, 3)
        path = self.write_json(self.stage_dir("stages") / f"{stage}.json", record)
        logger.info("Stage %s finished (%d files)", stage, len(files))
        return path

    def read_stage_record(self, stage: str) -> dict:
        """
        Read a stage record.

        Raises:
            NotFoundError: If the stage has not run.
        """
        return read_json(self.out_dir / "stages" / f"{stage}.json")

    def stored_config_hash(self) -> str:
        """
        Return the SHA-256 of the stored run_config.json.

        Raises:
            NotFoundError: If run_config.json is missing.
        """
        if not self.run_config_path.exists():
            raise NotFoundError(f"'{self.run_config_path}' is missing.")
        return sha256_file(self.run_config_path)

    # -- stages ------------------------------------------------------------

    def extract(self) -> dict:
        """
        Run the extract stage: corpus, labels, indicators.

        Returns:
            dict: Label counts and matrix shape for display.
        """
        self.begin_stage("extract")
        result = self.corpus_service.load()
        counts = label_counts(result.records, self.config.labels)
        index = build_index(result.records, self.config.indicators.ipc_level)
        matrix = self.indicator_service.build_matrix(result.records, index)

        files = self.corpus_service.emit(result, counts)
        files.append(self.indicator_service.emit(matrix))
        self.finish_stage("extract", files)
        return {
            **counts,
            "patents": len(result.records),
            "rows": len(matrix),
            "skipped": len(result.diagnostics),
        }

    def train_eval(self) -> list[dict]:
        """Run the train-eval stage and return one display row per candidate."""
        self.begin_stage("train_eval")
        matrix = self.indicator_service.load()
        candidates = self.screening_service.train_eval(matrix)
        files = self.screening_service.emit_candidates(candidates, matrix)
        self.finish_stage("train_eval", files)
        table = candidates_table(candidates)
        return table.drop(columns="hyperparameters").to_dict("records")

    def pareto(self) -> list[dict]:
        """Run the pareto stage and return the front for display."""
        self.begin_stage("pareto")
        matrix = self.indicator_service.load()
        candidates = self.screening_service.load_candidates()
        front, selected = self.screening_service.screen(candidates)
        model, rows = self.screening_service.refit(selected, matrix)
        files = self.screening_service.emit_selection(
            front, selected, model, [matrix.patent_ids[r] for r in rows]
        )
        self.finish_stage("pareto", files)
        display = front.to_frame()
        display["selected"] = display["name"] == selected.spec.name
        return display[display["on_front"]].drop(columns="on_front").to_dict("records")

    def explain(self) -> list[dict]:
        """Run the explain stage and return the top global features for display."""
        self.begin_stage("explain")
        matrix = self.indicator_service.load()
        selection = self.screening_service.load_selection()
        model = read_model(self.screening_service.selected_model_path())
        attributions, summary, bins = self.attribution_service.explain(
            model, matrix, selection["training_patent_ids"]
        )
        files = self.attribution_service.emit(attributions, summary, bins, matrix.feature_names)
        self.finish_stage("explain", files)
        return summary.to_dict()["features"][:10]

    def report(self) -> dict:
        """Run the report stage (integrity check, report, plot data, manifest)."""
        self.begin_stage("report")
        self.report_service.check_integrity()
        files = self.report_service.emit()
        self.finish_stage("report", files)
        manifest = self.report_service.write_manifest()
        return {"files": len(read_json(manifest)["files"]), "manifest": self.relative(manifest)}
