# app/services/report_service.py

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import sklearn

from app.exception import IntegrityError, NotFoundError
from app.services.screening_service import candidate_file_name
from app.utility import read_json, sha256_file

if TYPE_CHECKING:
    from app.valuation_manager import ValuationManager

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
REQUIRED_STAGES = ("extract", "train_eval", "pareto", "explain")
REPORT_STAGE = "report"


def _ranked(features: list[dict]) -> list[str]:
    return [f["feature"] for f in sorted(features, key=lambda f: f["rank"])]


class ReportService:
    """
    Service class responsible for the consolidated report, its plot data and the run manifest.
    """

    def __init__(self, manager: ValuationManager) -> None:
        """
        Initialize ReportService with a ValuationManager instance.

        Args:
            manager (ValuationManager): The parent manager holding the run configuration.
        """
        self.manager = manager
        self.config = manager.config

    def _path(self, relative: str) -> Path:
        return self.manager.out_dir / relative

    def stage_records(self, stages=REQUIRED_STAGES) -> dict[str, dict]:
        """
        Read the records of the given stages.

        Raises:
            NotFoundError: Listing every missing record or recorded file.
        """
        missing = []
        if not self.manager.run_config_path.exists():
            missing.append(self.manager.run_config_path.name)
        records = {}
        for stage in stages:
            try:
                records[stage] = self.manager.read_stage_record(stage)
            except NotFoundError:
                missing.append(f"stages/{stage}.json")
                continue
            missing.extend(f for f in records[stage]["files"] if not self._path(f).exists())
        if missing:
            raise NotFoundError(f"Missing stage outputs: {', '.join(missing)}.")
        return records

    def check_integrity(self) -> dict[str, dict]:
        """
        Check that every prior stage ran under the stored configuration.

        Returns:
            dict[str, dict]: Stage records keyed by stage.

        Raises:
            NotFoundError: If stage outputs are missing.
            IntegrityError: If run_config.json was altered or a stage used another config.
        """
        records = self.stage_records()
        stored = self.manager.stored_config_hash()
        current = self.config.config_hash
        if stored != current:
            raise IntegrityError(
                f"run_config.json (sha256 {stored[:12]}) does not match the run configuration "
                f"(sha256 {current[:12]}); the stored config was altered or belongs to another run."
            )
        stale = sorted(stage for stage, record in records.items() if record["config_hash"] != stored)
        if stale:
            raise IntegrityError(
                f"Stages {', '.join(stale)} were produced under another configuration; rerun them."
            )
        return records

    def build_report(self) -> dict:
        """Assemble the consolidated report from the stage outputs."""
        records = self.stage_records()
        candidates = read_json(self._path("train_eval/candidates.json"))
        selection = read_json(self._path("pareto/selection.json"))
        global_summary = read_json(self._path("explain/global_summary.json"))
        bins = self.manager.attribution_service.load_bins()

        return {
            "config_hash": self.config.config_hash,
            "seed": self.config.seed,
            "label_counts": read_json(self._path("extract/label_counts.json")),
            "metrics_table": [
                {
                    "name": c["spec"]["name"],
                    "family": c["spec"]["family"],
                    "hyperparameters": c["spec"]["hyperparameters"],
                    "metrics": c["metrics"],
                    "error": c["error"],
                }
                for c in candidates
            ],
            "front": read_json(self._path("pareto/front.json")),
            "selection": {
                "policy": selection["policy"],
                "selected": selection["selected"],
                "metrics": selection["metrics"],
                "refit": selection["refit"],
                "training_rows": len(selection["training_patent_ids"]),
            },
            "global_ranking": _ranked(global_summary["features"]),
            "bin_ranks": [
                {
                    "lower": b["lower"],
                    "upper": b["upper"],
                    "count": b["count"],
                    "empty": b["empty"],
                    "ranking": _ranked(b["features"]),
                }
                for b in bins
            ],
            "warnings": [w for record in records.values() for w in record["warnings"]],
        }

    def plot_frames(self, report: dict) -> dict[str, pd.DataFrame]:
        """
        Return the plot-data tables keyed by file name.

        metrics_table: one row per candidate; pareto_points: ECE/MCC scatter with front and
        selection flags; reliability_selected: reliability bins of the selected spec;
        global_importance and bin_ranks: attribution rankings.
        """
        selected = report["selection"]["selected"]
        metrics = pd.read_csv(self._path("train_eval/candidates.csv"), dtype={"name": str})
        points = pd.read_csv(self._path("pareto/front.csv"), dtype={"name": str})
        points["selected"] = points["name"] == selected
        reliability = pd.read_csv(
            self._path(f"train_eval/reliability/{candidate_file_name(selected)}.csv")
        )

        summary = read_json(self._path("explain/global_summary.json"))
        importance = pd.DataFrame(
            summary["features"],
            columns=["rank", "feature", "mean_abs_phi", "mean_phi", "correlation"],
        )
        bin_rows = [
            {"bin": number, "lower": b["lower"], "upper": b["upper"], **feature}
            for number, b in enumerate(self.manager.attribution_service.load_bins(), 1)
            for feature in b["features"]
        ]
        bin_ranks = pd.DataFrame(
            bin_rows,
            columns=["bin", "lower", "upper", "rank", "feature", "mean_abs_phi", "mean_phi", "correlation"],
        )
        return {
            "metrics_table.csv": metrics,
            "pareto_points.csv": points,
            "reliability_selected.csv": reliability,
            "global_importance.csv": importance,
            "bin_ranks.csv": bin_ranks,
        }

    def emit(self) -> list[Path]:
        """
        Write report.json and the plot-data CSVs.

        Returns:
            list[Path]: Files written.
        """
        stage_dir = self.manager.stage_dir(REPORT_STAGE)
        report = self.build_report()
        written = [self.manager.write_json(stage_dir / "report.json", report)]
        for name, frame in self.plot_frames(report).items():
            written.append(self.manager.write_frame(stage_dir / name, frame))
        return written

    def build_manifest(self) -> dict:
        """
        List every emitted file with its SHA-256, per-stage file lists and warnings.

        Raises:
            NotFoundError: If a stage record or listed file is missing.
        """
        stages = (*REQUIRED_STAGES, REPORT_STAGE)
        records = self.stage_records(stages)
        files = [self.manager.run_config_path.name]
        files += [f"stages/{stage}.json" for stage in stages]
        for record in records.values():
            files.extend(record["files"])

        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "config_hash": self.manager.stored_config_hash(),
            "versions": {
                "numpy": np.__version__,
                "pandas": pd.__version__,
                "scikit-learn": sklearn.__version__,
            },
            "stages": {stage: records[stage]["files"] for stage in stages},
            "files": {f: sha256_file(self._path(f)) for f in sorted(set(files))},
            "warnings": [w for stage in stages for w in records[stage]["warnings"]],
        }
        if self.config.report.record_timing:
            manifest["timing"] = {stage: records[stage].get("seconds") for stage in stages}
        return manifest

    def write_manifest(self) -> Path:
        """Write manifest.json at the root of the output directory."""
        path = self.manager.write_json(self.manager.out_dir / "manifest.json", self.build_manifest())
        logger.info("Wrote manifest %s", path)
        return path
