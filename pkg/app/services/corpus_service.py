# app/services/corpus_service.py

from __future__ import annotations

import bisect
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import pandas as pd

from app.exception import (
    AlreadyExistsError,
    CorpusFormatError,
    EmptyCorpusError,
    InvalidInputError,
    NotFoundError,
)
from app.models import (
    Diagnostic,
    IpcLevel,
    Label,
    LabelPolicy,
    PatentRecord,
)

if TYPE_CHECKING:
    from app.valuation_manager import ValuationManager

logger = logging.getLogger(__name__)

SIDE_FILES = ("claims", "citations", "parties", "priorities", "maintenance")


class CorpusFormat(Enum):
    """
    Enum representing the supported corpus input formats.
    """

    JSONL = "jsonl"
    CSV_BUNDLE = "csv-bundle"


@dataclass
class ParseResult:
    """
    Outcome of parsing a corpus file.

    Attributes:
        records (list[PatentRecord]): Well-formed records in input order.
        diagnostics (list[Diagnostic]): Problems found in skipped rows.
    """

    records: list[PatentRecord] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)


@dataclass
class CorpusIndex:
    """
    Precomputed corpus aggregates backing the technology-environment and
    prior-knowledge indicators.

    Attributes:
        ipc_level (IpcLevel): Level the IPC keys are truncated to.
        by_ipc_year (dict): (ipc, year) -> (patent count, distinct applicant count).
        by_ipc_cumulative (dict): (ipc, year) -> patents granted up to and including year.
        ipc_year_span (dict): ipc -> (first, last) indexed grant year.
        by_assignee (dict): canonical name -> list of (grant_date, ipcs), sorted by date.
        by_inventor (dict): canonical name -> sorted list of grant dates.
    """

    ipc_level: IpcLevel
    by_ipc_year: dict[tuple[str, int], tuple[int, int]] = field(default_factory=dict)
    by_ipc_cumulative: dict[tuple[str, int], int] = field(default_factory=dict)
    ipc_year_span: dict[str, tuple[int, int]] = field(default_factory=dict)
    by_assignee: dict[str, list[tuple[date, tuple[str, ...]]]] = field(default_factory=dict)
    by_inventor: dict[str, list[date]] = field(default_factory=dict)

    def patents_in_year(self, ipc: str, year: int) -> int:
        """Return the number of patents granted in (ipc, year)."""
        return self.by_ipc_year.get((ipc, year), (0, 0))[0]

    def applicants_in_year(self, ipc: str, year: int) -> int:
        """Return the number of distinct applicants granted in (ipc, year)."""
        return self.by_ipc_year.get((ipc, year), (0, 0))[1]

    def cumulative(self, ipc: str, year: int) -> int:
        """Return the number of patents in ipc granted up to and including year."""
        span = self.ipc_year_span.get(ipc)
        if span is None or year < span[0]:
            return 0
        return self.by_ipc_cumulative[(ipc, min(year, span[1]))]

    def prior_assignee_patents(
        self, name: str, before: date
    ) -> list[tuple[date, tuple[str, ...]]]:
        """
        Return an assignee's corpus patents granted strictly before a date.

        Args:
            name (str): Canonical assignee name.
            before (date): Exclusive upper bound on grant date.

        Returns:
            list[tuple[date, tuple[str, ...]]]: (grant_date, ipcs) entries.
        """
        entries = self.by_assignee.get(name, [])
        cut = bisect.bisect_left([d for d, _ in entries], before)
        return entries[:cut]

    def prior_inventor_count(self, name: str, before: date) -> int:
        """Return the number of an inventor's corpus patents granted strictly before a date."""
        return bisect.bisect_left(self.by_inventor.get(name, []), before)


def validate_corpus_format(format_input: str) -> CorpusFormat:
    """
    Validate and convert a format string to CorpusFormat.

    Raises:
        InvalidInputError: If the format is unknown.
    """
    try:
        return CorpusFormat(str(format_input).strip().lower())
    except ValueError:
        raise InvalidInputError(f"'{format_input}' is not a valid corpus format.")


def parse_corpus(
    path: str | Path, corpus_format: str | CorpusFormat, strict: bool = False
) -> ParseResult:
    """
    Parse a corpus file into PatentRecords.

    Args:
        path (str | Path): JSONL file, or directory holding a CSV bundle.
        corpus_format (str | CorpusFormat): "jsonl" or "csv-bundle".
        strict (bool): Raise on the first malformed row instead of skipping it.

    Returns:
        ParseResult: Records in input order plus per-row diagnostics.

    Raises:
        NotFoundError: If the file cannot be read.
        CorpusFormatError: On a malformed row in strict mode.
        AlreadyExistsError: If a patent_id occurs twice.
    """
    if not isinstance(corpus_format, CorpusFormat):
        corpus_format = validate_corpus_format(corpus_format)

    path = Path(path)
    if corpus_format == CorpusFormat.JSONL:
        rows = _read_jsonl_rows(path)
    else:
        rows = _read_csv_bundle_rows(path)

    result = ParseResult()
    seen_ids: dict[str, int] = {}

    for line_no, row, error in rows:
        if error is None:
            try:
                record = PatentRecord.from_dict(row)
            except InvalidInputError as e:
                error = str(e)

        if error is not None:
            patent_id = row.get("patent_id") if isinstance(row, dict) else None
            if strict:
                raise CorpusFormatError(error, line=line_no)
            logger.debug("Skipping line %d: %s", line_no, error)
            result.diagnostics.append(
                Diagnostic(line=line_no, message=error, patent_id=patent_id or None)
            )
            continue

        if record.patent_id in seen_ids:
            raise AlreadyExistsError(
                f"Duplicate patent_id '{record.patent_id}' on lines "
                f"{seen_ids[record.patent_id]} and {line_no}."
            )
        seen_ids[record.patent_id] = line_no
        result.records.append(record)

    logger.info(
        "Parsed %d records (%d diagnostics) from %s",
        len(result.records),
        len(result.diagnostics),
        path,
    )
    return result


def _read_jsonl_rows(path: Path) -> list[tuple[int, Any, str | None]]:
    """Read (line number, row, error) triples from a JSONL file, skipping blank lines."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except (FileNotFoundError, IsADirectoryError):
        raise NotFoundError(f"Corpus file '{path}' does not exist.")
    except OSError as e:
        raise NotFoundError(f"Corpus file '{path}' cannot be read: {e}")

    rows = []
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rows.append((line_no, json.loads(line), None))
        except json.JSONDecodeError as e:
            rows.append((line_no, {}, f"invalid JSON ({e.msg})"))
    return rows


def _read_csv(path: Path) -> pd.DataFrame:
    """Read a CSV with every column as a string, empty cells kept as ""."""
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def _to_bool(value: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise InvalidInputError(f"'{value}' is not a boolean.")


def _to_int(value: str) -> int | None:
    value = str(value).strip()
    if not value:
        return None
    try:
        return int(value)
    except ValueError:
        raise InvalidInputError(f"'{value}' is not an integer.")


def _split_codes(value: str) -> list[str]:
    return [c for c in str(value).split(";") if c.strip()]


def _read_csv_bundle_rows(directory: Path) -> list[tuple[int, Any, str | None]]:
    """
    Assemble one row dict per patent from a CSV bundle directory.

    The main file is patents.csv; side files are keyed by patent_id and optional.
    """
    main_path = directory / "patents.csv"
    if not main_path.is_file():
        raise NotFoundError(f"CSV bundle '{directory}' has no patents.csv.")

    try:
        main = _read_csv(main_path)
        sides = {
            name: _read_csv(directory / f"{name}.csv")
            for name in SIDE_FILES
            if (directory / f"{name}.csv").is_file()
        }
    except (OSError, pd.errors.ParserError) as e:
        raise NotFoundError(f"CSV bundle '{directory}' cannot be read: {e}")

    grouped: dict[str, dict[str, list[dict]]] = {name: defaultdict(list) for name in sides}
    side_errors: dict[str, list[str]] = defaultdict(list)
    for name, frame in sides.items():
        for row_no, side_row in enumerate(frame.to_dict("records"), 2):
            try:
                grouped[name][side_row["patent_id"].strip()].append(
                    _convert_side_row(name, side_row)
                )
            except (InvalidInputError, KeyError) as e:
                side_errors[side_row.get("patent_id", "").strip()].append(
                    f"{name}.csv line {row_no}: {e}"
                )

    rows = []
    for line_no, main_row in enumerate(main.to_dict("records"), 2):
        patent_id = str(main_row.get("patent_id", "")).strip()
        if side_errors.get(patent_id):
            rows.append((line_no, {"patent_id": patent_id}, "; ".join(side_errors[patent_id])))
            continue
        parties = grouped.get("parties", {}).get(patent_id, [])
        try:
            row = {
                "patent_id": patent_id,
                "filing_date": main_row.get("filing_date", ""),
                "grant_date": main_row.get("grant_date", ""),
                "title": main_row.get("title", ""),
                "abstract_word_count": _to_int(main_row.get("abstract_word_count", "")) or 0,
                "fulltext_word_count": _to_int(main_row.get("fulltext_word_count", "")) or 0,
                "ipcs": _split_codes(main_row.get("ipcs", "")),
                "npl_citation_count": _to_int(main_row.get("npl_citation_count", "")) or 0,
                "lifetime_years": main_row.get("lifetime_years", "").strip() or None,
                "claims": grouped.get("claims", {}).get(patent_id, []),
                "backward_citations": grouped.get("citations", {}).get(patent_id, []),
                "assignees": _parties_with_role(parties, "assignee"),
                "inventors": _parties_with_role(parties, "inventor"),
                "priorities": grouped.get("priorities", {}).get(patent_id, []),
                "maintenance_events": grouped.get("maintenance", {}).get(patent_id, []),
            }
            rows.append((line_no, row, None))
        except InvalidInputError as e:
            rows.append((line_no, {"patent_id": patent_id}, str(e)))
    return rows


def _parties_with_role(parties: list[dict], role: str) -> list[dict]:
    return [{k: v for k, v in p.items() if k != "role"} for p in parties if p["role"] == role]


def _convert_side_row(name: str, row: dict) -> dict:
    """Convert one side-file row of strings into the JSONL field shapes."""
    if name == "claims":
        return {
            "is_independent": _to_bool(row["is_independent"]),
            "word_count": _to_int(row["word_count"]),
        }
    if name == "citations":
        return {
            "cited_id": row["cited_id"],
            "cited_country": row.get("cited_country", ""),
            "cited_filing_date": row.get("cited_filing_date", "") or None,
            "cited_ipcs": _split_codes(row.get("cited_ipcs", "")),
            "cited_title": row.get("cited_title", "") or None,
        }
    if name == "parties":
        role = row["role"].strip().lower()
        if role not in ("assignee", "inventor"):
            raise InvalidInputError(f"'{row['role']}' is not a party role.")
        return {
            "role": role,
            "name": row["name"],
            "country": row.get("country", ""),
            "overdue_fee_count": _to_int(row.get("overdue_fee_count", "")),
        }
    if name == "priorities":
        return {"priority_id": row["priority_id"], "country": row.get("country", "")}
    return {
        "event_year_offset": _to_int(row["event_year_offset"]),
        "paid": _to_bool(row["paid"]),
        "surcharge": _to_bool(row.get("surcharge", "false") or "false"),
    }


def write_canonical_corpus(records: list[PatentRecord], path: str | Path) -> Path:
    """
    Write records as deterministic JSONL sorted by patent_id.

    Args:
        records (list[PatentRecord]): Records to emit.
        path (str | Path): Target file.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in sorted(records, key=lambda r: r.patent_id):
            f.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False))
            f.write("\n")
    return path


def derive_label(record: PatentRecord, policy: LabelPolicy | None = None) -> Label:
    """
    Derive the technology-value label of a patent from its lifetime.

    Args:
        record (PatentRecord): The patent.
        policy (LabelPolicy | None): Lifetime-to-label mapping (default: 4 -> NVP, max -> VP).

    Returns:
        Label: VP, NVP or EXCLUDED.
    """
    policy = policy or LabelPolicy()
    lifetime = record.lifetime_years
    if lifetime is None:
        return Label.EXCLUDED
    if lifetime in policy.vp_lifetimes:
        return Label.VP
    if lifetime in policy.nvp_lifetimes:
        return Label.NVP
    return Label.EXCLUDED


def label_counts(records: list[PatentRecord], policy: LabelPolicy | None = None) -> dict:
    """
    Count records per label.

    Returns:
        dict: {"VP": n, "NVP": n, "EXCLUDED": n}
    """
    counts = Counter(derive_label(r, policy).value for r in records)
    return {label.value: counts.get(label.value, 0) for label in Label}


def build_index(
    records: list[PatentRecord], ipc_level: IpcLevel = IpcLevel.SUBCLASS
) -> CorpusIndex:
    """
    Build the corpus aggregates used by corpus-relative indicators.

    Args:
        records (list[PatentRecord]): The whole corpus.
        ipc_level (IpcLevel): Level IPC codes are truncated to (default subclass).

    Returns:
        CorpusIndex: Immutable-by-convention index.

    Raises:
        EmptyCorpusError: If the corpus is empty.
        InvalidInputError: If a record's IPC does not resolve to ipc_level.
    """
    if not records:
        raise EmptyCorpusError("Cannot index an empty corpus.")

    counts: dict[tuple[str, int], int] = Counter()
    applicants: dict[tuple[str, int], set[str]] = defaultdict(set)
    years_by_ipc: dict[str, set[int]] = defaultdict(set)
    by_assignee: dict[str, list] = defaultdict(list)
    by_inventor: dict[str, list] = defaultdict(list)

    for record in records:
        year = record.grant_year
        for ipc in record_ipcs_at_level(record, ipc_level):
            counts[(ipc, year)] += 1
            years_by_ipc[ipc].add(year)
            applicants[(ipc, year)].update(a.name for a in record.assignees)
        for name in {a.name for a in record.assignees}:
            by_assignee[name].append((record.grant_date, record.ipcs))
        for name in {i.name for i in record.inventors}:
            by_inventor[name].append(record.grant_date)

    index = CorpusIndex(ipc_level=ipc_level)
    index.by_ipc_year = {
        key: (count, len(applicants[key])) for key, count in sorted(counts.items())
    }
    for ipc, years in sorted(years_by_ipc.items()):
        running = 0
        index.ipc_year_span[ipc] = (min(years), max(years))
        for year in range(min(years), max(years) + 1):
            running += counts.get((ipc, year), 0)
            index.by_ipc_cumulative[(ipc, year)] = running
    index.by_assignee = {
        name: sorted(entries, key=lambda e: e[0]) for name, entries in sorted(by_assignee.items())
    }
    index.by_inventor = {name: sorted(dates) for name, dates in sorted(by_inventor.items())}

    logger.info(
        "Indexed %d records into %d (IPC, year) cells at %s level",
        len(records),
        len(index.by_ipc_year),
        ipc_level.value,
    )
    return index


def record_ipcs_at_level(record: PatentRecord, level: IpcLevel) -> list[str]:
    """
    Return the record's distinct IPC prefixes at a level, in first-seen order.

    Raises:
        InvalidInputError: If a code is too coarse for the level.
    """
    prefixes: dict[str, None] = {}
    for ipc in record.parsed_ipcs():
        prefix = ipc.at_level(level)
        if prefix is None:
            raise InvalidInputError(
                f"IPC '{ipc.code}' of patent {record.patent_id} does not resolve "
                f"to {level.value} level."
            )
        prefixes.setdefault(prefix, None)
    return list(prefixes)


class CorpusService:
    """
    Service class responsible for loading, labelling and indexing the corpus of
    a ValuationManager run.
    """

    def __init__(self, manager: ValuationManager) -> None:
        """
        Initialize CorpusService with a ValuationManager instance.

        Args:
            manager (ValuationManager): The parent manager holding the run configuration.
        """
        self.manager = manager
        self.config = manager.config

    def load(self) -> ParseResult:
        """
        Parse the configured corpus.

        Returns:
            ParseResult: Records and diagnostics.

        Raises:
            EmptyCorpusError: If no well-formed record was read.
        """
        corpus_cfg = self.config.corpus
        result = parse_corpus(corpus_cfg.path, corpus_cfg.format, strict=corpus_cfg.strict)
        if not result.records:
            raise EmptyCorpusError(f"empty corpus: no usable records in '{corpus_cfg.path}'.")
        for diagnostic in result.diagnostics:
            self.manager.warn(f"line {diagnostic.line}: {diagnostic.message}")
        return result

    def emit(self, result: ParseResult, counts: dict) -> list[Path]:
        """
        Write the canonical corpus, label counts and diagnostics of the extract stage.

        Returns:
            list[Path]: Files written.
        """
        stage_dir = self.manager.stage_dir("extract")
        written = [write_canonical_corpus(result.records, stage_dir / "canonical_corpus.jsonl")]
        written.append(self.manager.write_json(stage_dir / "label_counts.json", counts))
        written.append(
            self.manager.write_json(
                stage_dir / "diagnostics.json",
                [d.to_dict() for d in result.diagnostics],
            )
        )
        return written
