# app/models.py

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Any

from app.exception import InvalidInputError
from app.utility import (
    canonicalize_country,
    canonicalize_name,
    format_date,
    parse_date,
    parse_ipc,
    validate_non_negative_int,
    validate_object,
    validate_object_list,
    validate_positive_int,
)

LIFETIME_MAX = "max"
MAINTENANCE_OFFSETS = (4, 8, 12)
IPC_SECTIONS = ("A", "B", "C", "D", "E", "F", "G", "H")


class Label(Enum):
    """
    Enum representing the technology-value label of a patent.

    Attributes:
        VP: Valuable patent (maintained for the maximum term).
        NVP: Non-valuable patent (lapsed at the first renewal).
        EXCLUDED: Any other lifetime; not used for learning.
    """

    VP = "VP"
    NVP = "NVP"
    EXCLUDED = "EXCLUDED"


class IpcLevel(Enum):
    """
    Enum representing the IPC hierarchy level used for aggregation.
    """

    SECTION = "section"
    CLASS = "class"
    SUBCLASS = "subclass"


@dataclass(frozen=True)
class IpcCode:
    """
    A parsed International Patent Classification code.

    Attributes:
        code (str): Normalised full code, e.g. "H01L21/02".
        section (str): Section letter A..H.
        klass (str | None): Two-digit class, e.g. "01".
        subclass (str | None): Subclass letter, e.g. "L".
        group (str | None): Main group digits, e.g. "21".
    """

    code: str
    section: str
    klass: str | None = None
    subclass: str | None = None
    group: str | None = None

    def at_level(self, level: IpcLevel) -> str | None:
        """
        Return the code prefix at the given level, or None if the code is too coarse.

        Args:
            level (IpcLevel): Aggregation level.

        Returns:
            str | None: "H", "H01" or "H01L" style prefix.
        """
        if level == IpcLevel.SECTION:
            return self.section
        if self.klass is None:
            return None
        if level == IpcLevel.CLASS:
            return f"{self.section}{self.klass}"
        if self.subclass is None:
            return None
        return f"{self.section}{self.klass}{self.subclass}"


@dataclass(frozen=True)
class Claim:
    """
    One claim of a patent.

    Attributes:
        is_independent (bool): True for an independent claim.
        word_count (int): Number of words in the claim (>= 1).
    """

    is_independent: bool
    word_count: int

    @classmethod
    def from_dict(cls, data: dict) -> "Claim":
        """Build a Claim from its dictionary form."""
        data = validate_object(data, "Claim")
        is_independent = data.get("is_independent")
        if not isinstance(is_independent, bool):
            raise InvalidInputError("Claim is_independent must be a boolean.")
        word_count = validate_positive_int(data.get("word_count"), "Claim word_count")
        return cls(is_independent=is_independent, word_count=word_count)

    def to_dict(self) -> dict:
        """Return a dictionary representation of the claim."""
        return {"is_independent": self.is_independent, "word_count": self.word_count}


@dataclass(frozen=True)
class Party:
    """
    An assignee or inventor.

    Attributes:
        name (str): Canonical name (case-folded, punctuation stripped).
        country (str): Upper-case country code, "" if unknown.
        overdue_fee_count (int | None): Overdue maintenance fees (assignees only).
    """

    name: str
    country: str = ""
    overdue_fee_count: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "Party":
        """Build a Party from its dictionary form, canonicalizing the name."""
        data = validate_object(data, "Party")
        name = canonicalize_name(data.get("name", ""), "Party name")
        overdue = data.get("overdue_fee_count")
        if overdue is not None:
            overdue = validate_non_negative_int(overdue, "overdue_fee_count")
        return cls(
            name=name,
            country=canonicalize_country(data.get("country")),
            overdue_fee_count=overdue,
        )

    def to_dict(self) -> dict:
        """Return a dictionary representation of the party."""
        data: dict[str, Any] = {"name": self.name, "country": self.country}
        if self.overdue_fee_count is not None:
            data["overdue_fee_count"] = self.overdue_fee_count
        return data


@dataclass(frozen=True)
class CitationRef:
    """
    A backward (patent) citation made by a patent.

    Attributes:
        cited_id (str): Identifier of the cited patent.
        cited_country (str): Country of the cited patent.
        cited_filing_date (date | None): Filing date of the cited patent.
        cited_ipcs (tuple[str, ...]): Normalised IPC codes of the cited patent.
        cited_title (str | None): Title of the cited patent.
    """

    cited_id: str
    cited_country: str = ""
    cited_filing_date: date | None = None
    cited_ipcs: tuple[str, ...] = ()
    cited_title: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "CitationRef":
        """Build a CitationRef from its dictionary form."""
        data = validate_object(data, "Citation")
        cited_id = str(data.get("cited_id") or "").strip()
        if not cited_id:
            raise InvalidInputError("Citation cited_id cannot be empty.")
        filing = data.get("cited_filing_date")
        return cls(
            cited_id=cited_id,
            cited_country=canonicalize_country(data.get("cited_country")),
            cited_filing_date=(
                parse_date(filing, "cited_filing_date") if filing else None
            ),
            cited_ipcs=normalize_ipcs(data.get("cited_ipcs") or []),
            cited_title=str(data["cited_title"]) if data.get("cited_title") else None,
        )

    def parsed_ipcs(self) -> list[IpcCode]:
        """Return the cited IPC codes as IpcCode objects."""
        return [parse_ipc(code) for code in self.cited_ipcs]

    def to_dict(self) -> dict:
        """Return a dictionary representation of the citation."""
        data: dict[str, Any] = {
            "cited_id": self.cited_id,
            "cited_country": self.cited_country,
            "cited_ipcs": list(self.cited_ipcs),
        }
        if self.cited_filing_date is not None:
            data["cited_filing_date"] = format_date(self.cited_filing_date)
        if self.cited_title is not None:
            data["cited_title"] = self.cited_title
        return data


@dataclass(frozen=True)
class PriorityRef:
    """
    A priority claim of a patent.

    Attributes:
        priority_id (str): Identifier of the priority application.
        country (str): Country of the priority application.
    """

    priority_id: str
    country: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "PriorityRef":
        """Build a PriorityRef from its dictionary form."""
        data = validate_object(data, "Priority")
        priority_id = str(data.get("priority_id") or "").strip()
        if not priority_id:
            raise InvalidInputError("Priority priority_id cannot be empty.")
        return cls(priority_id=priority_id, country=canonicalize_country(data.get("country")))

    def to_dict(self) -> dict:
        """Return a dictionary representation of the priority."""
        return {"priority_id": self.priority_id, "country": self.country}


@dataclass(frozen=True)
class MaintenanceEvent:
    """
    A maintenance-fee event, years after grant.

    Attributes:
        event_year_offset (int): 4, 8 or 12.
        paid (bool): Whether the fee was paid.
        surcharge (bool): Whether a late surcharge was charged.
    """

    event_year_offset: int
    paid: bool
    surcharge: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "MaintenanceEvent":
        """Build a MaintenanceEvent from its dictionary form."""
        data = validate_object(data, "Maintenance event")
        offset = data.get("event_year_offset")
        if offset not in MAINTENANCE_OFFSETS or isinstance(offset, bool):
            raise InvalidInputError(
                f"Maintenance event_year_offset must be one of {MAINTENANCE_OFFSETS}."
            )
        paid = data.get("paid")
        if not isinstance(paid, bool):
            raise InvalidInputError("Maintenance paid must be a boolean.")
        return cls(
            event_year_offset=offset, paid=paid, surcharge=bool(data.get("surcharge", False))
        )

    def to_dict(self) -> dict:
        """Return a dictionary representation of the event."""
        return {
            "event_year_offset": self.event_year_offset,
            "paid": self.paid,
            "surcharge": self.surcharge,
        }


@dataclass(frozen=True)
class PatentRecord:
    """
    One patent's bibliographic, textual, citation, party, priority and
    maintenance data.

    Attributes:
        patent_id (str): Unique key within a corpus.
        filing_date (date): Application filing date.
        grant_date (date): Issue date (>= filing_date).
        title (str): Title text.
        abstract_word_count (int): Words in the abstract.
        fulltext_word_count (int): Words in the full text.
        claims (tuple[Claim, ...]): Claims.
        ipcs (tuple[str, ...]): Normalised, de-duplicated IPC codes.
        assignees (tuple[Party, ...]): Assignees.
        inventors (tuple[Party, ...]): Inventors.
        backward_citations (tuple[CitationRef, ...]): Patent citations made.
        npl_citation_count (int): Non-patent literature citations.
        priorities (tuple[PriorityRef, ...]): Priority claims.
        maintenance_events (tuple[MaintenanceEvent, ...]): Fee events.
        lifetime_years (int | str | None): 4, 8, 12, LIFETIME_MAX or None (undetermined).
    """

    patent_id: str
    filing_date: date
    grant_date: date
    title: str = ""
    abstract_word_count: int = 0
    fulltext_word_count: int = 0
    claims: tuple[Claim, ...] = ()
    ipcs: tuple[str, ...] = ()
    assignees: tuple[Party, ...] = ()
    inventors: tuple[Party, ...] = ()
    backward_citations: tuple[CitationRef, ...] = ()
    npl_citation_count: int = 0
    priorities: tuple[PriorityRef, ...] = ()
    maintenance_events: tuple[MaintenanceEvent, ...] = field(default=())
    lifetime_years: int | str | None = None

    @property
    def grant_year(self) -> int:
        """Return the year of grant."""
        return self.grant_date.year

    def parsed_ipcs(self) -> list[IpcCode]:
        """Return the patent's IPC codes as IpcCode objects."""
        return [parse_ipc(code) for code in self.ipcs]

    @classmethod
    def from_dict(cls, data: dict) -> "PatentRecord":
        """
        Build and validate a PatentRecord from its dictionary form.

        Args:
            data (dict): One parsed input row.

        Returns:
            PatentRecord: The validated record.

        Raises:
            InvalidInputError: If any field is missing or violates an invariant.
        """
        if not isinstance(data, dict):
            raise InvalidInputError("Record must be an object.")

        patent_id = str(data.get("patent_id") or "").strip()
        if not patent_id:
            raise InvalidInputError("patent_id is missing.")

        filing_date = parse_date(data.get("filing_date"), "filing_date")
        grant_date = parse_date(data.get("grant_date"), "grant_date")
        if grant_date < filing_date:
            raise InvalidInputError("grant_date is earlier than filing_date.")

        ipcs = normalize_ipcs(data.get("ipcs") or [])
        if not ipcs:
            raise InvalidInputError("At least one IPC code is required.")

        events = tuple(
            MaintenanceEvent.from_dict(e)
            for e in validate_object_list(data.get("maintenance_events"), "maintenance_events")
        )
        offsets = [e.event_year_offset for e in events]
        if len(offsets) != len(set(offsets)):
            raise InvalidInputError("Maintenance event offsets must be unique.")

        if "lifetime_years" in data and data["lifetime_years"] is not None:
            lifetime = validate_lifetime(data["lifetime_years"])
        else:
            lifetime = infer_lifetime(events)

        return cls(
            patent_id=patent_id,
            filing_date=filing_date,
            grant_date=grant_date,
            title=str(data.get("title") or ""),
            abstract_word_count=validate_non_negative_int(
                data.get("abstract_word_count", 0), "abstract_word_count"
            ),
            fulltext_word_count=validate_non_negative_int(
                data.get("fulltext_word_count", 0), "fulltext_word_count"
            ),
            claims=tuple(
                Claim.from_dict(c) for c in validate_object_list(data.get("claims"), "claims")
            ),
            ipcs=ipcs,
            assignees=tuple(
                Party.from_dict(p) for p in validate_object_list(data.get("assignees"), "assignees")
            ),
            inventors=tuple(
                Party.from_dict(p) for p in validate_object_list(data.get("inventors"), "inventors")
            ),
            backward_citations=tuple(
                CitationRef.from_dict(c)
                for c in validate_object_list(data.get("backward_citations"), "backward_citations")
            ),
            npl_citation_count=validate_non_negative_int(
                data.get("npl_citation_count", 0), "npl_citation_count"
            ),
            priorities=tuple(
                PriorityRef.from_dict(p)
                for p in validate_object_list(data.get("priorities"), "priorities")
            ),
            maintenance_events=events,
            lifetime_years=lifetime,
        )

    def to_dict(self) -> dict:
        """
        Return a dictionary representation of the record.

        Returns:
            dict: Field names exactly as in the input format.
        """
        return {
            "patent_id": self.patent_id,
            "filing_date": format_date(self.filing_date),
            "grant_date": format_date(self.grant_date),
            "title": self.title,
            "abstract_word_count": self.abstract_word_count,
            "fulltext_word_count": self.fulltext_word_count,
            "claims": [c.to_dict() for c in self.claims],
            "ipcs": list(self.ipcs),
            "assignees": [p.to_dict() for p in self.assignees],
            "inventors": [p.to_dict() for p in self.inventors],
            "backward_citations": [c.to_dict() for c in self.backward_citations],
            "npl_citation_count": self.npl_citation_count,
            "priorities": [p.to_dict() for p in self.priorities],
            "maintenance_events": [e.to_dict() for e in self.maintenance_events],
            "lifetime_years": self.lifetime_years,
        }


@dataclass(frozen=True)
class LabelPolicy:
    """
    Lifetimes mapped to each label; any other lifetime is EXCLUDED.

    Attributes:
        nvp_lifetimes (frozenset): Lifetimes labelled NVP (default {4}).
        vp_lifetimes (frozenset): Lifetimes labelled VP (default {"max"}).
    """

    nvp_lifetimes: frozenset = frozenset({4})
    vp_lifetimes: frozenset = frozenset({LIFETIME_MAX})

    def __post_init__(self) -> None:
        if self.nvp_lifetimes & self.vp_lifetimes:
            raise InvalidInputError("A lifetime cannot be both VP and NVP.")


@dataclass(frozen=True)
class Diagnostic:
    """
    A per-row problem found while parsing a corpus.

    Attributes:
        line (int): 1-based line (or row) number.
        message (str): Description of the problem.
        patent_id (str | None): Patent id if it could be read.
    """

    line: int
    message: str
    patent_id: str | None = None

    def to_dict(self) -> dict:
        """Return a dictionary representation of the diagnostic."""
        return {"line": self.line, "message": self.message, "patent_id": self.patent_id}


def normalize_ipcs(codes: list[str] | str) -> tuple[str, ...]:
    """
    Parse, normalise and de-duplicate IPC codes, preserving first-seen order.

    Args:
        codes (list[str]): Raw IPC code strings.

    Returns:
        tuple[str, ...]: Normalised codes.

    Raises:
        InvalidInputError: If codes is not a list or any code does not parse to section level.
    """
    if isinstance(codes, str):
        codes = [c for c in codes.split(";") if c.strip()]
    elif not isinstance(codes, (list, tuple)):
        raise InvalidInputError(f"IPC codes must be a list, got {type(codes).__name__}.")
    seen: dict[str, None] = {}
    for raw in codes:
        seen.setdefault(parse_ipc(raw).code, None)
    return tuple(seen)


def validate_lifetime(value: Any) -> int | str:
    """
    Validate a lifetime value: a non-negative integer or the "max" sentinel.

    Raises:
        InvalidInputError: If the value is neither.
    """
    if isinstance(value, str):
        if value.strip().lower() == LIFETIME_MAX:
            return LIFETIME_MAX
        if value.strip().isdigit():
            return int(value.strip())
        raise InvalidInputError(f"lifetime_years '{value}' is invalid.")
    return validate_non_negative_int(value, "lifetime_years")


def infer_lifetime(events: tuple[MaintenanceEvent, ...]) -> int | str | None:
    """
    Infer a patent's lifetime from its maintenance-fee events.

    The first unpaid renewal offset is the lifetime; all three renewals paid
    means the patent reached the maximum term.

    Args:
        events (tuple[MaintenanceEvent, ...]): Fee events of one patent.

    Returns:
        int | str | None: 4, 8, 12, LIFETIME_MAX, or None if undetermined.
    """
    by_offset = {e.event_year_offset: e for e in events}
    for offset in MAINTENANCE_OFFSETS:
        event = by_offset.get(offset)
        if event is None:
            return None
        if not event.paid:
            return offset
    return LIFETIME_MAX
