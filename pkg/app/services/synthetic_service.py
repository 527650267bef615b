# app/services/synthetic_service.py

from __future__ import annotations

import logging
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from app.exception import InvalidInputError
from app.models import LIFETIME_MAX, PatentRecord
from app.services.corpus_service import write_canonical_corpus
from app.utility import derive_seed, format_date, validate_positive_int

logger = logging.getLogger(__name__)

# indicators the label is generated from
PLANTED_FEATURES = ("SC_1", "CP_5")
DEFAULT_VP_RATIO = 2.7
DEFAULT_EXCLUDED_SHARE = 0.05
LABEL_NOISE = 0.1

_EPOCH = date(2000, 1, 1)
_IPC_POOL = (
    "H01L21/02", "H01L29/78", "H01L33/00", "G06F17/30", "H04L29/06",
    "B82Y10/00", "C23C16/44", "G11C11/34", "H01M10/05", "G02B6/12",
)
_COUNTRIES = ("US", "JP", "KR", "DE", "TW", "CN", "FR")
_VOCABULARY = (
    "semiconductor", "device", "method", "layer", "substrate", "transistor", "gate",
    "memory", "cell", "circuit", "wafer", "etching", "deposition", "oxide", "film",
    "optical", "signal", "network", "packet", "battery", "electrode", "display",
    "light", "emitting", "diode", "structure", "manufacturing", "process", "system",
    "apparatus", "control", "data", "storage", "sensor", "thin", "metal", "contact",
)


def _words(rng: np.random.Generator, low: int, high: int) -> str:
    return " ".join(rng.choice(_VOCABULARY, size=int(rng.integers(low, high + 1))))


def _maintenance(lifetime: int | str) -> list[dict]:
    if lifetime == LIFETIME_MAX:
        return [{"event_year_offset": o, "paid": True} for o in (4, 8, 12)]
    events = [{"event_year_offset": o, "paid": True} for o in (4, 8, 12) if o < lifetime]
    events.append({"event_year_offset": lifetime, "paid": False})
    return events


def planted_labels(
    score: np.ndarray, n_vp: int, rng: np.random.Generator
) -> np.ndarray:
    """Mark the n_vp rows with the highest noisy score as VP (1)."""
    noisy = score + LABEL_NOISE * rng.standard_normal(score.shape[0])
    order = np.argsort(-noisy, kind="stable")
    labels = np.zeros(score.shape[0], dtype=int)
    labels[order[:n_vp]] = 1
    return labels


def generate_corpus(
    n_patents: int = 2000,
    vp_ratio: float = DEFAULT_VP_RATIO,
    excluded_share: float = DEFAULT_EXCLUDED_SHARE,
    seed: int = 0,
) -> list[PatentRecord]:
    """
    Generate a synthetic corpus whose label depends only on two indicators.

    VP patents (all renewals paid) have high full-text and abstract word counts
    (SC_1 and CP_5); NVP patents lapse at the 4-year renewal. A small share
    lapses at 8 years and is EXCLUDED under the default label policy. Every
    other field is drawn independently of the label.

    Args:
        n_patents (int): Corpus size.
        vp_ratio (float): VP:NVP ratio among labelled patents.
        excluded_share (float): Share of patents with an 8-year lifetime.
        seed (int): Generator seed.

    Returns:
        list[PatentRecord]: Records sorted by patent_id.

    Raises:
        InvalidInputError: On a bad size, ratio or share.
    """
    n_patents = validate_positive_int(n_patents, "n_patents")
    if vp_ratio <= 0:
        raise InvalidInputError("vp_ratio must be positive.")
    if not 0.0 <= excluded_share < 1.0:
        raise InvalidInputError("excluded_share must be in [0, 1).")

    rng = np.random.default_rng(derive_seed(seed, "synthetic"))
    n_excluded = int(round(n_patents * excluded_share))
    n_labelled = n_patents - n_excluded
    n_vp = int(round(n_labelled * vp_ratio / (1.0 + vp_ratio)))

    z_fulltext = rng.standard_normal(n_patents)
    z_abstract = rng.standard_normal(n_patents)
    excluded = np.zeros(n_patents, dtype=bool)
    excluded[rng.choice(n_patents, n_excluded, replace=False)] = True
    labelled = np.flatnonzero(~excluded)
    labels = planted_labels(z_fulltext[labelled] + z_abstract[labelled], n_vp, rng)

    lifetimes: list[int | str] = [8] * n_patents
    for row, label in zip(labelled, labels):
        lifetimes[row] = LIFETIME_MAX if label == 1 else 4

    assignees = [(f"Synthetic Assignee {i:02d}", rng.choice(_COUNTRIES)) for i in range(40)]
    records = []
    for i in range(n_patents):
        filing = _EPOCH + timedelta(days=int(rng.integers(0, 3650)))
        grant = filing + timedelta(days=int(rng.integers(300, 1500)))
        n_claims = int(rng.integers(1, 26))
        n_independent = int(rng.integers(1, min(4, n_claims) + 1))
        claims = [
            {"is_independent": c < n_independent, "word_count": int(rng.integers(20, 201))}
            for c in range(n_claims)
        ]
        citations = []
        for c in range(int(rng.integers(0, 9))):
            cited_filing = filing - timedelta(days=int(rng.integers(100, 5000)))
            citations.append(
                {
                    "cited_id": f"C{i:06d}-{c}",
                    "cited_country": str(rng.choice(_COUNTRIES)),
                    "cited_filing_date": format_date(cited_filing),
                    "cited_ipcs": list(rng.choice(_IPC_POOL, size=int(rng.integers(1, 3)), replace=False)),
                    "cited_title": _words(rng, 3, 7),
                }
            )
        picked = rng.choice(len(assignees), size=int(rng.integers(1, 3)), replace=False)
        row = {
            "patent_id": f"SYN{i:06d}",
            "filing_date": format_date(filing),
            "grant_date": format_date(grant),
            "title": _words(rng, 4, 8),
            "abstract_word_count": max(10, int(round(120 + 35 * z_abstract[i]))),
            "fulltext_word_count": max(200, int(round(np.exp(8.0 + 0.4 * z_fulltext[i])))),
            "claims": claims,
            "ipcs": list(rng.choice(_IPC_POOL, size=int(rng.integers(1, 4)), replace=False)),
            "assignees": [
                {
                    "name": assignees[a][0],
                    "country": str(assignees[a][1]),
                    "overdue_fee_count": int(rng.integers(0, 3)),
                }
                for a in picked
            ],
            "inventors": [
                {"name": f"Inventor {int(rng.integers(0, 400)):03d}", "country": str(rng.choice(_COUNTRIES))}
                for _ in range(int(rng.integers(1, 6)))
            ],
            "backward_citations": citations,
            "npl_citation_count": int(rng.integers(0, 11)),
            "priorities": [
                {"priority_id": f"P{i:06d}-{p}", "country": str(rng.choice(_COUNTRIES))}
                for p in range(int(rng.integers(0, 3)))
            ],
            "maintenance_events": _maintenance(lifetimes[i]),
        }
        records.append(PatentRecord.from_dict(row))

    logger.info(
        "Generated %d patents (%d VP, %d NVP, %d EXCLUDED)",
        n_patents, n_vp, n_labelled - n_vp, n_excluded,
    )
    return records


def write_synthetic_corpus(
    path: str | Path,
    n_patents: int = 2000,
    vp_ratio: float = DEFAULT_VP_RATIO,
    excluded_share: float = DEFAULT_EXCLUDED_SHARE,
    seed: int = 0,
) -> Path:
    """Generate a synthetic corpus and write it as canonical JSONL."""
    return write_canonical_corpus(generate_corpus(n_patents, vp_ratio, excluded_share, seed), path)
