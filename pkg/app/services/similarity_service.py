# app/services/similarity_service.py

from __future__ import annotations

import logging
import re
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.feature_extraction.text import TfidfVectorizer

from app.exception import InvalidInputError, NotFoundError
from app.models import PatentRecord

logger = logging.getLogger(__name__)

TOKEN_PATTERN = r"(?u)\b\w+\b"
_TOKEN = re.compile(TOKEN_PATTERN)


class EmbeddingSource(Enum):
    """
    Enum representing where title vectors come from.

    Attributes:
        EXTERNAL_FILE: Precomputed unit vectors keyed by patent_id.
        LEXICAL_FALLBACK: Corpus-level TF-IDF over lower-cased word tokens.
    """

    EXTERNAL_FILE = "external-file"
    LEXICAL_FALLBACK = "lexical-fallback"


def tokenize(text: str | None) -> list[str]:
    """Split text into lower-cased word tokens."""
    if not text:
        return []
    return _TOKEN.findall(text.lower())


def _clip(value: float) -> float:
    return float(min(1.0, max(-1.0, value)))


class LexicalTitleSimilarity:
    """
    Cosine similarity of TF-IDF title vectors fitted on the corpus titles.
    """

    def __init__(self, documents: list[str]) -> None:
        """
        Fit the TF-IDF vocabulary and document frequencies.

        Args:
            documents (list[str]): Every title of the corpus (patents and cited patents).
        """
        fit_docs = [d for d in documents if tokenize(d)]
        self._vectorizer: TfidfVectorizer | None = None
        if fit_docs:
            self._vectorizer = TfidfVectorizer(
                lowercase=True, token_pattern=TOKEN_PATTERN, norm="l2", smooth_idf=True
            )
            self._vectorizer.fit(fit_docs)
        logger.debug("Fitted TF-IDF on %d titles", len(fit_docs))

    def similarity(
        self,
        title_a: str | None,
        title_b: str | None,
        id_a: str | None = None,
        id_b: str | None = None,
    ) -> float:
        """
        Return the TF-IDF cosine similarity of two titles (ids are ignored).

        Returns:
            float: Similarity in [-1, 1]; 0 when either title has no tokens.
        """
        if self._vectorizer is None or not tokenize(title_a) or not tokenize(title_b):
            return 0.0
        vectors = self._vectorizer.transform([title_a, title_b])
        return _clip(vectors[0].multiply(vectors[1]).sum())


class EmbeddingTitleSimilarity:
    """
    Cosine similarity of precomputed title vectors looked up by patent_id.
    """

    def __init__(self, vectors: dict[str, np.ndarray]) -> None:
        self.vectors = vectors

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingTitleSimilarity":
        """
        Load an embedding file of lines "patent_id, d, v1..vd".

        Args:
            path (str | Path): Embedding file.

        Returns:
            EmbeddingTitleSimilarity: Loaded backend.

        Raises:
            NotFoundError: If the file does not exist.
            InvalidInputError: If a line is malformed or d is not constant.
        """
        try:
            frame = pd.read_csv(path, header=None, skipinitialspace=True, dtype={0: str})
        except FileNotFoundError:
            raise NotFoundError(f"Embedding file '{path}' does not exist.")

        vectors: dict[str, np.ndarray] = {}
        dimension = None
        for line_no, row in enumerate(frame.itertuples(index=False), 1):
            patent_id = str(row[0]).strip()
            try:
                d = int(row[1])
                values = np.asarray(row[2 : 2 + d], dtype=float)
            except (TypeError, ValueError):
                raise InvalidInputError(f"Embedding line {line_no} is malformed.")
            if dimension is None:
                dimension = d
            if d != dimension or values.shape[0] != d or np.isnan(values).any():
                raise InvalidInputError(
                    f"Embedding line {line_no} does not carry {dimension} values."
                )
            vectors[patent_id] = values
        logger.info("Loaded %d title vectors of dimension %s", len(vectors), dimension)
        return cls(vectors)

    def _vector(self, patent_id: str | None) -> np.ndarray:
        if patent_id is None or patent_id not in self.vectors:
            raise NotFoundError(f"No title embedding for patent_id '{patent_id}'.")
        return self.vectors[patent_id]

    def similarity(
        self,
        title_a: str | None,
        title_b: str | None,
        id_a: str | None = None,
        id_b: str | None = None,
    ) -> float:
        """
        Return the cosine similarity of the vectors stored for id_a and id_b.

        Raises:
            NotFoundError: If either id has no vector.
        """
        if not tokenize(title_a) or not tokenize(title_b):
            return 0.0
        a, b = self._vector(id_a), self._vector(id_b)
        denominator = float(np.linalg.norm(a) * np.linalg.norm(b))
        if denominator == 0.0:
            return 0.0
        return _clip(float(a @ b) / denominator)


TitleSimilarity = LexicalTitleSimilarity | EmbeddingTitleSimilarity


def semantic_similarity(
    title_a: str | None,
    title_b: str | None,
    backend: TitleSimilarity,
    id_a: str | None = None,
    id_b: str | None = None,
) -> float:
    """
    Return the semantic similarity of two patent titles.

    Args:
        title_a (str | None): First title.
        title_b (str | None): Second title.
        backend (TitleSimilarity): Lexical or embedding backend.
        id_a (str | None): patent_id of the first title (embedding lookups).
        id_b (str | None): patent_id of the second title (embedding lookups).

    Returns:
        float: Similarity in [-1, 1].
    """
    return backend.similarity(title_a, title_b, id_a, id_b)


def corpus_titles(records: list[PatentRecord]) -> list[str]:
    """Return every patent title and cited title of a corpus, in corpus order."""
    titles = []
    for record in records:
        titles.append(record.title)
        titles.extend(c.cited_title for c in record.backward_citations if c.cited_title)
    return titles


def build_similarity(
    source: EmbeddingSource,
    records: list[PatentRecord],
    embedding_path: str | Path | None = None,
) -> TitleSimilarity:
    """
    Build the title-similarity backend for a corpus.

    Raises:
        InvalidInputError: If external-file mode has no embedding path.
    """
    if source == EmbeddingSource.EXTERNAL_FILE:
        if not embedding_path:
            raise InvalidInputError("external-file embeddings need an embedding_path.")
        return EmbeddingTitleSimilarity.from_file(embedding_path)
    return LexicalTitleSimilarity(corpus_titles(records))
