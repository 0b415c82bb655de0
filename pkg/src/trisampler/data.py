"""Data model and file ingestion: embeddings, qrels, and run files.

All loaded values are immutable after construction and safe to share
across threads. Loaders validate invariants and refuse to construct a
value that violates them.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"TRIV1"
DEFAULT_RUN_TAG = "trisampler"


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


class DataError(ValueError):
    """File contents parse but violate a data invariant."""


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Contiguous id-indexed dense vectors for a corpus or query set.

    Vectors are stored as float32 (matching the on-disk format); similarity
    kernels promote to float64 before accumulating. Ids are opaque strings
    externally and map to dense row indices internally.
    """

    ids: tuple[str, ...]
    vectors: np.ndarray  # (count, dim) float32, row-major
    _row_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DataError(f"vectors must be 2-D, got shape {vectors.shape}")
        object.__setattr__(self, "vectors", vectors)
        if len(self.ids) != vectors.shape[0]:
            raise DataError(
                f"{len(self.ids)} ids for {vectors.shape[0]} vector rows"
            )
        if vectors.shape[1] < 1:
            raise DataError("embedding dim must be positive")
        if not np.all(np.isfinite(vectors)):
            raise DataError("embedding matrix contains non-finite values")
        row_of: dict[str, int] = {}
        for i, doc_id in enumerate(self.ids):
            if doc_id in row_of:
                raise DataError(f"duplicate id {doc_id!r}")
            row_of[doc_id] = i
        object.__setattr__(self, "_row_of", row_of)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.count

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._row_of

    def row_index(self, item_id: str) -> int:
        try:
            return self._row_of[item_id]
        except KeyError:
            raise KeyError(f"unknown id {item_id!r}") from None

    def vector(self, item_id: str) -> np.ndarray:
        return self.vectors[self.row_index(item_id)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(
            self.vectors, other.vectors
        )


@dataclass(frozen=True)
class Qrels:
    """Relevance judgments: query id -> non-empty set of positive doc ids."""

    entries: dict[str, frozenset[str]]

    def __post_init__(self):
        frozen = {}
        for qid, positives in self.entries.items():
            if not positives:
                raise DataError(f"query {qid!r} has an empty positive set")
            frozen[qid] = frozenset(positives)
        object.__setattr__(self, "entries", frozen)

    def positives(self, query_id: str) -> frozenset[str]:
        try:
            return self.entries[query_id]
        except KeyError:
            raise KeyError(f"no judgments for query {query_id!r}") from None

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def query_ids(self) -> list[str]:
        return sorted(self.entries)

    def pairs(self) -> list[tuple[str, str]]:
        """All (query_id, positive_id) pairs in deterministic order."""
        return [
            (qid, pid) for qid in sorted(self.entries)
            for pid in sorted(self.entries[qid])
        ]

    def validate_against(self, corpus: EmbeddingMatrix) -> None:
        """Check every judged document exists in the corpus."""
        for qid, positives in self.entries.items():
            for pid in positives:
                if pid not in corpus:
                    raise DataError(
                        f"qrels reference unknown doc {pid!r} (query {qid!r})"
                    )


@dataclass(frozen=True)
class RunFile:
    """Ranked retrieval results per query.

    Per query: list of (doc_id, score, rank) with rank starting at 1 and
    strictly ascending; scores non-increasing with rank, ties broken by
    doc id ascending.
    """

    rankings: dict[str, tuple[tuple[str, float, int], ...]]

    def __post_init__(self):
        frozen = {}
        for qid, entries in self.rankings.items():
            entries = tuple(
                (str(d), float(s), int(r)) for d, s, r in entries
            )
            seen_docs = set()
            for pos, (doc_id, score, rank) in enumerate(entries):
                if rank != pos + 1:
                    raise DataError(
                        f"query {qid!r}: rank {rank} at position {pos + 1}"
                    )
                if doc_id in seen_docs:
                    raise DataError(f"query {qid!r}: duplicate doc {doc_id!r}")
                seen_docs.add(doc_id)
                if pos > 0:
                    prev_doc, prev_score, _ = entries[pos - 1]
                    if score > prev_score:
                        raise DataError(
                            f"query {qid!r}: score increases at rank {rank}"
                        )
                    if score == prev_score and doc_id < prev_doc:
                        raise DataError(
                            f"query {qid!r}: tie not broken by doc id at rank {rank}"
                        )
            frozen[qid] = entries
        object.__setattr__(self, "rankings", frozen)

    @classmethod
    def from_scores(cls, scores: dict[str, list[tuple[str, float]]]) -> "RunFile":
        """Build a run from unordered (doc_id, score) lists.

        Sorts by score descending, ties by doc id ascending, and assigns
        ranks from 1.
        """
        rankings = {}
        for qid, pairs in scores.items():
            ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
            rankings[qid] = tuple(
                (doc_id, float(score), rank)
                for rank, (doc_id, score) in enumerate(ordered, start=1)
            )
        return cls(rankings)

    def query_ids(self) -> list[str]:
        return sorted(self.rankings)

    def ranking(self, query_id: str) -> tuple[tuple[str, float, int], ...]:
        return self.rankings.get(query_id, ())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an embedding file.

    Layout: magic ``TRIV1``, two little-endian uint64 (count, dim), a UTF-8
    block of ``count`` newline-terminated ids, then ``count * dim``
    little-endian float32 values.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(EMBEDDING_MAGIC) + 16:
        raise FormatError(f"{path}: truncated or empty embedding file")
    if raw[: len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    offset = len(EMBEDDING_MAGIC)
    count, dim = struct.unpack_from("<QQ", raw, offset)
    offset += 16
    if count > 0 and dim == 0:
        raise FormatError(f"{path}: zero dim with count={count}")
    ids = []
    for i in range(count):
        end = raw.find(b"\n", offset)
        if end < 0:
            raise FormatError(f"{path}: id block truncated at id {i}")
        ids.append(raw[offset:end].decode("utf-8"))
        offset = end + 1
    payload = raw[offset:]
    expected = count * dim * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingMatrix(ids=tuple(ids), vectors=vectors)


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write an embedding file; ``load_embeddings`` inverts this exactly."""
    for item_id in matrix.ids:
        if "\n" in item_id:
            raise DataError(f"id {item_id!r} contains a newline")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<QQ", matrix.count, matrix.dim))
        for item_id in matrix.ids:
            fh.write(item_id.encode("utf-8"))
            fh.write(b"\n")
        fh.write(np.ascontiguousarray(matrix.vectors, dtype="<f4").tobytes())


def load_qrels(path: str | Path) -> Qrels:
    """Read TREC-style qrels.

    Accepts 3-field lines (query_id, doc_id, relevance) or the 4-field TREC
    form (query_id, "0", doc_id, relevance). Relevance grades >= 1 are
    treated as binary relevant; queries left without positives are dropped
    with a warning.
    """
    entries: dict[str, set[str]] = {}
    seen_queries: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) == 1:
                fields = line.split()
            if len(fields) < 3:
                raise FormatError(f"{path}:{lineno}: expected >=3 fields")
            if len(fields) >= 4:
                qid, _, doc_id, rel = fields[:4]
            else:
                qid, doc_id, rel = fields[:3]
            try:
                relevance = int(rel)
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: relevance {rel!r} is not an integer"
                ) from None
            seen_queries.add(qid)
            if relevance >= 1:
                entries.setdefault(qid, set()).add(doc_id)
    dropped = seen_queries - set(entries)
    for qid in sorted(dropped):
        logger.warning("qrels: query %r has no positives, dropped", qid)
    return Qrels(entries={q: frozenset(d) for q, d in entries.items()})


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels.entries):
            for doc_id in sorted(qrels.entries[qid]):
                fh.write(f"{qid}\t{doc_id}\t1\n")


def load_run(path: str | Path) -> RunFile:
    """Read a TREC run file (query_id Q0 doc_id rank score tag)."""
    per_query: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields")
            qid, _, doc_id, rank, score, _ = fields
            try:
                per_query.setdefault(qid, []).append(
                    (int(rank), doc_id, float(score))
                )
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
    rankings = {}
    for qid, rows in per_query.items():
        rows.sort()
        rankings[qid] = tuple((d, s, r) for r, d, s in rows)
    return RunFile(rankings)


def write_run(run: RunFile, path: str | Path, tag: str = DEFAULT_RUN_TAG) -> None:
    """Write a run in TREC format, grouped by query and rank-sorted.

    Scores are written with ``repr`` so that load(write(run)) round-trips
    float64 values exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run.rankings):
            for doc_id, score, rank in run.rankings[qid]:
                fh.write(f"{qid} Q0 {doc_id} {rank} {score!r} {tag}\n")
