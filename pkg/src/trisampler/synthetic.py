"""Clustered synthetic corpora for desk-scale retrieval experiments.

The generator plants a geometry in which the triangular-region test is
informative: documents cluster around unit-sphere centers, each query sits
inside one cluster with its positive displaced a controlled distance away,
and a configurable fraction of documents are "false-negative traps" placed
very close to a query without being judged relevant to it. Traps score
higher against their query than any honest negative, so samplers that
chase raw query similarity keep pulling them, while the region weighting
(s(d+, d-) >= s(q, d-)) rejects them.

Features double as oracle embeddings: with the identity encoder, exact
retrieval on the raw vectors already ranks positives near the top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingMatrix, Qrels
from .rng import make_rng

# Internal geometry (chordal offsets on the unit sphere). Queries sit
# QUERY_SPREAD from their cluster center, filler documents FILLER_SPREAD;
# traps land TRAP_OFFSET_FACTOR * positive_spread from a query, i.e.
# farther than the positive but closer than any honest cluster member.
QUERY_SPREAD = 0.35
FILLER_SPREAD = 0.45
TRAP_OFFSET_FACTOR = 2.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; the JSON schema of dataset spec files."""

    clusters: int = 20
    docs: int = 5000
    queries: int = 200
    dim: int = 64
    positive_spread: float = 0.25
    trap_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 1:
            raise ValueError("need at least one cluster")
        if self.queries < 1:
            raise ValueError("need at least one query")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.docs <= self.queries:
            raise ValueError(
                "docs must exceed queries (one positive per query plus "
                "at least one negative)"
            )
        if self.positive_spread <= 0:
            raise ValueError("positive_spread must be positive")
        if not 0.0 <= self.trap_rate <= 1.0:
            raise ValueError("trap_rate must be in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown dataset spec key(s): {sorted(unknown)}")
        return cls(**raw)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _offset_points(
    base: np.ndarray, spread: float, rng: np.random.Generator
) -> np.ndarray:
    """Points at chordal distance ``spread`` from each base row,
    re-projected to the unit sphere."""
    directions = _unit(rng.standard_normal(base.shape))
    return _unit(base + spread * directions)


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[EmbeddingMatrix, EmbeddingMatrix, Qrels]:
    """Generate (corpus, queries, qrels) from a spec, deterministically."""
    rng = make_rng("synthetic", spec.seed)
    n_traps = int(round(spec.trap_rate * spec.docs))
    n_traps = min(n_traps, spec.docs - spec.queries)
    n_fillers = spec.docs - spec.queries - n_traps

    centers = _unit(rng.standard_normal((spec.clusters, spec.dim)))

    query_cluster = np.arange(spec.queries) % spec.clusters
    query_vecs = _offset_points(centers[query_cluster], QUERY_SPREAD, rng)

    positive_vecs = _offset_points(query_vecs, spec.positive_spread, rng)

    trap_query = np.arange(n_traps) % spec.queries
    trap_vecs = _offset_points(
        query_vecs[trap_query],
        TRAP_OFFSET_FACTOR * spec.positive_spread,
        rng,
    )

    filler_cluster = np.arange(n_fillers) % spec.clusters
    filler_vecs = _offset_points(centers[filler_cluster], FILLER_SPREAD, rng)

    doc_vecs = np.concatenate([positive_vecs, trap_vecs, filler_vecs], axis=0)
    width = len(str(spec.docs - 1))
    doc_ids = tuple(f"d{i:0{width}d}" for i in range(spec.docs))
    qwidth = len(str(spec.queries - 1))
    query_ids = tuple(f"q{i:0{qwidth}d}" for i in range(spec.queries))

    corpus = EmbeddingMatrix(ids=doc_ids, vectors=doc_vecs.astype(np.float32))
    queries = EmbeddingMatrix(
        ids=query_ids, vectors=query_vecs.astype(np.float32)
    )
    qrels = Qrels(
        entries={query_ids[i]: frozenset({doc_ids[i]}) for i in range(spec.queries)}
    )
    return corpus, queries, qrels
