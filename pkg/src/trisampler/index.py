"""Top-K inner-product retrieval over a corpus.

Exact mode scores every row and is the reference for all correctness
claims; its scores equal :func:`trisampler.geometry.dot_score` recomputed
from the raw vectors, bit-exactly. Approximate mode is a clustering-based
(IVF-style) index behind the same interface, intended for scale
experiments only. :func:`brute_force_top_k` is a deliberately independent
exhaustive scan used as the test oracle; do not "simplify" it to share the
exact index's selection code.

An Index is immutable after build; concurrent queries are safe. Rebuilds
produce a fresh Index with a bumped epoch and the caller swaps it in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .data import EmbeddingMatrix
from .geometry import dot_score, score_matrix
from .rng import make_rng

EXACT = "exact"
APPROXIMATE = "approximate"


@dataclass(frozen=True)
class TopKResult:
    """Entries (doc_id, score) sorted by score descending, ties by doc id
    ascending; unique by doc id."""

    entries: tuple[tuple[str, float], ...]

    def ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class Index:
    corpus: EmbeddingMatrix
    mode: str
    epoch: int = 0
    # approximate-mode state; None in exact mode
    _centroids: np.ndarray | None = field(default=None, repr=False)
    _cluster_members: tuple[np.ndarray, ...] | None = field(default=None, repr=False)
    _n_probe: int = field(default=0, repr=False)
    # rank of each row's id in ascending id order, for tie-breaking
    _id_rank: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        order = sorted(range(self.corpus.count), key=lambda i: self.corpus.ids[i])
        id_rank = np.empty(self.corpus.count, dtype=np.int64)
        id_rank[order] = np.arange(self.corpus.count)
        object.__setattr__(self, "_id_rank", id_rank)


def build(
    corpus: EmbeddingMatrix,
    mode: str = EXACT,
    *,
    previous: Index | None = None,
    n_clusters: int | None = None,
    n_probe: int | None = None,
    seed: int = 0,
) -> Index:
    """Build an index over a non-empty corpus.

    ``previous`` carries the epoch counter across rebuilds: the new index
    gets ``previous.epoch + 1``.
    """
    if corpus.count == 0:
        raise ValueError("cannot index an empty corpus")
    if mode not in (EXACT, APPROXIMATE):
        raise ValueError(f"unknown index mode {mode!r}")
    epoch = 0 if previous is None else previous.epoch + 1
    if mode == EXACT:
        return Index(corpus=corpus, mode=EXACT, epoch=epoch)

    if n_clusters is None:
        n_clusters = max(1, int(round(np.sqrt(corpus.count))))
    n_clusters = min(n_clusters, corpus.count)
    if n_probe is None:
        n_probe = max(1, -(-n_clusters // 3))  # ceil(n_clusters / 3)
    n_probe = min(max(1, n_probe), n_clusters)

    data = corpus.vectors.astype(np.float64)
    if n_clusters == 1:
        centroids = data.mean(axis=0, keepdims=True)
        labels = np.zeros(corpus.count, dtype=np.int64)
    else:
        centroids, labels = kmeans2(
            data, n_clusters, minit="++", seed=make_rng("ivf", seed, epoch)
        )
    members = tuple(
        np.flatnonzero(labels == c) for c in range(centroids.shape[0])
    )
    return Index(
        corpus=corpus,
        mode=APPROXIMATE,
        epoch=epoch,
        _centroids=centroids,
        _cluster_members=members,
        _n_probe=n_probe,
    )


def _select_top_k(
    index: Index, rows: np.ndarray, scores: np.ndarray, k: int
) -> TopKResult:
    """Pick the k best (score desc, id asc) among candidate rows."""
    id_rank = index._id_rank[rows]
    order = np.lexsort((id_rank, -scores))
    top = order[:k]
    corpus_ids = index.corpus.ids
    return TopKResult(
        entries=tuple(
            (corpus_ids[rows[i]], float(scores[i])) for i in top
        )
    )


def top_k(
    index: Index,
    query,
    k: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> TopKResult:
    """The k highest-inner-product corpus rows not in ``exclude``.

    Returns fewer entries when the corpus minus the exclusions is smaller
    than k. Exact mode scans everything; approximate mode probes the
    nearest clusters and over-fetches ``k + len(exclude)`` before
    filtering.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != index.corpus.dim:
        raise ValueError(
            f"query dim {query.shape} does not match corpus dim {index.corpus.dim}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")

    if index.mode == EXACT:
        scores = score_matrix(index.corpus.vectors, query)
        if exclude:
            keep = np.fromiter(
                (doc_id not in exclude for doc_id in index.corpus.ids),
                dtype=bool,
                count=index.corpus.count,
            )
            rows = np.flatnonzero(keep)
        else:
            rows = np.arange(index.corpus.count)
        return _select_top_k(index, rows, scores[rows], k)

    # approximate: probe clusters by centroid inner product, over-fetch,
    # then filter exclusions
    centroid_scores = index._centroids @ query
    probe_order = np.argsort(-centroid_scores)[: index._n_probe]
    rows = np.concatenate([index._cluster_members[c] for c in probe_order])
    scores = score_matrix(index.corpus.vectors[rows], query)
    fetched = _select_top_k(index, rows, scores, k + len(exclude))
    entries = tuple(
        (doc_id, score) for doc_id, score in fetched.entries
        if doc_id not in exclude
    )[:k]
    return TopKResult(entries=entries)


def brute_force_top_k(
    corpus: EmbeddingMatrix,
    query,
    k: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> TopKResult:
    """Exhaustive-scan oracle: scores each row one at a time via
    :func:`dot_score` and sorts in plain Python."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != corpus.dim:
        raise ValueError(
            f"query dim {query.shape} does not match corpus dim {corpus.dim}"
        )
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = []
    for i, doc_id in enumerate(corpus.ids):
        if doc_id in exclude:
            continue
        scored.append((doc_id, dot_score(corpus.vectors[i], query)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return TopKResult(entries=tuple(scored[:k]))


def recall_against_exact(
    approx_index: Index,
    exact_index: Index,
    queries: np.ndarray,
    k: int,
) -> float:
    """Mean fraction of exact top-k ids recovered by the approximate index."""
    if approx_index.corpus is not exact_index.corpus:
        raise ValueError("indices must share a corpus")
    hits = 0
    total = 0
    for q in np.asarray(queries, dtype=np.float64):
        truth = set(top_k(exact_index, q, k).ids())
        got = set(top_k(approx_index, q, k).ids())
        hits += len(truth & got)
        total += len(truth)
    return hits / total if total else 1.0
