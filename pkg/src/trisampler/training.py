"""Desk-scale dual-encoder training with periodic index refresh.

The encoder is a pair of linear projections (one per tower), trained with
plain SGD on the softmax contrastive loss over (query, positive,
n-negatives) triples. Every ``refresh_every`` steps the corpus is
re-encoded, the index rebuilt (bumping its epoch), and negatives resampled
with the configured sampler. Cached candidate scores are refreshed only at
those boundaries, which approximates the fully dynamic setting well enough
at this scale.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .data import EmbeddingMatrix, Qrels
from .index import EXACT, Index, build
from .rng import make_rng
from .sampling import SamplerConfig, sample_all

# Production runs amortize resampling over 2000 optimizer steps; the desk
# default scales that cadence to desk-sized corpora.
FULL_SCALE_REFRESH_EVERY = 2000
DESK_REFRESH_EVERY = 200


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class TrainingTriple:
    query_id: str
    positive_id: str
    negative_ids: tuple[str, ...]


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.05
    steps: int = 1000
    refresh_every: int = DESK_REFRESH_EVERY
    batch_size: int = 32
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainerConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown trainer key(s): {sorted(unknown)}")
        if "sampler" in raw and isinstance(raw["sampler"], dict):
            raw["sampler"] = SamplerConfig.from_dict(raw["sampler"])
        return cls(**raw)


class ToyEncoder:
    """Two linear towers mapping input features to the similarity space.

    Scores of encoded vectors stay hand-differentiable: the whole model is
    h_q = x_q @ W_q and h_d = x_d @ W_d with s = h_q . h_d.
    """

    def __init__(self, w_query: np.ndarray, w_doc: np.ndarray):
        self.w_query = np.asarray(w_query, dtype=np.float64)
        self.w_doc = np.asarray(w_doc, dtype=np.float64)
        if self.w_query.shape != self.w_doc.shape or self.w_query.ndim != 2:
            raise ValueError("towers must share a 2-D shape")

    @classmethod
    def initialize(cls, dim_in: int, dim_out: int, seed: int) -> "ToyEncoder":
        # Gaussian / sqrt(dim) init: near-orthogonal columns, unit-ish scale
        rng = make_rng("encoder-init", seed)
        scale = 1.0 / np.sqrt(dim_in)
        return cls(
            rng.standard_normal((dim_in, dim_out)) * scale,
            rng.standard_normal((dim_in, dim_out)) * scale,
        )

    def encode_queries(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.w_query

    def encode_docs(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.w_doc

    def encoded_matrix(self, matrix: EmbeddingMatrix, tower: str) -> EmbeddingMatrix:
        encode = self.encode_queries if tower == "query" else self.encode_docs
        return EmbeddingMatrix(
            ids=matrix.ids,
            vectors=encode(matrix.vectors).astype(np.float32),
        )

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.w_query)) and np.all(np.isfinite(self.w_doc))
        )

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.w_query.copy(), self.w_doc.copy())

    def save(self, path: str | Path) -> None:
        np.savez(path, w_query=self.w_query, w_doc=self.w_doc)

    @classmethod
    def load(cls, path: str | Path) -> "ToyEncoder":
        with np.load(path) as data:
            return cls(data["w_query"], data["w_doc"])


def contrastive_loss(s_pos: float, s_negs) -> float:
    """Softmax cross-entropy of the positive against n negatives.

    -log(exp(s_pos) / (exp(s_pos) + sum_i exp(s_neg_i))), evaluated in
    log-sum-exp form so large scores cannot overflow.
    """
    s_negs = np.asarray(s_negs, dtype=np.float64)
    if s_negs.size == 0:
        raise ValueError("need at least one negative score")
    scores = np.concatenate(([float(s_pos)], s_negs))
    return float(logsumexp(scores) - scores[0])


def loss_gradients(s_pos: float, s_negs) -> tuple[float, np.ndarray]:
    """Gradients of :func:`contrastive_loss` w.r.t. the scores.

    g_pos = -sum_i p_i and g_neg_i = p_i, where p is the softmax of the
    negative scores against the full score vector. g_pos is computed as
    the negated sum of the negative gradients, so g_pos + sum(g_negs) is
    exactly zero.
    """
    s_negs = np.asarray(s_negs, dtype=np.float64)
    if s_negs.size == 0:
        raise ValueError("need at least one negative score")
    scores = np.concatenate(([float(s_pos)], s_negs))
    probs = softmax(scores)
    g_negs = probs[1:]
    g_pos = -float(np.sum(g_negs))
    return g_pos, g_negs


@dataclass
class TrainingLog:
    """Per-interval records: step, loss, epoch, in_region_fraction, wall_ms."""

    records: list[dict] = field(default_factory=list)

    def append(self, **record) -> None:
        self.records.append(record)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True))
                fh.write("\n")

    def deterministic_records(self) -> list[dict]:
        """Records with the wall-clock field stripped, for reproducibility
        comparisons."""
        return [
            {k: v for k, v in record.items() if k != "wall_ms"}
            for record in self.records
        ]


def _region_fraction(
    samples, encoded_queries: np.ndarray, encoded_docs: np.ndarray,
    query_row: dict, doc_row: dict,
) -> float:
    """Fraction of sampled negatives strictly inside the triangular region
    under the embeddings they were sampled from."""
    inside = 0
    total = 0
    for s in samples:
        hq = encoded_queries[query_row[s.query_id]]
        hp = encoded_docs[doc_row[s.positive_id]]
        for neg_id in s.negatives:
            hn = encoded_docs[doc_row[neg_id]]
            total += 1
            if float(hp @ hn) > float(hq @ hn):
                inside += 1
    return inside / total if total else 0.0


def _batch_loss_and_grads(
    encoder: ToyEncoder,
    batch: list[TrainingTriple],
    x_query: np.ndarray,
    x_doc: np.ndarray,
    query_row: dict,
    doc_row: dict,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean loss over the batch and gradients w.r.t. the two towers.

    Triples are grouped by negative count so each group vectorizes; counts
    differ only when a candidate pool ran dry.
    """
    total = len(batch)
    loss_sum = 0.0
    grad_wq = np.zeros_like(encoder.w_query)
    grad_wd = np.zeros_like(encoder.w_doc)

    groups: dict[int, list[TrainingTriple]] = {}
    for triple in batch:
        groups.setdefault(len(triple.negative_ids), []).append(triple)

    for n_neg, group in groups.items():
        b = len(group)
        q_idx = np.array([query_row[t.query_id] for t in group])
        p_idx = np.array([doc_row[t.positive_id] for t in group])
        n_idx = np.array([[doc_row[d] for d in t.negative_ids] for t in group])

        xq = x_query[q_idx]                    # (b, din)
        xp = x_doc[p_idx]                      # (b, din)
        xn = x_doc[n_idx.reshape(-1)].reshape(b, n_neg, -1)

        hq = xq @ encoder.w_query              # (b, dout)
        hp = xp @ encoder.w_doc                # (b, dout)
        hn = xn @ encoder.w_doc                # (b, n, dout)

        s_pos = np.sum(hq * hp, axis=1)        # (b,)
        s_neg = np.einsum("bd,bnd->bn", hq, hn)

        all_scores = np.concatenate([s_pos[:, None], s_neg], axis=1)
        loss_sum += float(np.sum(logsumexp(all_scores, axis=1) - s_pos))

        probs = softmax(all_scores, axis=1)
        g_neg = probs[:, 1:]                   # (b, n)
        g_pos = -g_neg.sum(axis=1)             # (b,)

        d_hq = g_pos[:, None] * hp + np.einsum("bn,bnd->bd", g_neg, hn)
        d_hp = g_pos[:, None] * hq
        d_hn = g_neg[:, :, None] * hq[:, None, :]

        grad_wq += xq.T @ d_hq
        grad_wd += xp.T @ d_hp + np.einsum("bni,bno->io", xn, d_hn)

    return loss_sum / total, grad_wq / total, grad_wd / total


def train(
    corpus: EmbeddingMatrix,
    queries: EmbeddingMatrix,
    qrels: Qrels,
    config: TrainerConfig,
) -> tuple[ToyEncoder, TrainingLog]:
    """SGD on the dual encoder with periodic refresh of index and negatives.

    Returns the trained encoder and the training log. Raises
    :class:`DivergenceError` if the loss or any parameter goes non-finite.
    The index epoch is bumped exactly floor(steps / refresh_every) times.
    """
    qrels.validate_against(corpus)
    encoder = ToyEncoder.initialize(corpus.dim, corpus.dim, config.seed)
    log = TrainingLog()

    x_query = queries.vectors.astype(np.float64)
    x_doc = corpus.vectors.astype(np.float64)
    query_row = {qid: i for i, qid in enumerate(queries.ids)}
    doc_row = {did: i for i, did in enumerate(corpus.ids)}
    batch_rng = make_rng("batch-order", config.seed)
    started = time.perf_counter()

    def wall_ms() -> float:
        return (time.perf_counter() - started) * 1000.0

    index: Index | None = None
    triples: list[TrainingTriple] = []
    order: np.ndarray = np.empty(0, dtype=np.int64)
    cursor = 0
    region_fraction = 0.0

    def refresh() -> None:
        nonlocal index, triples, region_fraction
        encoded_corpus = encoder.encoded_matrix(corpus, "doc")
        encoded_queries = encoder.encoded_matrix(queries, "query")
        index = build(encoded_corpus, EXACT, previous=index)
        samples = sample_all(
            index, encoded_queries, qrels, config.sampler, epoch=index.epoch
        )
        triples = [
            TrainingTriple(s.query_id, s.positive_id, s.negatives)
            for s in samples
        ]
        region_fraction = _region_fraction(
            samples,
            encoded_queries.vectors.astype(np.float64),
            encoded_corpus.vectors.astype(np.float64),
            query_row,
            doc_row,
        )

    def next_batch() -> list[TrainingTriple]:
        nonlocal order, cursor
        batch = []
        while len(batch) < min(config.batch_size, len(triples)):
            if cursor >= len(order):
                order = batch_rng.permutation(len(triples))
                cursor = 0
            batch.append(triples[order[cursor]])
            cursor += 1
        return batch

    refresh()
    log.append(
        step=0,
        loss=None,
        epoch=index.epoch,
        in_region_fraction=region_fraction,
        wall_ms=wall_ms(),
    )

    for step in range(1, config.steps + 1):
        batch = next_batch()
        loss, grad_wq, grad_wd = _batch_loss_and_grads(
            encoder, batch, x_query, x_doc, query_row, doc_row
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")

        encoder.w_query -= config.learning_rate * grad_wq
        encoder.w_doc -= config.learning_rate * grad_wd
        if not encoder.is_finite():
            raise DivergenceError(f"non-finite parameters at step {step}")

        if step % config.refresh_every == 0:
            refresh()

        if step % config.log_every == 0 or step == config.steps:
            log.append(
                step=step,
                loss=loss,
                epoch=index.epoch,
                in_region_fraction=region_fraction,
                wall_ms=wall_ms(),
            )

    return encoder, log
