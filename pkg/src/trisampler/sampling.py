"""Two-stage triangular-region negative sampling and the baseline samplers.

The main pipeline per (query, positive) pair:

1. candidates: top-K non-positive docs, ranked by similarity to the query
   (axis "qd") or to the positive (axis "dd"), each carrying both cached
   scores s_neg = s(q, d-) and s_pp = s(d+, d-);
2. transitional stage: draw m of them without replacement under a Gaussian
   weighting w = exp(-c * (s_neg - s_pos)^2) that damps negatives whose
   query score is far from the positive's (in either direction);
3. final stage: draw n of those under w = relu(s_pp - s_neg), which is
   nonzero exactly for candidates strictly inside the triangular region
   and grows as the negative approaches the positive.

When no transitional candidate lies strictly inside the region the final
stage falls back to the Gaussian weights so a full set of negatives is
always produced; the sample is flagged so downstream checks can exempt it.

Baseline samplers (uniform, topk_weighted, debiased, simans, top_ns,
rand_ns) reuse stage 1 and replace stages 2-3 with a single draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import EmbeddingMatrix, Qrels
from .geometry import dot_score
from .index import Index, top_k
from .rng import query_rng, weighted_sample_without_replacement

logger = logging.getLogger(__name__)

# Candidate pool sizes by corpus profile: 200 for passage-scale corpora,
# 400 for document-scale ones.
PASSAGE_POOL_K = 200
DOCUMENT_POOL_K = 400
# Production positive:negative ratio is 1:15.
DEFAULT_NEGATIVES = 15

VARIANTS = (
    "trisampler",
    "uniform",
    "top_ns",
    "rand_ns",
    "topk_weighted",
    "debiased",
    "simans",
    "candidates_qd",
    "candidates_dd",
)

PROFILES = ("passage", "document")


class ScoredCandidate(NamedTuple):
    doc_id: str
    s_neg: float  # s(query, candidate)
    s_pp: float   # s(positive, candidate)


@dataclass(frozen=True)
class SamplerConfig:
    """All tunables of the sampling pipeline.

    ``K`` and ``m`` may be left None: K resolves from ``profile`` (200 for
    "passage", 400 for "document") and m defaults to 4n, keeping the
    transitional pool meaningfully larger than the final draw.
    ``transitional_sharpness`` is the Gaussian coefficient c in
    exp(-c * (s_neg - s_pos)^2); 0.25 is the standard operating point.
    """

    variant: str = "trisampler"
    K: int | None = None
    m: int | None = None
    n: int = DEFAULT_NEGATIVES
    seed: int = 0
    profile: str = "passage"
    transitional_sharpness: float = 0.25
    simans_a: float = 0.5
    simans_b: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        k, m = self.effective_k, self.effective_m
        if not 1 <= self.n <= m <= k:
            raise ValueError(
                f"need 1 <= n <= m <= K, got n={self.n}, m={m}, K={k}"
            )
        if self.transitional_sharpness <= 0:
            raise ValueError("transitional_sharpness must be positive")

    @property
    def effective_k(self) -> int:
        if self.K is not None:
            return self.K
        return PASSAGE_POOL_K if self.profile == "passage" else DOCUMENT_POOL_K

    @property
    def effective_m(self) -> int:
        return self.m if self.m is not None else 4 * self.n

    @classmethod
    def from_dict(cls, raw: dict) -> "SamplerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown sampler key(s): {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class CandidateSet:
    """Negative candidates for one (query, positive) pair, with cached
    scores. Never contains a positive of the query; ids unique."""

    query_id: str
    positive_id: str
    candidates: tuple[ScoredCandidate, ...]

    def __post_init__(self):
        seen = set()
        for cand in self.candidates:
            if cand.doc_id in seen:
                raise ValueError(f"duplicate candidate {cand.doc_id!r}")
            seen.add(cand.doc_id)
            if not (np.isfinite(cand.s_neg) and np.isfinite(cand.s_pp)):
                raise ValueError(f"non-finite score for {cand.doc_id!r}")

    def __len__(self) -> int:
        return len(self.candidates)

    def s_neg_array(self) -> np.ndarray:
        return np.array([c.s_neg for c in self.candidates], dtype=np.float64)

    def s_pp_array(self) -> np.ndarray:
        return np.array([c.s_pp for c in self.candidates], dtype=np.float64)


@dataclass(frozen=True)
class NegativeSample:
    """Sampled negatives for one (query, positive) pair.

    ``weights_used`` holds, for each negative, its normalized probability
    at the moment it was drawn (1.0 for deterministic selection, 0.0 for
    zero-weight fill-ins). ``used_fallback`` marks samples where the
    region weighting was degenerate and the transitional weights were used
    instead.
    """

    query_id: str
    positive_id: str
    negatives: tuple[str, ...]
    weights_used: tuple[float, ...]
    used_fallback: bool = False

    def __post_init__(self):
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError("duplicate negative ids")
        if len(self.weights_used) != len(self.negatives):
            raise ValueError("weights_used must align with negatives")


def construct_candidates(
    query_id: str,
    positive_id: str,
    index: Index,
    queries: EmbeddingMatrix,
    qrels: Qrels,
    k: int,
    axis: str = "qd",
) -> CandidateSet:
    """Build the top-K candidate pool for one (query, positive) pair.

    axis "qd" ranks the corpus by similarity to the query; axis "dd" ranks
    by similarity to the positive document. All positives of the query are
    excluded either way, and every candidate carries both cached scores.
    """
    if axis not in ("qd", "dd"):
        raise ValueError(f"axis must be 'qd' or 'dd', got {axis!r}")
    positives = qrels.positives(query_id)
    if positive_id not in positives:
        raise ValueError(
            f"{positive_id!r} is not a judged positive of {query_id!r}"
        )
    q_vec = queries.vector(query_id)
    pos_vec = index.corpus.vector(positive_id)
    anchor = q_vec if axis == "qd" else pos_vec
    result = top_k(index, anchor, k, exclude=positives)

    candidates = []
    for doc_id, anchor_score in result.entries:
        doc_vec = index.corpus.vector(doc_id)
        if axis == "qd":
            s_neg = anchor_score
            s_pp = dot_score(pos_vec, doc_vec)
        else:
            s_neg = dot_score(q_vec, doc_vec)
            s_pp = anchor_score
        candidates.append(ScoredCandidate(doc_id, s_neg, s_pp))
    return CandidateSet(
        query_id=query_id, positive_id=positive_id, candidates=tuple(candidates)
    )


def transitional_weights(
    cands: CandidateSet, s_pos: float, sharpness: float = 0.25
) -> np.ndarray:
    """Gaussian stage-one weights, normalized to sum to 1.

    Raw weight exp(-sharpness * (s_neg - s_pos)^2) peaks where the
    negative scores exactly as the positive does and decays symmetrically,
    damping both trivially easy negatives and likely false negatives.
    """
    if len(cands) == 0:
        raise ValueError("candidate set is empty")
    raw = np.exp(-sharpness * (cands.s_neg_array() - s_pos) ** 2)
    return raw / raw.sum()


def final_weights(
    trans: CandidateSet, s_pos: float, sharpness: float = 0.25
) -> tuple[np.ndarray, bool]:
    """Region-weighted stage-two weights, normalized to sum to 1.

    Raw weight relu(s_pp - s_neg) is positive exactly for candidates
    strictly inside the triangular region. When every candidate is outside
    (all raw weights zero) the transitional Gaussian weights are returned
    instead and the second element of the pair is True.
    """
    if len(trans) == 0:
        raise ValueError("candidate set is empty")
    raw = np.maximum(0.0, trans.s_pp_array() - trans.s_neg_array())
    total = raw.sum()
    if total == 0.0:
        return transitional_weights(trans, s_pos, sharpness), True
    return raw / total, False


def sample_transitional(
    cands: CandidateSet, weights, m: int, rng: np.random.Generator
) -> CandidateSet:
    """Draw m distinct candidates without replacement under ``weights``.

    Pools no larger than m are returned whole (in pool order).
    """
    if len(cands) == 0:
        raise ValueError("candidate set is empty")
    if len(cands) <= m:
        return cands
    chosen, _ = weighted_sample_without_replacement(weights, m, rng)
    return replace(
        cands, candidates=tuple(cands.candidates[i] for i in chosen)
    )


def sample_final(
    trans: CandidateSet,
    weights,
    n: int,
    rng: np.random.Generator,
    used_fallback: bool = False,
) -> NegativeSample:
    """Draw the final n negatives without replacement under ``weights``."""
    if len(trans) == 0:
        raise ValueError("candidate set is empty")
    if len(trans) <= n:
        chosen = list(range(len(trans)))
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        probs = list(w / total) if total > 0 else [0.0] * len(trans)
    else:
        chosen, probs = weighted_sample_without_replacement(weights, n, rng)
    return NegativeSample(
        query_id=trans.query_id,
        positive_id=trans.positive_id,
        negatives=tuple(trans.candidates[i].doc_id for i in chosen),
        weights_used=tuple(float(p) for p in probs),
        used_fallback=used_fallback,
    )


def _single_stage(
    cands: CandidateSet, weights, n: int, rng: np.random.Generator
) -> NegativeSample:
    return sample_final(cands, weights, n, rng)


def sample(
    query_id: str,
    positive_id: str,
    index: Index,
    queries: EmbeddingMatrix,
    qrels: Qrels,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> NegativeSample:
    """Run the configured sampler for one (query, positive) pair.

    Variant dispatch:

    - trisampler / candidates_qd: full two-stage pipeline over
      query-ranked candidates (candidates_qd is the explicit spelling of
      the default axis, for candidate-construction comparisons);
    - candidates_dd: the same pipeline over positive-ranked candidates;
    - uniform: equal weights over the top-K pool;
    - topk_weighted: weights proportional to exp(s_neg);
    - debiased: weights proportional to exp(s_neg - s_pos);
    - simans: weights proportional to exp(-a * (s_neg - s_pos - b)^2);
    - top_ns: the n highest-s_neg candidates, deterministically;
    - rand_ns: uniform over the whole non-positive corpus.
    """
    variant = config.variant
    k, m, n = config.effective_k, config.effective_m, config.n

    if variant == "rand_ns":
        positives = qrels.positives(query_id)
        pool = [d for d in index.corpus.ids if d not in positives]
        chosen, probs = weighted_sample_without_replacement(
            np.ones(len(pool)), n, rng
        )
        return NegativeSample(
            query_id=query_id,
            positive_id=positive_id,
            negatives=tuple(pool[i] for i in chosen),
            weights_used=tuple(probs),
        )

    axis = "dd" if variant == "candidates_dd" else "qd"
    cands = construct_candidates(
        query_id, positive_id, index, queries, qrels, k, axis=axis
    )
    if len(cands) == 0:
        raise ValueError(f"no negative candidates for query {query_id!r}")
    s_pos = dot_score(queries.vector(query_id), index.corpus.vector(positive_id))

    if variant in ("trisampler", "candidates_qd", "candidates_dd"):
        w_trans = transitional_weights(cands, s_pos, config.transitional_sharpness)
        trans = sample_transitional(cands, w_trans, m, rng)
        w_final, used_fallback = final_weights(
            trans, s_pos, config.transitional_sharpness
        )
        return sample_final(trans, w_final, n, rng, used_fallback=used_fallback)

    if variant == "uniform":
        weights = np.full(len(cands), 1.0 / len(cands))
        return _single_stage(cands, weights, n, rng)

    if variant == "topk_weighted":
        raw = np.exp(cands.s_neg_array())
        return _single_stage(cands, raw / raw.sum(), n, rng)

    if variant == "debiased":
        raw = np.exp(cands.s_neg_array() - s_pos)
        return _single_stage(cands, raw / raw.sum(), n, rng)

    if variant == "simans":
        raw = np.exp(
            -config.simans_a
            * (cands.s_neg_array() - s_pos - config.simans_b) ** 2
        )
        return _single_stage(cands, raw / raw.sum(), n, rng)

    if variant == "top_ns":
        # qd candidates arrive ranked by s_neg descending, ids ascending
        # on ties, so the head of the pool is the deterministic top-n
        take = cands.candidates[:n]
        return NegativeSample(
            query_id=query_id,
            positive_id=positive_id,
            negatives=tuple(c.doc_id for c in take),
            weights_used=tuple(1.0 for _ in take),
        )

    raise ValueError(f"unknown variant {variant!r}")


def sample_all(
    index: Index,
    queries: EmbeddingMatrix,
    qrels: Qrels,
    config: SamplerConfig,
    *,
    epoch: int | None = None,
) -> list[NegativeSample]:
    """Sample negatives for every (query, positive) pair.

    One triple is produced per pair; all positives of a query are excluded
    from its candidates. Each query gets its own generator derived from
    (config.seed, query id[, epoch]) so output does not depend on
    scheduling or pair order.
    """
    context = () if epoch is None else (epoch,)
    samples = []
    for query_id in qrels.query_ids():
        rng = query_rng(config.seed, query_id, *context)
        for positive_id in sorted(qrels.positives(query_id)):
            samples.append(
                sample(query_id, positive_id, index, queries, qrels, config, rng)
            )
    return samples


def write_negative_samples(samples, path: str | Path) -> None:
    """TSV dump: query_id, positive_id, then the negative ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write("\t".join((s.query_id, s.positive_id, *s.negatives)))
            fh.write("\n")


def load_negative_samples(path: str | Path) -> list[tuple[str, str, tuple[str, ...]]]:
    """Read a negative-sample TSV as (query_id, positive_id, negatives)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise ValueError(f"{path}:{lineno}: expected >=3 fields")
            rows.append((fields[0], fields[1], tuple(fields[2:])))
    return rows
