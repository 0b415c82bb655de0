"""Retrieval metrics and the sampler-comparison experiment.

Metrics follow the usual first-stage retrieval conventions: MRR@k scores
the reciprocal rank of the first relevant document inside the cutoff,
Recall@k the judged fraction retrieved. The comparison experiment trains
one encoder per (sampler variant, seed), retrieves for the training
queries with an exact index, and reports per-run metrics plus per-variant
mean and standard deviation. Desk-scale cutoffs default to MRR@10 and
Recall@50.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import EmbeddingMatrix, Qrels, RunFile
from .index import EXACT, Index, build, top_k
from .sampling import SamplerConfig
from .synthetic import SyntheticSpec, generate_synthetic
from .training import DivergenceError, ToyEncoder, TrainerConfig, train

logger = logging.getLogger(__name__)

DEFAULT_MRR_CUTOFF = 10
DEFAULT_RECALL_CUTOFF = 50


@dataclass(frozen=True)
class MetricReport:
    metric: str
    cutoff: int
    per_query: dict[str, float]
    aggregate: float
    query_count: int

    @classmethod
    def from_per_query(
        cls, metric: str, cutoff: int, per_query: dict[str, float]
    ) -> "MetricReport":
        aggregate = (
            float(np.mean(list(per_query.values()))) if per_query else 0.0
        )
        return cls(
            metric=metric,
            cutoff=cutoff,
            per_query=dict(per_query),
            aggregate=aggregate,
            query_count=len(per_query),
        )


def _scored_queries(run: RunFile, qrels: Qrels) -> list[str]:
    scored = []
    for qid in run.query_ids():
        if qid not in qrels:
            logger.warning("run query %r has no judgments, excluded", qid)
            continue
        scored.append(qid)
    return scored


def mrr_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    """Reciprocal rank of the first relevant doc within the top k, per
    query; 0 when none appears. Aggregate is the mean over queries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query = {}
    for qid in _scored_queries(run, qrels):
        positives = qrels.positives(qid)
        value = 0.0
        for doc_id, _, rank in run.ranking(qid)[:k]:
            if doc_id in positives:
                value = 1.0 / rank
                break
        per_query[qid] = value
    return MetricReport.from_per_query("mrr", k, per_query)


def recall_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    """Fraction of a query's relevant docs inside the top k, per query."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query = {}
    for qid in _scored_queries(run, qrels):
        positives = qrels.positives(qid)
        retrieved = {doc_id for doc_id, _, _ in run.ranking(qid)[:k]}
        per_query[qid] = len(retrieved & positives) / len(positives)
    return MetricReport.from_per_query("recall", k, per_query)


def retrieve_run(
    index: Index, queries: EmbeddingMatrix, k: int
) -> RunFile:
    """Top-k retrieval for every query, as a run."""
    rankings = {}
    for qid in queries.ids:
        result = top_k(index, queries.vector(qid), k)
        rankings[qid] = tuple(
            (doc_id, score, rank)
            for rank, (doc_id, score) in enumerate(result.entries, start=1)
        )
    return RunFile(rankings)


@dataclass(frozen=True)
class ComparisonRow:
    variant: str
    seed: int
    mrr: float | None
    recall: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class ComparisonResult:
    rows: tuple[ComparisonRow, ...]
    mrr_cutoff: int
    recall_cutoff: int

    def variants(self) -> list[str]:
        ordered = []
        for row in self.rows:
            if row.variant not in ordered:
                ordered.append(row.variant)
        return ordered

    def aggregate(self, variant: str) -> dict[str, float | None]:
        """Mean and stddev over the variant's successful runs."""
        mrrs = [r.mrr for r in self.rows if r.variant == variant and not r.failed]
        recalls = [
            r.recall for r in self.rows if r.variant == variant and not r.failed
        ]
        if not mrrs:
            return {
                "mrr_mean": None, "mrr_std": None,
                "recall_mean": None, "recall_std": None,
            }
        ddof = 1 if len(mrrs) > 1 else 0
        return {
            "mrr_mean": float(np.mean(mrrs)),
            "mrr_std": float(np.std(mrrs, ddof=ddof)),
            "recall_mean": float(np.mean(recalls)),
            "recall_std": float(np.std(recalls, ddof=ddof)),
        }

    def to_csv(self) -> str:
        """Per-run rows, then an aggregate block. Failed cells read NA."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            ["variant", "seed", f"mrr@{self.mrr_cutoff}",
             f"recall@{self.recall_cutoff}"]
        )
        for row in self.rows:
            writer.writerow([
                row.variant,
                row.seed,
                "NA" if row.failed else repr(row.mrr),
                "NA" if row.failed else repr(row.recall),
            ])
        writer.writerow(["# aggregate"])
        writer.writerow(
            ["variant",
             f"mrr@{self.mrr_cutoff}_mean", f"mrr@{self.mrr_cutoff}_std",
             f"recall@{self.recall_cutoff}_mean",
             f"recall@{self.recall_cutoff}_std"]
        )
        for variant in self.variants():
            agg = self.aggregate(variant)
            writer.writerow([
                variant,
                *("NA" if agg[key] is None else repr(agg[key])
                  for key in ("mrr_mean", "mrr_std", "recall_mean", "recall_std")),
            ])
        return buffer.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def format_table(self) -> str:
        """Human-readable aggregate table."""
        lines = [
            f"{'variant':<16} {'mrr@' + str(self.mrr_cutoff):>14} "
            f"{'recall@' + str(self.recall_cutoff):>16}  runs"
        ]
        for variant in self.variants():
            agg = self.aggregate(variant)
            runs = sum(1 for r in self.rows if r.variant == variant)
            ok = sum(
                1 for r in self.rows if r.variant == variant and not r.failed
            )
            if agg["mrr_mean"] is None:
                lines.append(f"{variant:<16} {'failed':>14} {'failed':>16}  {ok}/{runs}")
            else:
                mrr = f"{agg['mrr_mean']:.4f}±{agg['mrr_std']:.4f}"
                rec = f"{agg['recall_mean']:.4f}±{agg['recall_std']:.4f}"
                lines.append(f"{variant:<16} {mrr:>14} {rec:>16}  {ok}/{runs}")
        return "\n".join(lines)


def evaluate_encoder(
    encoder: ToyEncoder,
    corpus: EmbeddingMatrix,
    queries: EmbeddingMatrix,
    qrels: Qrels,
    mrr_cutoff: int = DEFAULT_MRR_CUTOFF,
    recall_cutoff: int = DEFAULT_RECALL_CUTOFF,
) -> tuple[float, float]:
    """Encode, retrieve with an exact index, and score both metrics."""
    encoded_corpus = encoder.encoded_matrix(corpus, "doc")
    encoded_queries = encoder.encoded_matrix(queries, "query")
    index = build(encoded_corpus, EXACT)
    run = retrieve_run(index, encoded_queries, max(mrr_cutoff, recall_cutoff))
    mrr = mrr_at_k(run, qrels, mrr_cutoff)
    recall = recall_at_k(run, qrels, recall_cutoff)
    return mrr.aggregate, recall.aggregate


def _run_cell(
    spec: SyntheticSpec,
    sampler_config: SamplerConfig,
    trainer_config: TrainerConfig,
    seed: int,
    mrr_cutoff: int,
    recall_cutoff: int,
) -> ComparisonRow:
    data_spec = replace(spec, seed=seed)
    corpus, queries, qrels = generate_synthetic(data_spec)
    cell_config = replace(
        trainer_config,
        sampler=replace(sampler_config, seed=seed),
        seed=seed,
    )
    try:
        encoder, _ = train(corpus, queries, qrels, cell_config)
    except DivergenceError as exc:
        logger.warning(
            "variant %r seed %d diverged: %s", sampler_config.variant, seed, exc
        )
        return ComparisonRow(
            variant=sampler_config.variant, seed=seed,
            mrr=None, recall=None, error=str(exc),
        )
    mrr, recall = evaluate_encoder(
        encoder, corpus, queries, qrels, mrr_cutoff, recall_cutoff
    )
    return ComparisonRow(
        variant=sampler_config.variant, seed=seed, mrr=mrr, recall=recall
    )


def compare_samplers(
    spec: SyntheticSpec,
    sampler_configs: list[SamplerConfig],
    trainer_config: TrainerConfig,
    seeds: list[int],
    mrr_cutoff: int = DEFAULT_MRR_CUTOFF,
    recall_cutoff: int = DEFAULT_RECALL_CUTOFF,
    threads: int = 1,
) -> ComparisonResult:
    """Train and evaluate every (variant, seed) cell.

    Each cell regenerates the dataset with the cell's seed and re-seeds
    both trainer and sampler with it, so all variants see identical data
    and identical encoder initializations for a given seed. Cells are
    independent; ``threads`` > 1 evaluates them concurrently without
    changing any result. Divergent cells are reported as failures and the
    comparison continues.
    """
    if not sampler_configs:
        raise ValueError("need at least one sampler config")
    if not seeds:
        raise ValueError("need at least one seed")
    cells = [
        (sampler_config, seed)
        for sampler_config in sampler_configs
        for seed in seeds
    ]

    def run(cell) -> ComparisonRow:
        sampler_config, seed = cell
        return _run_cell(
            spec, sampler_config, trainer_config, seed, mrr_cutoff, recall_cutoff
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(cell) for cell in cells]
    return ComparisonResult(
        rows=tuple(rows), mrr_cutoff=mrr_cutoff, recall_cutoff=recall_cutoff
    )
