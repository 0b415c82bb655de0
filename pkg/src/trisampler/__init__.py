"""Triangular-region negative sampling for dense retrieval.

A dense-retrieval negative sampler built around a triangular constraint
between query, positive, and negative: candidates come from the top of the
index, a Gaussian stage keeps negatives whose query score is near the
positive's, and a final relu(s(d+,d-) - s(q,d-)) stage samples inside the
region where negatives are close to the positive without outranking it.
Ships with baseline samplers, an exact/approximate inner-product index, a
desk-scale dual-encoder trainer, retrieval metrics, and a synthetic-corpus
generator for controlled comparisons.
"""

from .data import (
    DataError,
    EmbeddingMatrix,
    FormatError,
    Qrels,
    RunFile,
    load_embeddings,
    load_qrels,
    load_run,
    write_embeddings,
    write_qrels,
    write_run,
)
from .evaluation import (
    ComparisonResult,
    MetricReport,
    compare_samplers,
    evaluate_encoder,
    mrr_at_k,
    recall_at_k,
    retrieve_run,
)
from .geometry import (
    RegionParams,
    TripleScores,
    angle,
    dot_score,
    in_angular_region,
    in_triangular_region,
    theta,
)
from .index import (
    APPROXIMATE,
    EXACT,
    Index,
    TopKResult,
    brute_force_top_k,
    build,
    recall_against_exact,
    top_k,
)
from .rng import hash64, make_rng, query_rng, weighted_sample_without_replacement
from .sampling import (
    CandidateSet,
    NegativeSample,
    SamplerConfig,
    ScoredCandidate,
    construct_candidates,
    final_weights,
    load_negative_samples,
    sample,
    sample_all,
    sample_final,
    sample_transitional,
    transitional_weights,
    write_negative_samples,
)
from .synthetic import SyntheticSpec, generate_synthetic
from .training import (
    DivergenceError,
    ToyEncoder,
    TrainerConfig,
    TrainingLog,
    TrainingTriple,
    contrastive_loss,
    loss_gradients,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "APPROXIMATE",
    "CandidateSet",
    "ComparisonResult",
    "DataError",
    "DivergenceError",
    "EXACT",
    "EmbeddingMatrix",
    "FormatError",
    "Index",
    "MetricReport",
    "NegativeSample",
    "Qrels",
    "RegionParams",
    "RunFile",
    "SamplerConfig",
    "ScoredCandidate",
    "SyntheticSpec",
    "TopKResult",
    "ToyEncoder",
    "TrainerConfig",
    "TrainingLog",
    "TrainingTriple",
    "TripleScores",
    "angle",
    "brute_force_top_k",
    "build",
    "compare_samplers",
    "construct_candidates",
    "contrastive_loss",
    "dot_score",
    "evaluate_encoder",
    "final_weights",
    "generate_synthetic",
    "hash64",
    "in_angular_region",
    "in_triangular_region",
    "load_embeddings",
    "load_negative_samples",
    "load_qrels",
    "load_run",
    "loss_gradients",
    "make_rng",
    "mrr_at_k",
    "query_rng",
    "recall_against_exact",
    "recall_at_k",
    "retrieve_run",
    "sample",
    "sample_all",
    "sample_final",
    "sample_transitional",
    "theta",
    "top_k",
    "train",
    "transitional_weights",
    "weighted_sample_without_replacement",
    "write_embeddings",
    "write_negative_samples",
    "write_qrels",
    "write_run",
]
