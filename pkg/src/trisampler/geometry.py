"""Similarity and angular kernels, plus the triangular-region predicates.

All similarity scores are inner products accumulated in float64 regardless
of the storage dtype. The summation is elementwise-product followed by
numpy's pairwise reduction, which is bit-identical whether applied row-wise
to a matrix or to a single vector pair; the vector index relies on this to
match :func:`dot_score` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_THETA_MAX_DEGREES = 60.0


@dataclass(frozen=True)
class TripleScores:
    """Cached similarity scores for one (query, positive, negative) triple.

    s_pos: score(query, positive); s_neg: score(query, negative);
    s_pp: score(positive, negative).
    """

    s_pos: float
    s_neg: float
    s_pp: float

    def __post_init__(self):
        for name in ("s_pos", "s_neg", "s_pp"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")


@dataclass(frozen=True)
class RegionParams:
    """Diagnostic parameters for the angular form of the region test."""

    theta_max_degrees: float = DEFAULT_THETA_MAX_DEGREES
    normalize: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta_max_degrees <= 180.0:
            raise ValueError("theta_max_degrees must be in (0, 180]")


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def dot_score(u, v) -> float:
    """Inner product with float64 accumulation."""
    u = _as_vector(u, "u")
    v = _as_vector(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(np.sum(u * v))


def score_matrix(matrix, query) -> np.ndarray:
    """Inner products of every row of ``matrix`` against ``query``.

    Row i equals ``dot_score(matrix[i], query)`` bit-exactly (same
    elementwise product, same pairwise summation).
    """
    m = np.asarray(matrix, dtype=np.float64)
    q = _as_vector(query, "query")
    if m.ndim != 2 or m.shape[1] != q.shape[0]:
        raise ValueError(f"shape mismatch: {m.shape} vs {q.shape}")
    return (m * q[None, :]).sum(axis=1)


def angle(u, v) -> float:
    """Angle between two nonzero vectors, in radians.

    The cosine ratio is clamped to [-1, 1] before arccos: dot products of
    near-parallel vectors can exceed 1 by a few ulps.
    """
    u = _as_vector(u, "u")
    v = _as_vector(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("angle is undefined for a zero vector")
    ratio = float(np.sum(u * v)) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, ratio)))


def theta(q, d_pos, d_neg) -> float:
    """Absolute difference of the query angles to positive and negative."""
    return abs(angle(q, d_pos) - angle(q, d_neg))


def in_triangular_region(ts: TripleScores) -> bool:
    """Score-level region membership: s(d+, d-) >= s(q, d-).

    The boundary s_pp == s_neg counts as inside; the final sampling weight
    there is zero, so the boundary is never drawn while any interior
    candidate remains.
    """
    return ts.s_pp >= ts.s_neg


def in_angular_region(q, d_pos, d_neg, params: RegionParams | None = None) -> bool:
    """Diagnostic angular form of the region test: theta <= theta_max.

    The sampling pipeline enforces the region at the score level (see
    :func:`in_triangular_region`); the two coincide only for normalized
    embeddings. This predicate is exposed for analysis, not sampling.
    """
    params = params or RegionParams()
    if params.normalize:
        q = np.asarray(q, dtype=np.float64)
        d_pos = np.asarray(d_pos, dtype=np.float64)
        d_neg = np.asarray(d_neg, dtype=np.float64)
        q = q / np.linalg.norm(q)
        d_pos = d_pos / np.linalg.norm(d_pos)
        d_neg = d_neg / np.linalg.norm(d_neg)
    return theta(q, d_pos, d_neg) <= math.radians(params.theta_max_degrees)
