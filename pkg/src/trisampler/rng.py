"""Deterministic randomness: stable seed fan-out and weighted draws.

Everything here is a pure function of its inputs. Seeds are derived with
blake2b so a single top-level seed reproduces an entire experiment
independently of scheduling, platform, or PYTHONHASHSEED.
"""

from __future__ import annotations

import hashlib

import numpy as np


def hash64(*parts) -> int:
    """Stable 64-bit hash of a sequence of values (stringified)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big", signed=False)


def make_rng(*seed_parts) -> np.random.Generator:
    """PCG64 generator seeded from a stable hash of the parts."""
    return np.random.Generator(np.random.PCG64(hash64(*seed_parts)))


def query_rng(global_seed: int, query_id: str, *context) -> np.random.Generator:
    """Per-query generator; output is independent of worker scheduling."""
    return make_rng(global_seed, "query", query_id, *context)


def weighted_sample_without_replacement(
    weights, k: int, rng: np.random.Generator
) -> tuple[list[int], list[float]]:
    """Draw ``k`` distinct indices by sequential weighted draws.

    After each draw the drawn index is removed and the remainder is
    renormalized. Zero-weight indices are never drawn while any
    positive-weight index remains; once all remaining weight is zero the
    leftover slots are filled uniformly at random. Returns the drawn
    indices and, for each, its normalized probability at draw time (0.0
    for uniform fill-ins).

    ``k`` larger than the population returns everything.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be 1-D")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    size = w.shape[0]
    k = min(k, size)
    remaining = w.copy()
    alive = np.ones(size, dtype=bool)
    chosen: list[int] = []
    probs: list[float] = []
    for _ in range(k):
        total = remaining.sum()
        if total > 0.0:
            p = remaining / total
            idx = int(rng.choice(size, p=p))
            probs.append(float(p[idx]))
        else:
            survivors = np.flatnonzero(alive)
            idx = int(rng.choice(survivors))
            probs.append(0.0)
        chosen.append(idx)
        remaining[idx] = 0.0
        alive[idx] = False
    return chosen, probs
