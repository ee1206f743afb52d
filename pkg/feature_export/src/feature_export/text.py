"""Function-name embeddings.

Stands in for a text encoder with name-hashed random unit vectors: each name
deterministically seeds its own vector, so embeddings are stable across runs
and machines while distinct names stay linearly independent with overwhelming
probability.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

logger = logging.getLogger(__name__)

TEXT_DIM = 512


class TextEmbeddingError(ValueError):
    pass


def name_seed(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def function_embeddings(names: list[str], dim: int = TEXT_DIM) -> tuple[list[str], np.ndarray]:
    """Unit f32 vector per distinct function name.

    Returns (deduplicated names in first-seen order, (n, dim) array).
    Duplicates are dropped with a warning; an empty list is an error.
    """
    if dim < 2:
        raise TextEmbeddingError("dim must be at least 2")
    seen: dict[str, None] = {}
    for name in names:
        if name in seen:
            continue
        seen[name] = None
    if not seen:
        raise TextEmbeddingError("no function names given")
    if len(seen) < len(names):
        logger.warning("dropped %d duplicate function names", len(names) - len(seen))
    out = np.empty((len(seen), dim), dtype=np.float32)
    for i, name in enumerate(seen):
        rng = np.random.default_rng(np.random.SeedSequence([name_seed(name)]))
        v = rng.normal(size=dim)
        out[i] = (v / np.linalg.norm(v)).astype(np.float32)
    return list(seen), out
