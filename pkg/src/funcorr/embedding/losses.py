"""Contrastive and mask losses with hand-derived gradients.

All similarity-based losses expect unit-norm embeddings and raise if a norm
deviates from 1 by more than 1e-3; the `_rows` variants return per-row losses
plus input gradients for a *sum* reduction, which the training loop rescales.
"""

from __future__ import annotations

import numpy as np

from .model import EmbeddingError, softmax


def _check_unit(*arrays: np.ndarray) -> None:
    for a in arrays:
        norms = np.linalg.norm(a, axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-3:
            raise EmbeddingError("embeddings must be unit-normalized (deviation > 1e-3)")


def _logsumexp(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    return np.log(np.sum(np.exp(m - mx), axis=1)) + mx[:, 0]


def func_rows(
    e1p: np.ndarray, e1n: np.ndarray, e2p: np.ndarray, e2n: np.ndarray, tau: float
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Per-quadruple functional contrast.

    Row i uses exactly three similarities: (p1+, p2+) as the positive and
    (p1+, p2-), (p1-, p2-) filling out the denominator. Returns per-row losses
    and gradients of their *sum* w.r.t. the four embedding arrays.
    """
    t0 = np.sum(e1p * e2p, axis=1)
    t1 = np.sum(e1p * e2n, axis=1)
    t2 = np.sum(e1n * e2n, axis=1)
    m = np.stack([t0, t1, t2], axis=1) / tau
    rows = _logsumexp(m) - m[:, 0]
    c = softmax(m, axis=1)
    c[:, 0] -= 1.0
    c /= tau
    d_e1p = c[:, [0]] * e2p + c[:, [1]] * e2n
    d_e1n = c[:, [2]] * e2n
    d_e2p = c[:, [0]] * e1p
    d_e2n = c[:, [1]] * e1p + c[:, [2]] * e1n
    return rows, (d_e1p, d_e1n, d_e2p, d_e2n)


def loss_func(e1p: np.ndarray, e1n: np.ndarray, e2p: np.ndarray, e2n: np.ndarray, tau: float) -> float:
    """Mean functional InfoNCE over sampled quadruples."""
    if tau <= 0:
        raise EmbeddingError("tau must be positive")
    _check_unit(e1p, e1n, e2p, e2n)
    rows, _ = func_rows(e1p, e1n, e2p, e2n, tau)
    return float(rows.mean())


def spatial_rows_inbatch(
    e_src: np.ndarray, e_dst: np.ndarray, tau: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Multi-view contrast where each anchor's negatives are the other
    anchors' positives: row i of the (n, n) similarity matrix is an InfoNCE
    with n-1 negatives. Returns (rows, d_e_src, d_e_dst) for a sum reduction.
    """
    s = e_src @ e_dst.T / tau
    lse = _logsumexp(s)
    diag = np.diagonal(s)
    rows = lse - diag
    p = softmax(s, axis=1)
    ds = p.copy()
    np.fill_diagonal(ds, np.diagonal(ds) - 1.0)
    d_src = ds @ e_dst / tau
    d_dst = ds.T @ e_src / tau
    return rows, d_src, d_dst


def loss_spatial(anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray, tau: float) -> float:
    """InfoNCE with explicit negatives.

    Args:
        anchors: (n, D) unit embeddings.
        positives: (n, D), one per anchor.
        negatives: (n, m, D), m negatives per anchor.
        tau: temperature.
    """
    if tau <= 0:
        raise EmbeddingError("tau must be positive")
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    _check_unit(anchors, positives, negatives.reshape(-1, negatives.shape[-1]))
    pos = np.sum(anchors * positives, axis=1, keepdims=True)
    neg = np.einsum("nd,nmd->nm", anchors, negatives)
    m = np.concatenate([pos, neg], axis=1) / tau
    rows = _logsumexp(m) - m[:, 0]
    return float(rows.mean())


def mask_rows(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Numerically stable binary cross entropy with logits.

    Returns per-point losses and d(sum)/d(logits).
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise EmbeddingError("logits and labels shapes differ")
    rows = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    # piecewise-stable sigmoid
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    return rows, sig - y


def loss_mask(logits: np.ndarray, labels: np.ndarray) -> float:
    rows, _ = mask_rows(logits, labels)
    return float(rows.mean()) if rows.size else 0.0
