"""Exact full and sparse attention for one decode query, plus error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kv_model import HeadDump

KL_PAD = 1e-12


@dataclass(frozen=True, eq=False)
class AttentionScores:
    """Softmax scores ``s`` and the scaled logits ``(q . k_i) / sqrt(d)``."""

    scores: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class ApproxMetrics:
    epsilon: float
    p_of_I: float
    bound: float
    kl: float


def _query(head: HeadDump, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != head.d:
        raise ValidationError(f"query has dimension {q.shape[0]}, head has d={head.d}")
    if not np.all(np.isfinite(q)):
        raise ValidationError("query contains non-finite values")
    return q


def logits(head: HeadDump, query) -> np.ndarray:
    q = _query(head, query)
    return (head.keys.astype(np.float64) @ q) / np.sqrt(head.d)


def _index_set(n, index_set) -> np.ndarray:
    idx = np.asarray(index_set, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValidationError("index set is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise ValidationError(f"index set has entries outside [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValidationError("index set has duplicate entries")
    return idx


def attention_scores(head: HeadDump, query) -> AttentionScores:
    z = logits(head, query)
    e = np.exp(z - z.max())
    return AttentionScores(scores=e / e.sum(), logits=z)


def full_attention(head: HeadDump, query) -> np.ndarray:
    s = attention_scores(head, query).scores
    return s @ head.values.astype(np.float64)


def sparse_attention(head: HeadDump, query, index_set) -> np.ndarray:
    """Attention output with the softmax renormalized over ``index_set`` only."""
    idx = _index_set(head.n, index_set)
    z = logits(head, query)[idx]
    e = np.exp(z - z.max())
    return (e / e.sum()) @ head.values[idx].astype(np.float64)


def cumulative_score(scores, index_set) -> float:
    """``p(I)``: total true attention score of the tokens in ``I``."""
    s = np.asarray(scores, dtype=np.float64)
    return float(s[np.asarray(index_set, dtype=np.int64)].sum())


def error_bound(p_of_I: float, values) -> float:
    """``2 (1 - p(I)) max_i ||v_i||``: worst-case attention distance for ``p(I)``."""
    v = np.asarray(values, dtype=np.float64)
    return float(2.0 * (1.0 - p_of_I) * np.linalg.norm(v, axis=1).max())


def kl_divergence(p_scores, q_scores) -> float:
    """``sum p ln(p / q)``; zeros in ``q`` are padded with 1e-12 and q renormalized."""
    p = np.asarray(p_scores, dtype=np.float64)
    q = np.asarray(q_scores, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(q == 0):
        q = np.where(q == 0, KL_PAD, q)
        q = q / q.sum()
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / q[nz]))))


def sparse_scores(full: AttentionScores, index_set) -> np.ndarray:
    """Scores renormalized over ``I``, extended with zeros to all ``n`` tokens."""
    idx = np.asarray(index_set, dtype=np.int64)
    z = full.logits[idx]
    e = np.exp(z - z.max())
    out = np.zeros_like(full.scores)
    out[idx] = e / e.sum()
    return out


def approx_metrics(head: HeadDump, query, index_set, scores: AttentionScores | None = None) -> ApproxMetrics:
    """Distance, cumulative score, worst-case bound and score-level KL for ``I``.

    ``scores`` may be passed to reuse an already computed softmax.
    """
    idx = _index_set(head.n, index_set)
    full = attention_scores(head, query) if scores is None else scores
    v = head.values.astype(np.float64)
    o = full.scores @ v
    sp = sparse_scores(full, idx)
    o_sparse = sp[idx] @ v[idx]
    p = min(1.0, cumulative_score(full.scores, idx))
    return ApproxMetrics(
        epsilon=float(np.linalg.norm(o - o_sparse)),
        p_of_I=p,
        bound=error_bound(p, v),
        kl=kl_divergence(full.scores, sp),
    )
