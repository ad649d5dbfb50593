"""Decode-time cluster ranking and the partially sorted token order it induces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import Clustering
from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class RankedOrder:
    order: np.ndarray
    cluster_rank: np.ndarray
    criticality: np.ndarray

    @property
    def n(self) -> int:
        return self.order.shape[0]


def ranked_from_order(order) -> RankedOrder:
    """Wrap an explicit token order, treating every token as its own cluster.

    Useful for tests and for exact (oracle) orderings.
    """
    order = np.asarray(order, dtype=np.int64)
    n = order.shape[0]
    if not np.array_equal(np.sort(order), np.arange(n)):
        raise ValidationError("order is not a permutation of range(n)")
    crit = np.empty(n)
    crit[order] = -np.arange(n, dtype=np.float64)
    return RankedOrder(order=order, cluster_rank=order.copy(), criticality=crit)


def rank_clusters(clustering: Clustering, query) -> RankedOrder:
    """Sort clusters by centroid . query, descending, and unpack their tokens.

    The 1/sqrt(d) scale is left out since it cannot change the ordering.
    Ties go to the lower cluster id; tokens inside a cluster stay in index
    order.
    """
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != clustering.centroids.shape[1]:
        raise ValidationError(
            f"query has dimension {q.shape[0]}, centroids have {clustering.centroids.shape[1]}"
        )
    crit = clustering.centroids @ q
    rank = np.argsort(-crit, kind="stable")
    order = np.concatenate([clustering.members[c] for c in rank])
    return RankedOrder(order=order, cluster_rank=rank, criticality=crit)


def _positions(order):
    pos = np.empty(order.shape[0], dtype=np.int64)
    pos[order] = np.arange(order.shape[0])
    return pos


def sort_fidelity(ranked: RankedOrder, scores, ks=(16, 64, 256)) -> dict:
    """How closely the ranked order tracks the true descending-score order.

    Returns ``spearman`` (rank correlation of token positions under the two
    orders) and ``recall@k``: the share of the true top-k tokens found in the
    first ``k`` ranked positions, for each ``k <= n``.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = ranked.n
    if s.shape != (n,):
        raise ValidationError(f"scores have length {s.shape[0]}, order has {n}")
    if abs(s.sum() - 1.0) > 1e-9:
        raise ValidationError("scores must sum to 1")
    true_order = np.argsort(-s, kind="stable")
    out = {}
    if n > 1:
        a = _positions(ranked.order).astype(np.float64)
        b = _positions(true_order).astype(np.float64)
        a -= a.mean()
        b -= b.mean()
        out["spearman"] = float((a @ b) / np.sqrt((a @ a) * (b @ b)))
    else:
        out["spearman"] = 1.0
    for k in ks:
        if k <= n:
            hit = np.intersect1d(ranked.order[:k], true_order[:k]).size
            out[f"recall@{k}"] = hit / k
    return out
