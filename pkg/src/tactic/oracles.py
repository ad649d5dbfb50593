"""Reference selectors: global optimal, cluster optimal and fixed budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionScores
from .errors import ValidationError
from .ranking import RankedOrder

# Cumulative sums are compared against P * total with this relative slack,
# so that e.g. 50 uniform scores of 0.01 count as reaching 0.5.
PREFIX_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class OracleResult:
    index_set: np.ndarray
    budget: int
    achieved_p: float


def minimal_prefix(weights, threshold: float) -> int:
    """Smallest ``k`` with ``sum(weights[:k]) >= threshold * sum(weights)``."""
    w = np.asarray(weights, dtype=np.float64)
    cum = np.cumsum(w)
    total = cum[-1]
    target = threshold * total - PREFIX_RTOL * abs(total)
    k = int(np.searchsorted(cum, target, side="left")) + 1
    return min(k, w.shape[0])


def _scores(scores) -> np.ndarray:
    s = scores.scores if isinstance(scores, AttentionScores) else scores
    return np.asarray(s, dtype=np.float64)


def _check_threshold(p):
    if not 0.0 < p < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {p}")


def _prefix_result(s, order, k) -> OracleResult:
    idx = np.asarray(order[:k], dtype=np.int64)
    return OracleResult(index_set=idx, budget=int(k), achieved_p=float(s[idx].sum()))


def descending_order(scores) -> np.ndarray:
    """Token indices by descending score, ties to the lower index."""
    return np.argsort(-_scores(scores), kind="stable")


def optimal_select(scores, threshold: float) -> OracleResult:
    """Fewest tokens reaching ``threshold``: greedy over descending true scores."""
    _check_threshold(threshold)
    s = _scores(scores)
    order = descending_order(s)
    return _prefix_result(s, order, minimal_prefix(s[order], threshold))


def cluster_optimal_select(scores, ranked: RankedOrder, threshold: float) -> OracleResult:
    """Shortest prefix of the cluster order whose true scores reach ``threshold``."""
    _check_threshold(threshold)
    s = _scores(scores)
    if s.shape[0] != ranked.n:
        raise ValidationError("scores and ranked order differ in length")
    return _prefix_result(s, ranked.order, minimal_prefix(s[ranked.order], threshold))


def fixed_budget_select(scores, ranked: RankedOrder, k: int) -> OracleResult:
    """First ``k`` tokens of the cluster order, regardless of their scores."""
    s = _scores(scores)
    if not 1 <= k <= ranked.n:
        raise ValidationError(f"budget k={k} outside [1, {ranked.n}]")
    return _prefix_result(s, ranked.order, int(k))

