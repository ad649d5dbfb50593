"""Shared token set for a group of query heads attending to one KV head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .budget_fitting import FitConfig, SelectionResult, budget_select
from .clustering import Clustering
from .kv_model import GQAGroup
from .ranking import rank_clusters


@dataclass(frozen=True, eq=False)
class GroupSelection:
    per_head: tuple
    union_set: np.ndarray

    @property
    def union_size(self) -> int:
        return int(self.union_set.shape[0])

    @property
    def duplication_savings(self) -> float:
        """Share of per-head loads avoided by loading the union once."""
        total = sum(r.budget for r in self.per_head)
        return (total - self.union_size) / total


def union_of(selections) -> np.ndarray:
    sets = [np.asarray(r.index_set, dtype=np.int64) for r in selections]
    return np.unique(np.concatenate(sets)) if sets else np.empty(0, dtype=np.int64)


def group_select(group: GQAGroup, clustering: Clustering, cfg: FitConfig) -> GroupSelection:
    """Select per query head against the shared clustering, then take the union.

    The union is a heuristic: the smallest set meeting every head's
    threshold is an NP-hard cover problem.
    """
    per_head: list[SelectionResult] = []
    for q in group.group_queries:
        ranked = rank_clusters(clustering, q)
        per_head.append(budget_select(group.kv_head, q, ranked, cfg))
    return GroupSelection(per_head=tuple(per_head), union_set=union_of(per_head))
