"""Sparsity-adaptive token selection for decode attention.

Keys are clustered with K-means; each query ranks clusters by centroid dot
product; a two-point ``a/x + b`` fit of the ranked exp-weights estimates how
many tokens are needed to reach a target share ``P`` of the attention mass.
Exact oracles, a fixed-budget baseline and the worst-case distance bound are
included for evaluation.
"""

from .attention import (
    ApproxMetrics,
    AttentionScores,
    approx_metrics,
    attention_scores,
    cumulative_score,
    error_bound,
    full_attention,
    kl_divergence,
    sparse_attention,
)
from .budget_fitting import (
    FitConfig,
    FitFallback,
    FitParams,
    SelectionResult,
    budget_select,
    exp_weights,
    fit_curve,
    fit_distribution,
    oracle_gap,
)
from .clustering import ClusterConfig, Clustering, assign_token, kmeans, ranking_overhead_ratio
from .errors import ConfigError, DumpFormatError, InvariantViolation, TacticError, ValidationError
from .gqa import GroupSelection, group_select
from .kv_model import GQAGroup, HeadDump, SynthConfig, generate_synthetic, read_dump, write_dump
from .oracles import OracleResult, cluster_optimal_select, fixed_budget_select, optimal_select
from .ranking import RankedOrder, rank_clusters, ranked_from_order, sort_fidelity

__version__ = "0.1.0"
