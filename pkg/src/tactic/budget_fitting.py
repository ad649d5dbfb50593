"""Token-budget estimation by fitting ``y = a/x + b`` to ranked exp-weights.

Along the cluster-ranked order, the first ``N`` tokens (the outlier-prone
head) and two narrow sampling windows are scored exactly.  The two window
means pin down ``a`` and ``b``; every other position is filled in from the
curve.  The budget is the shortest prefix whose simulated weight reaches
``P`` of the simulated total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import attention_scores, logits
from .errors import ConfigError, ValidationError
from .kv_model import HeadDump
from .oracles import minimal_prefix
from .ranking import RankedOrder


@dataclass(frozen=True)
class FitConfig:
    """Selection threshold ``P`` and the sampling geometry.

    All positions are fractions of the context length ``n``.  A
    ``window_frac`` of 0 means single-token windows; any positive value gives
    a half-width of at least one token.
    """

    threshold: float = 0.9
    exact_frac: float = 0.02
    p1_frac: float = 0.10
    p2_frac: float = 0.60
    window_frac: float = 0.01

    def validate(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 < self.p1_frac < self.p2_frac < 1.0:
            raise ConfigError("need 0 < p1_frac < p2_frac < 1")
        if not 0.0 <= self.exact_frac <= 1.0:
            raise ConfigError("exact_frac must lie in [0, 1]")
        if not 0.0 <= self.window_frac < 0.5:
            raise ConfigError("window_frac must lie in [0, 0.5)")


@dataclass(frozen=True)
class FitParams:
    a: float
    b: float
    n_exact: int
    mu1: float
    mu2: float
    x1: int
    x2: int

    def curve(self, x):
        return self.a / np.asarray(x, dtype=np.float64) + self.b


@dataclass(frozen=True, eq=False)
class SelectionResult:
    index_set: np.ndarray
    budget: int
    estimated_p: float
    achieved_p: float
    threshold: float
    params: FitParams | None = None
    fallback: str | None = None


# Cumulative scores within this of P still count as reaching it.
SUCCESS_ATOL = 1e-12


class FitFallback(Exception):
    """The two-point fit is not usable; callers score every token instead."""


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def sampling_plan(n: int, cfg: FitConfig):
    """``(N, [(lo, hi, center), (lo, hi, center)])`` with 1-based inclusive ranks.

    Raises :class:`FitFallback` when the windows overlap each other or the
    exact head, or run past ``n``.
    """
    n_exact = max(1, _round(cfg.exact_frac * n))
    half = 0 if cfg.window_frac == 0 else max(1, _round(cfg.window_frac * n))
    wins = []
    for frac in (cfg.p1_frac, cfg.p2_frac):
        c = _round(frac * n)
        wins.append((c - half, c + half, c))
    (lo1, hi1, _), (lo2, hi2, _) = wins
    if lo1 <= n_exact:
        raise FitFallback(f"first window [{lo1}, {hi1}] overlaps the exact head (N={n_exact})")
    if hi1 >= lo2:
        raise FitFallback(f"windows [{lo1}, {hi1}] and [{lo2}, {hi2}] overlap")
    if hi2 > n:
        raise FitFallback(f"second window [{lo2}, {hi2}] runs past n={n}")
    return n_exact, wins


def solve_two_point(x1, mu1, x2, mu2):
    """``(a, b)`` of the curve ``a/x + b`` through ``(x1, mu1)`` and ``(x2, mu2)``."""
    a = (mu1 - mu2) * x1 * x2 / (x2 - x1)
    return a, mu1 - a / x1


def _fit(sample, n, cfg) -> FitParams:
    n_exact, wins = sampling_plan(n, cfg)
    mus = [float(np.mean(sample(np.arange(lo - 1, hi)))) for lo, hi, _ in wins]
    (_, _, x1), (_, _, x2) = wins
    a, b = solve_two_point(x1, mus[0], x2, mus[1])
    return FitParams(a=a, b=b, n_exact=n_exact, mu1=mus[0], mu2=mus[1], x1=x1, x2=x2)


def fit_curve(ranked_weights, cfg: FitConfig) -> FitParams:
    """Fit from a full array of weights already laid out in ranked order."""
    w = np.asarray(ranked_weights, dtype=np.float64)
    cfg.validate()
    return _fit(lambda pos: w[pos], w.shape[0], cfg)


def exp_weights(head: HeadDump, query, indices) -> np.ndarray:
    """``exp(q.k_i / sqrt(d) - L)`` for the given tokens, ``L`` the max logit over all tokens."""
    z = logits(head, query)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= head.n):
        raise ValidationError(f"token indices outside [0, {head.n})")
    return np.exp(z[idx] - z.max())


def _check_ranked(head, ranked):
    if ranked.n != head.n:
        raise ValidationError(f"ranked order has {ranked.n} tokens, head has {head.n}")


def fit_distribution(head: HeadDump, query, ranked: RankedOrder, cfg: FitConfig) -> FitParams:
    """Fit ``a/x + b`` to the exp-weights sampled along ``ranked``.

    Only the tokens in the two sampling windows are scored.
    """
    cfg.validate()
    _check_ranked(head, ranked)
    return _fit(lambda pos: exp_weights(head, query, ranked.order[pos]), head.n, cfg)


def simulated_weights(params: FitParams, n, exact_at) -> np.ndarray:
    """Curve values at ranks 1..n, clamped at 0, overridden by ``exact_at``.

    ``exact_at`` maps 0-based ranked positions to exact weights.
    """
    w = np.maximum(params.curve(np.arange(1, n + 1)), 0.0)
    pos, val = exact_at
    w[pos] = val
    return w


def budget_select(head: HeadDump, query, ranked: RankedOrder, cfg: FitConfig) -> SelectionResult:
    """Estimate the budget for ``cfg.threshold`` and select that prefix of ``ranked``.

    Falls back to exact weights for every token (cluster-optimal selection)
    when the fit is unusable: windows that do not fit in ``n`` or window
    means that do not decay (``mu1 <= mu2``).
    """
    cfg.validate()
    _check_ranked(head, ranked)
    n = head.n
    order = ranked.order
    params = None
    fallback = None
    try:
        params = fit_distribution(head, query, ranked, cfg)
        if not params.mu1 > params.mu2:
            raise FitFallback(f"non-decaying samples: mu1={params.mu1:.6g} <= mu2={params.mu2:.6g}")
    except FitFallback as exc:
        params, fallback = None, str(exc)

    if params is None:
        sim = exp_weights(head, query, order)
    else:
        _, wins = sampling_plan(n, cfg)
        pos = np.concatenate(
            [np.arange(params.n_exact)] + [np.arange(lo - 1, hi) for lo, hi, _ in wins]
        )
        sim = simulated_weights(params, n, (pos, exp_weights(head, query, order[pos])))

    k = minimal_prefix(sim, cfg.threshold)
    idx = order[:k].copy()
    scores = attention_scores(head, query).scores
    return SelectionResult(
        index_set=idx,
        budget=k,
        estimated_p=float(sim[:k].sum() / sim.sum()),
        achieved_p=float(scores[idx].sum()),
        threshold=cfg.threshold,
        params=params,
        fallback=fallback,
    )


def oracle_gap(result: SelectionResult, true_scores, optimal_budget=None, cluster_optimal_budget=None) -> dict:
    """Budget, achieved share and success flag for one selection.

    ``budget_ratio_*`` are included when the matching oracle budget is given.
    """
    s = np.asarray(getattr(true_scores, "scores", true_scores), dtype=np.float64)
    idx = np.asarray(result.index_set, dtype=np.int64)
    if idx.size and idx.max() >= s.shape[0]:
        raise ValidationError("index set does not fit the score vector")
    achieved = float(s[idx].sum())
    out = {
        "budget": int(result.budget),
        "achieved_p": achieved,
        "success": achieved >= result.threshold - SUCCESS_ATOL,
    }
    if optimal_budget is not None:
        out["budget_ratio_optimal"] = result.budget / optimal_budget
    if cluster_optimal_budget is not None:
        out["budget_ratio_cluster_optimal"] = result.budget / cluster_optimal_budget
    return out
