"""Batch experiments: every selector on every (instance, query, threshold).

Instances come from a dump directory (``manifest.json``) or are generated on
the fly.  Per-instance work runs in a thread pool capped by the
``TACTIC_THREADS`` environment variable; results are always collected in
instance order, so output bytes do not depend on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .attention import approx_metrics, attention_scores
from .budget_fitting import SUCCESS_ATOL, FitConfig
from .clustering import ClusterConfig, kmeans, ranking_overhead_ratio
from .errors import ConfigError, InvariantViolation
from .gqa import group_select
from .kv_model import GQAGroup, SynthConfig, derive_seed, generate_synthetic, read_dump, read_manifest
from .oracles import cluster_optimal_select, descending_order, fixed_budget_select, optimal_select
from .ranking import rank_clusters

DEFAULT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
METHODS = ("optimal", "cluster_optimal", "tactic", "fixed")
BOUND_ATOL = 1e-6
TREND_LEVELS = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75)

CSV_COLUMNS = (
    ["layer", "head", "query", "group", "threshold", "n"]
    + [f"budget_{m}" for m in METHODS]
    + [f"p_{m}" for m in METHODS]
    + ["estimated_p_tactic", "success", "fallback"]
    + [f"eps_{m}" for m in METHODS]
    + [f"bound_{m}" for m in METHODS]
    + [f"kl_{m}" for m in METHODS]
    + ["union_size", "duplication_savings", "p_union", "eps_union"]
)


@dataclass
class RunConfig:
    """Everything a sweep needs.  Serializes to a flat JSON object."""

    input: str | None = None
    mode: str = "longtail"
    n: int = 4096
    d: int = 64
    m: int = 1
    heads: int = 8
    layers: int = 1
    cluster_count: int = 8
    tail_sharpness: float = 9.0
    jitter: float = 0.05
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    cluster_size: int = 16
    max_iters: int = 10
    exact_frac: float = 0.02
    p1: float = 0.10
    p2: float = 0.60
    window_frac: float = 0.01
    gqa_group_size: int = 0
    fixed_budget: int | None = None
    out: str | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if not self.thresholds:
            raise ConfigError("at least one threshold is required")
        for p in self.thresholds:
            self.fit_config(p).validate()
        ClusterConfig(self.cluster_size, self.max_iters).validate()
        if self.gqa_group_size < 0:
            raise ConfigError("gqa_group_size must be >= 0")
        if self.fixed_budget is not None and self.fixed_budget < 1:
            raise ConfigError("fixed_budget must be a positive integer")
        if self.input is None:
            if self.heads < 1 or self.layers < 1:
                raise ConfigError("heads and layers must be positive")
            self.synth_config(0, 0).validate()

    def fit_config(self, threshold) -> FitConfig:
        return FitConfig(threshold=float(threshold), exact_frac=self.exact_frac,
                         p1_frac=self.p1, p2_frac=self.p2, window_frac=self.window_frac)

    def cluster_config(self, layer, head, n=None) -> ClusterConfig:
        size = self.cluster_size if n is None else min(self.cluster_size, n)
        return ClusterConfig(size, self.max_iters, derive_seed(self.seed, layer, head, 1))

    def synth_config(self, layer, head) -> SynthConfig:
        return SynthConfig(n=self.n, d=self.d, m=self.m, seed=derive_seed(self.seed, layer, head),
                           mode=self.mode, cluster_count=self.cluster_count,
                           tail_sharpness=self.tail_sharpness, jitter=self.jitter)


@dataclass(frozen=True, eq=False)
class Instance:
    layer: int
    head: int
    dump: object  # HeadDump


def load_instances(cfg: RunConfig) -> list:
    if cfg.input is not None:
        src = Path(cfg.input)
        manifest = src / "manifest.json" if src.is_dir() else src
        return [Instance(e["layer"], e["head"], read_dump(e["path"])) for e in read_manifest(manifest)]
    return [
        Instance(layer, head, generate_synthetic(cfg.synth_config(layer, head)))
        for layer in range(cfg.layers)
        for head in range(cfg.heads)
    ]


def worker_count() -> int:
    raw = os.environ.get("TACTIC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"TACTIC_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def ordered_map(fn, items):
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# per-instance evaluation


@dataclass(eq=False)
class QueryEval:
    """One query of one instance: cached state plus one row per threshold."""

    layer: int
    head: int
    query: int
    group: int
    dump: object
    q: np.ndarray
    scores: object
    ranked: object
    rows: dict


def _metric_fields(row, method, metrics):
    row[f"p_{method}"] = metrics.p_of_I
    row[f"eps_{method}"] = metrics.epsilon
    row[f"bound_{method}"] = metrics.bound
    row[f"kl_{method}"] = metrics.kl


def _groups(m, size):
    # size 0 disables GQA: every query head is its own group.
    size = size or 1
    return [list(range(s, min(s + size, m))) for s in range(0, m, size)]


def evaluate_instance(inst: Instance, cfg: RunConfig) -> list:
    """Optimal, cluster-optimal and Tactic selection for every query of ``inst``.

    The fixed-budget columns are filled in later by :func:`add_fixed_budget`.
    """
    dump = inst.dump
    cl = kmeans(dump.keys, cfg.cluster_config(inst.layer, inst.head, dump.n))
    evals = []
    for g, members in enumerate(_groups(dump.m, cfg.gqa_group_size)):
        qs = [dump.query(j) for j in members]
        group = GQAGroup(dump, tuple(qs))
        cache = []
        for j, q in zip(members, qs):
            sc = attention_scores(dump, q)
            cache.append(QueryEval(inst.layer, inst.head, j, g, dump, q, sc, rank_clusters(cl, q), {}))
        for p in cfg.thresholds:
            sel = group_select(group, cl, cfg.fit_config(p))
            for qe, tac in zip(cache, sel.per_head):
                opt = optimal_select(qe.scores, p)
                clo = cluster_optimal_select(qe.scores, qe.ranked, p)
                row = {"layer": inst.layer, "head": inst.head, "query": qe.query, "group": g,
                       "threshold": float(p), "n": dump.n,
                       "budget_optimal": opt.budget, "budget_cluster_optimal": clo.budget,
                       "budget_tactic": tac.budget,
                       "estimated_p_tactic": tac.estimated_p,
                       "success": tac.achieved_p >= p - SUCCESS_ATOL,
                       "fallback": tac.fallback is not None}
                for name, idx in (("optimal", opt.index_set), ("cluster_optimal", clo.index_set),
                                  ("tactic", tac.index_set)):
                    _metric_fields(row, name, approx_metrics(dump, qe.q, idx, qe.scores))
                um = approx_metrics(dump, qe.q, sel.union_set, qe.scores)
                row.update(union_size=sel.union_size, duplication_savings=sel.duplication_savings,
                           p_union=um.p_of_I, eps_union=um.epsilon)
                qe.rows[float(p)] = row
        evals.extend(cache)
    return evals


def matched_fixed_budgets(evals, thresholds) -> dict:
    """Per-threshold fixed budget equal to the rounded mean Tactic budget."""
    out = {}
    for p in thresholds:
        b = [qe.rows[float(p)]["budget_tactic"] for qe in evals]
        out[float(p)] = max(1, int(np.floor(np.mean(b) + 0.5)))
    return out


def add_fixed_budget(evals, cfg: RunConfig) -> dict:
    budgets = (
        {float(p): cfg.fixed_budget for p in cfg.thresholds}
        if cfg.fixed_budget is not None
        else matched_fixed_budgets(evals, cfg.thresholds)
    )

    def one(qe):
        for p, k in budgets.items():
            res = fixed_budget_select(qe.scores, qe.ranked, min(k, qe.dump.n))
            row = qe.rows[p]
            row["budget_fixed"] = res.budget
            _metric_fields(row, "fixed", approx_metrics(qe.dump, qe.q, res.index_set, qe.scores))

    ordered_map(one, evals)
    return budgets


def records(evals, thresholds) -> list:
    """Rows in (instance, query, threshold) order."""
    return [qe.rows[float(p)] for qe in evals for p in thresholds]


def bound_violations(rows) -> list:
    bad = []
    for i, r in enumerate(rows):
        for m in METHODS:
            if f"eps_{m}" in r and r[f"eps_{m}"] > r[f"bound_{m}"] + BOUND_ATOL:
                bad.append((i, m, r[f"eps_{m}"], r[f"bound_{m}"]))
    return bad


def check_invariants(rows):
    """Raise :class:`InvariantViolation` on the first broken per-row invariant."""
    for i, r in enumerate(rows):
        where = f"row {i} (layer {r['layer']}, head {r['head']}, query {r['query']}, P={r['threshold']})"
        if r["budget_optimal"] > r["budget_cluster_optimal"]:
            raise InvariantViolation(f"{where}: optimal budget exceeds cluster-optimal")
        # Only a selection that actually reaches P is bound by the optimum.
        if r["success"] and r["budget_optimal"] > r["budget_tactic"]:
            raise InvariantViolation(f"{where}: tactic reached P with fewer tokens than optimal")
        if not r["budget_tactic"] <= r["union_size"]:
            raise InvariantViolation(f"{where}: union smaller than own selection")
        for m in METHODS:
            if not -1e-12 <= r[f"p_{m}"] <= 1.0 + 1e-12:
                raise InvariantViolation(f"{where}: p_{m} outside [0, 1]")
        for k, v in r.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise InvariantViolation(f"{where}: {k} is not finite")
    bad = bound_violations(rows)
    if bad:
        i, m, eps, bound = bad[0]
        raise InvariantViolation(f"row {i}: eps_{m}={eps:.9g} exceeds bound {bound:.9g}")


def run_sweep(cfg: RunConfig, instances=None):
    """Evaluate a batch.  Returns ``(rows, summary)``."""
    cfg.validate()
    if instances is None:
        instances = load_instances(cfg)
    per_inst = ordered_map(lambda inst: evaluate_instance(inst, cfg), instances)
    evals = [qe for block in per_inst for qe in block]
    fixed = add_fixed_budget(evals, cfg)
    rows = records(evals, cfg.thresholds)
    return rows, summarize(rows, cfg, fixed)


def summarize(rows, cfg: RunConfig, fixed_budgets) -> dict:
    per = {}
    for p in cfg.thresholds:
        sel = [r for r in rows if r["threshold"] == float(p)]
        col = lambda k: np.array([r[k] for r in sel], dtype=np.float64)  # noqa: E731
        per[f"{float(p):g}"] = {
            "optimal_budget": float(col("budget_optimal").mean()),
            "cluster_optimal_budget": float(col("budget_cluster_optimal").mean()),
            "tactic_budget": float(col("budget_tactic").mean()),
            "mean_achieved_p": float(col("p_tactic").mean()),
            "success_rate": float(col("success").mean()),
            "fixed_budget": int(fixed_budgets[float(p)]),
            "eps_std_tactic": float(col("eps_tactic").std()),
            "eps_std_fixed": float(col("eps_fixed").std()),
            "mean_union_size": float(col("union_size").mean()),
        }
    return {
        "records": len(rows),
        "thresholds": [float(p) for p in cfg.thresholds],
        "ranking_overhead_ratio": ranking_overhead_ratio(cfg.cluster_size),
        "per_threshold": per,
    }


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_outputs(rows, summary, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"
    json_path = out / "summary.json"
    csv_path.write_text(csv_text(rows))
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# --------------------------------------------------------------------------
# nested-prefix trend


def nested_prefix_trend(instances, levels=TREND_LEVELS) -> dict:
    """Mean distance and KL for growing prefixes of the exact descending order.

    Every instance/query contributes one selection per budget level (a
    fraction of ``n``); the prefixes are nested by construction.
    """
    eps = np.zeros(len(levels))
    kl = np.zeros(len(levels))
    count = 0

    def one(inst):
        d = inst.dump
        out = []
        for j in range(d.m):
            q = d.query(j)
            sc = attention_scores(d, q)
            order = descending_order(sc)
            row = []
            for f in levels:
                k = min(d.n, max(1, int(np.ceil(f * d.n))))
                mt = approx_metrics(d, q, order[:k], sc)
                row.append((mt.epsilon, mt.kl))
            out.append(row)
        return out

    for block in ordered_map(one, instances):
        for row in block:
            a = np.array(row)
            eps += a[:, 0]
            kl += a[:, 1]
            count += 1
    eps /= count
    kl /= count
    rho = float(spearmanr(eps, kl).statistic) if len(levels) > 1 else 1.0
    return {
        "levels": list(levels),
        "mean_eps": eps.tolist(),
        "mean_kl": kl.tolist(),
        "eps_monotone": bool(np.all(np.diff(eps) <= 1e-12)),
        "kl_monotone": bool(np.all(np.diff(kl) <= 1e-12)),
        "spearman": rho,
    }
