"""
Budgets across thresholds
=========================

Mean budget of the three selectors and the measured success rate for
several thresholds P, over a batch of synthetic long-tailed heads.
"""

from tactic import harness
from tactic.harness import RunConfig

# %%
# 40 heads keeps this under half a minute on one core.  The acceptance
# suite runs the same experiment with 200 heads.
cfg = RunConfig(n=4096, d=64, heads=40, mode="longtail", seed=0)
rows, summary = harness.run_sweep(cfg)

# %%
# Optimal <= cluster-optimal always; the estimate lands close to the
# cluster optimum, sometimes below it (then P is missed), mostly above.
print(" P    optimal  cluster-opt   tactic  achieved  success")
for key, s in summary["per_threshold"].items():
    print(f"{key:>4} {s['optimal_budget']:9.1f} {s['cluster_optimal_budget']:12.1f} "
          f"{s['tactic_budget']:8.1f} {s['mean_achieved_p']:9.3f} {s['success_rate']:8.2f}")

# %%
# Loading centroids costs 1 / (2 * cluster size) of the KV cache traffic.
print("ranking overhead ratio:", summary["ranking_overhead_ratio"])

# %%
# With a fixed budget equal to the mean adaptive budget, the attention
# distance spreads more widely across heads at most thresholds.
for key, s in summary["per_threshold"].items():
    print(f"P={key}: fixed k={s['fixed_budget']}, std eps tactic {s['eps_std_tactic']:.4f}, "
          f"fixed {s['eps_std_fixed']:.4f}")
