"""
Attention distance, its bound, and KL
=====================================

For a selected set I with cumulative score p(I), the distance between full
and sparse attention outputs never exceeds 2 (1 - p(I)) max ||v_i||.  Here
growing prefixes of the exact order are checked against the bound, and the
mean distance is compared with the mean KL divergence of the scores.
"""

import numpy as np

from tactic import SynthConfig, approx_metrics, attention_scores, generate_synthetic, harness
from tactic.harness import Instance
from tactic.oracles import descending_order

# %%
# One head, prefixes of increasing length.
head = generate_synthetic(SynthConfig(n=2048, d=64, seed=11, mode="longtail"))
q = head.query(0)
sc = attention_scores(head, q)
order = descending_order(sc)
for k in (8, 32, 128, 512, 2048):
    mt = approx_metrics(head, q, order[:k], sc)
    print(f"k={k:5d}  p={mt.p_of_I:.3f}  eps={mt.epsilon:.5f}  bound={mt.bound:.5f}  KL={mt.kl:.4f}")

# %%
# Over a small batch, mean distance and mean KL fall together.
instances = [Instance(0, h, generate_synthetic(SynthConfig(n=2048, d=64, seed=h, mode="longtail")))
             for h in range(20)]
tr = harness.nested_prefix_trend(instances)
for f, e, kl in zip(tr["levels"], tr["mean_eps"], tr["mean_kl"]):
    print(f"prefix {f:6.3f} n  mean eps {e:.4f}  mean KL {kl:.3f}")
print("Spearman(mean eps, mean KL) =", round(tr["spearman"], 4))
print("monotone:", tr["eps_monotone"], tr["kl_monotone"], np.isfinite(tr["mean_kl"]).all())
