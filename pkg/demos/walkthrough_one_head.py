"""
Selecting tokens for one decode query
=====================================

Build a long-tailed head, cluster its keys, rank the clusters for one query
and estimate how many tokens are needed to cover 80% of the attention mass.
The estimate is compared against the two exact oracles.
"""

import numpy as np

from tactic import (
    ClusterConfig,
    FitConfig,
    SynthConfig,
    approx_metrics,
    attention_scores,
    budget_select,
    cluster_optimal_select,
    generate_synthetic,
    kmeans,
    optimal_select,
    rank_clusters,
)

# %%
# A head with n = 4096 cached tokens whose sorted attention weights follow
# a/x + b with a little multiplicative noise.
head = generate_synthetic(SynthConfig(n=4096, d=64, seed=3, mode="longtail"))
q = head.query(0)
scores = attention_scores(head, q)
print("largest score %.4f, 100-th largest %.2e" % (scores.scores.max(), np.sort(scores.scores)[-100]))

# %%
# Keys are clustered once, when the context is prefilled; average cluster
# size 16 gives 256 centroids.
clustering = kmeans(head.keys, ClusterConfig(avg_cluster_size=16))
print("clusters:", clustering.n_clusters, "Lloyd iterations:", clustering.n_iter)

# %%
# At decode time only the centroids are scored.  Unpacking the clusters in
# descending centroid.query order gives a rough sort of all tokens.
ranked = rank_clusters(clustering, q)

# %%
# The budget estimate scores the first 2% of the ranked tokens plus two
# narrow windows around ranks 10% and 60%, and extrapolates the rest.
P = 0.8
sel = budget_select(head, q, ranked, FitConfig(threshold=P))
print("fit: a = %.4g, b = %.4g" % (sel.params.a, sel.params.b))
print("estimated p = %.3f, achieved p = %.3f" % (sel.estimated_p, sel.achieved_p))

# %%
# The exact oracles need every score.  The global optimum sorts by true
# score; the cluster optimum takes the shortest ranked prefix.
opt = optimal_select(scores, P)
clo = cluster_optimal_select(scores, ranked, P)
for name, idx, k in (("optimal", opt.index_set, opt.budget),
                     ("cluster-optimal", clo.index_set, clo.budget),
                     ("tactic", sel.index_set, sel.budget)):
    mt = approx_metrics(head, q, idx, scores)
    print(f"{name:>16}: {k:5d} tokens  eps {mt.epsilon:.4f}  bound {mt.bound:.4f}  KL {mt.kl:.3f}")
