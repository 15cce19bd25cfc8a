#%% [markdown]
# # Empirical-Bayes shrinkage of class offsets
#
# Offsets of classes with few covered calibration examples are noisy. Each
# offset is pulled toward its group mean with weight nu^2 / (nu^2 + sigma^2),
# where sigma^2 = 1 / (n + 1) shrinks with the class count.

#%%
import numpy as np

from repair.shrinkage import ShrinkageGroups, covered_label_counts, estimate_variances, shrink

rng = np.random.default_rng(0)
K = 12
counts = np.array([400, 200, 120, 80, 50, 30, 20, 10, 5, 2, 1, 0])
a_hat = rng.normal(0.0, 1.0, K) + rng.normal(0.0, 1.0, K) / np.sqrt(counts + 1)

for n_groups in (1, 3):
    groups = ShrinkageGroups.by_frequency(counts, n_groups)
    s2, mu, nu2 = estimate_variances(a_hat, counts, groups)
    a = shrink(a_hat, s2, mu, nu2, groups)
    print(f"{n_groups} group(s): mu={mu.round(2)}, nu2={nu2.round(2)}")
    for c in (0, 5, 10, 11):
        print(f"  class {c:2d} n={counts[c]:3d}  {a_hat[c]:+.3f} -> {a[c]:+.3f}")

#%% [markdown]
# On real calibration data the counts are covered labels, so classes that
# never make it onto a shortlist get the strongest pull.

#%%
from repair.shortlist import build_shortlists
from repair.synth import SyntheticSpec, generate

ds = generate(SyntheticSpec(seed=2))
batch = build_shortlists(ds.calib, 10).covered_only()
n = covered_label_counts(batch.labels, ds.K)
print("covered counts, head:", n[:5], "tail:", n[-5:])
