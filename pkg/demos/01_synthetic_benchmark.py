#%% [markdown]
# # A synthetic long-tailed benchmark
#
# Classes are unit-variance Gaussians with a Zipf prior, so the exact
# posterior is known. The "base model" scores are that log posterior plus a
# class-level bias toward the tail and some i.i.d. noise. Everything later
# (shortlists, rerankers, oracles) is measured against this ground truth.

#%%
import numpy as np

from repair.baselines import base_scorer
from repair.diagnostics import BayesScorer
from repair.metrics import evaluate, unconditional
from repair.shortlist import build_shortlists, coverage
from repair.synth import SyntheticSpec, generate

ds = generate(SyntheticSpec(seed=0))
print(f"K={ds.K}, calibration={len(ds.calib)}, test={len(ds.test)}")
print("largest / smallest prior:", ds.prior.max().round(3), ds.prior.min().round(4))

#%% [markdown]
# Shortlists keep the top-k base scores. A reranker can only reorder what is
# on the list, so coverage caps every method's unconditional accuracy.

#%%
for k in (5, 10, 20, 50):
    batch = build_shortlists(ds.test, k)
    base = evaluate(batch, base_scorer, ds.test.stats)
    bayes = evaluate(batch, BayesScorer(ds), ds.test.stats)
    print(f"k={k:2d}  coverage={coverage(batch):.3f}  base Hit@1={base.hit1:.3f}  "
          f"Bayes Hit@1={bayes.hit1:.3f}  base unconditional={unconditional(base):.3f}")

#%% [markdown]
# The non-class-separable regime plants confuser pairs (tail u, head v) and
# pushes their scores apart by a random +-delta whenever both are shortlisted.

#%%
ncs = generate(SyntheticSpec.for_regime("non_class_separable", seed=0))
print("planted pairs:", ncs.confuser_pairs[:5], "...")
perturbed = (ncs.context_signs != 0).sum(axis=0)
print("examples perturbed per pair:", perturbed)
