"""Gaussian-mixture benchmark with a Zipf class prior.

Scores are the exact log posterior plus a class-level bias and i.i.d.
Gaussian noise. The non-class-separable regime additionally plants
confuser pairs whose scores are pushed apart by ``+-delta`` with a random
per-example sign, which creates threshold crossings for those pairs.
Generative parameters are kept on the result so exact posteriors can be
used as oracles.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import errors
from .shortlist import top_k_dense
from .types import ClassStats, Dataset, ScoreRecord, Similarity

CLASS_SEPARABLE = "class_separable"
NON_CLASS_SEPARABLE = "non_class_separable"
REGIMES = (CLASS_SEPARABLE, NON_CLASS_SEPARABLE)

# Scale on the class-level bias b_y = -bias_tau * c * log(pi_y); see README.
DEFAULT_BIAS_TAU = 6.9


@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 100
    dim: int = 10
    n_train: int = 5000
    n_test: int = 2000
    n_calib: int | None = None
    mean_scale: float = 0.5
    noise_var: float = 0.09
    bias_tau: float = DEFAULT_BIAS_TAU
    corruption_c: float = 0.1
    n_confusers: int = 0
    delta: float = 0.0
    perturb_k: int = 10
    tail_fraction: float = 0.5
    head_fraction: float = 0.2
    seed: int = 0
    regime: str = CLASS_SEPARABLE

    def __post_init__(self):
        if self.n_calib is None:
            object.__setattr__(self, "n_calib", self.n_train)
        if self.regime not in REGIMES:
            raise errors.InvalidSpec(f"regime must be one of {REGIMES}")
        if self.regime == CLASS_SEPARABLE and self.n_confusers != 0:
            raise errors.InvalidSpec("class-separable regime has no confuser pairs")
        if self.K < 2 or self.dim < 1 or self.n_calib < 1 or self.n_test < 1:
            raise errors.InvalidSpec("K >= 2, dim >= 1 and non-empty splits required")
        if self.mean_scale < 0 or self.noise_var < 0:
            raise errors.InvalidSpec("variances must be non-negative")
        n_tail = int(round(self.tail_fraction * self.K))
        n_head = int(round(self.head_fraction * self.K))
        if self.n_confusers > min(n_tail, n_head):
            raise errors.InvalidSpec("not enough tail/head classes for the confuser pairs")
        if not 1 <= self.perturb_k <= self.K:
            raise errors.InvalidSpec("perturb_k must lie in [1, K]")

    @classmethod
    def for_regime(cls, regime: str, **overrides) -> "SyntheticSpec":
        regime = regime.replace("-", "_")
        defaults = {}
        if regime == NON_CLASS_SEPARABLE:
            defaults = {"n_confusers": 15, "delta": 3.0}
        defaults.update(overrides)
        return cls(regime=regime, **defaults)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SyntheticDataset:
    spec: SyntheticSpec
    calib: Dataset
    test: Dataset
    means: np.ndarray
    prior: np.ndarray
    bias: np.ndarray
    confuser_pairs: tuple
    context_signs: np.ndarray  # (N, n_pairs) in {-1, 0, +1}; 0 = not perturbed
    inputs: np.ndarray  # (N, dim), row i belongs to example_id i
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return int(self.prior.shape[0])

    def log_posterior(self, x) -> np.ndarray:
        return log_posterior(self.means, self.prior, x)

    def inputs_for(self, example_ids) -> np.ndarray:
        return self.inputs[np.asarray(example_ids)]


def zipf_prior(K: int) -> np.ndarray:
    p = 1.0 / np.arange(1, K + 1)
    return p / p.sum()


def log_posterior(means, prior, x) -> np.ndarray:
    """Exact ``log P(Y = y | x)`` for unit-covariance Gaussian classes."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sq = (np.square(x).sum(1)[:, None] - 2 * x @ means.T
          + np.square(means).sum(1)[None, :])
    logits = np.log(prior)[None, :] - 0.5 * sq
    return logits - logsumexp(logits, axis=1, keepdims=True)


def true_posterior(ds: SyntheticDataset, x) -> np.ndarray:
    """Full posterior over all K classes; 1-D input gives a 1-D result."""
    x = np.asarray(x, dtype=float)
    out = np.exp(ds.log_posterior(x))
    return out[0] if x.ndim == 1 else out


def mean_similarity(means: np.ndarray) -> Similarity:
    """Cosine similarity of class means mapped affinely onto [0, 1]."""
    unit = means / np.linalg.norm(means, axis=1, keepdims=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = 0.5 * (1.0 + cos)
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return Similarity(sim, K=means.shape[0])


def _records(ids, labels, scores):
    return tuple(ScoreRecord(int(i), int(y), s) for i, y, s in zip(ids, labels, scores))


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw a dataset; identical specs give identical datasets."""
    rng = np.random.default_rng(spec.seed)
    K, N = spec.K, spec.n_calib + spec.n_test
    prior = zipf_prior(K)
    means = rng.normal(0.0, np.sqrt(spec.mean_scale), size=(K, spec.dim))
    labels = rng.choice(K, size=N, p=prior)
    inputs = means[labels] + rng.standard_normal((N, spec.dim))
    logpost = log_posterior(means, prior, inputs)
    bias = -spec.bias_tau * np.log(prior) * spec.corruption_c
    noise = rng.standard_normal((N, K)) * np.sqrt(spec.noise_var)
    scores = logpost + bias[None, :] + noise

    pairs = ()
    signs = np.zeros((N, 0), dtype=np.int8)
    if spec.n_confusers:
        by_prior = np.argsort(-prior, kind="stable")
        head = by_prior[:int(round(spec.head_fraction * K))]
        tail = by_prior[K - int(round(spec.tail_fraction * K)):]
        us = rng.choice(tail, size=spec.n_confusers, replace=False)
        vs = rng.choice(head, size=spec.n_confusers, replace=False)
        pairs = tuple((int(u), int(v)) for u, v in zip(us, vs))
        # co-occurrence is judged on the unperturbed shortlist
        top = top_k_dense(scores, spec.perturb_k)
        signs = np.zeros((N, len(pairs)), dtype=np.int8)
        for p, (u, v) in enumerate(pairs):
            both = (top == u).any(axis=1) & (top == v).any(axis=1)
            s = rng.choice(np.array([-1, 1], dtype=np.int8), size=N)
            signs[both, p] = s[both]
            scores[both, u] += s[both] * spec.delta
            scores[both, v] -= s[both] * spec.delta

    n_cal = spec.n_calib
    stats = ClassStats(np.bincount(labels[:n_cal], minlength=K))
    sim = mean_similarity(means)
    ids = np.arange(N)
    calib = Dataset(_records(ids[:n_cal], labels[:n_cal], scores[:n_cal]), stats, sim,
                    "calibration")
    test = Dataset(_records(ids[n_cal:], labels[n_cal:], scores[n_cal:]), stats, sim, "test")
    return SyntheticDataset(spec, calib, test, means, prior, bias, pairs, signs, inputs)


def save_sidecar(ds: SyntheticDataset, path) -> None:
    """Persist the generative truth needed by the oracles (``.npz``)."""
    np.savez(path, means=ds.means, prior=ds.prior, bias=ds.bias,
             confuser_pairs=np.array(ds.confuser_pairs, dtype=np.int64).reshape(-1, 2),
             context_signs=ds.context_signs, inputs=ds.inputs,
             spec=np.array(json.dumps(ds.spec.to_dict(), sort_keys=True)))


def load_sidecar(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        out = {key: z[key] for key in z.files}
    out["spec"] = SyntheticSpec(**json.loads(str(out["spec"])))
    out["confuser_pairs"] = tuple(map(tuple, out["confuser_pairs"].tolist()))
    return out


def attach_sidecar(calib: Dataset, test: Dataset, sidecar: dict) -> SyntheticDataset:
    """Rebuild a :class:`SyntheticDataset` from score files plus sidecar."""
    return SyntheticDataset(sidecar["spec"], calib, test, sidecar["means"], sidecar["prior"],
                            sidecar["bias"], sidecar["confuser_pairs"],
                            sidecar["context_signs"], sidecar["inputs"])
