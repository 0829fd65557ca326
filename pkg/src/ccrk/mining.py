"""Hard positive / hard negative sampling distributions.

The hardest positive text is the one aligning worst with its own image; the
hardest negatives are the best-aligned wrong candidates. Weights derive from
raw cosine similarities, which can be negative, so similarities are first
shifted to be nonnegative (plus a small epsilon) before normalization. The
softmax alternative weights by exp(similarity) instead; select it with
weighting="softmax".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import MultilingualCorpus
from .errors import DegenerateBatch, InvalidConfig
from .numerics import Rng

SHIFT_EPSILON = 1e-6

HARD_POSITIVE_TEXT = "hard_positive_text"
HARD_NEGATIVE_IMAGE = "hard_negative_image"
HARD_NEGATIVE_TEXT = "hard_negative_text"

WEIGHTINGS = ("linear_shift", "softmax")


@dataclass
class MiningDistribution:
    """Normalized multinomial over candidate indices.

    For text kinds the support holds flattened indices n * K + k; use
    unflatten_text_index to recover the (instance, language) pair.
    """

    weights: np.ndarray
    support: np.ndarray
    kind: str

    def validate(self) -> None:
        if self.weights.shape != self.support.shape:
            raise InvalidConfig("weights and support must have equal length")
        if np.any(self.weights < 0):
            raise InvalidConfig("negative mining weight")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise InvalidConfig(f"mining weights sum to {self.weights.sum()!r}, not 1")


@dataclass
class MinedSamples:
    """One hard positive text, hard negative text, and hard negative image per instance."""

    positive_language: list[int]               # k_pos per instance
    negative_text: list[tuple[int, int]]       # (instance, language) per instance
    negative_image: list[int]                  # instance index per instance


def _shift_nonnegative(sims: np.ndarray) -> np.ndarray:
    low = min(0.0, float(np.min(sims)))
    return sims - low + SHIFT_EPSILON


def hard_positive_dist(sims: np.ndarray, weighting: str = "linear_shift") -> MiningDistribution:
    """Distribution over a single instance's K languages, favouring low similarity.

    sims[k] is the cosine similarity of text k with its own image. The raw
    linear weights are 1 - s_k / sum(s) after the nonnegativity shift; they
    total K - 1, so they are divided by K - 1 (K = 1 degenerates to a point
    mass).
    """
    sims = np.asarray(sims, dtype=np.float64).ravel()
    k = sims.size
    if k < 1:
        raise DegenerateBatch("no languages to mine a positive from")
    support = np.arange(k)
    if k == 1:
        return MiningDistribution(np.array([1.0]), support, HARD_POSITIVE_TEXT)
    if weighting == "softmax":
        weights = _softmax(-sims)
    elif weighting == "linear_shift":
        s = _shift_nonnegative(sims)
        raw = 1.0 - s / s.sum()
        weights = raw / raw.sum()
    else:
        raise InvalidConfig(f"unknown mining weighting {weighting!r}")
    dist = MiningDistribution(weights, support, HARD_POSITIVE_TEXT)
    dist.validate()
    return dist


def _negative_dist(raw_sims: np.ndarray, support: np.ndarray, kind: str,
                   weighting: str) -> MiningDistribution:
    if weighting == "softmax":
        weights = _softmax(raw_sims)
    elif weighting == "linear_shift":
        s = _shift_nonnegative(raw_sims)
        weights = s / s.sum()
    else:
        raise InvalidConfig(f"unknown mining weighting {weighting!r}")
    dist = MiningDistribution(weights, support, kind)
    dist.validate()
    return dist


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / e.sum()


def hard_negative_image_dist(corpus: MultilingualCorpus, j: int,
                             weighting: str = "linear_shift") -> MiningDistribution:
    """Distribution over images j' != j, weighted by total similarity to j's texts."""
    n = corpus.n_instances
    if n < 2:
        raise DegenerateBatch("need at least two instances for negative mining")
    agg = corpus.text_embeddings[j] @ corpus.image_embeddings.T  # (K, N)
    agg = agg.sum(axis=0)
    support = np.array([i for i in range(n) if i != j])
    return _negative_dist(agg[support], support, HARD_NEGATIVE_IMAGE, weighting)


def hard_negative_text_dist(corpus: MultilingualCorpus, j: int,
                            weighting: str = "linear_shift") -> MiningDistribution:
    """Distribution over texts (n, k) with n != j, weighted by similarity to image j.

    Support entries are flattened n * K + k.
    """
    n, k = corpus.n_instances, corpus.n_languages
    if n < 2:
        raise DegenerateBatch("need at least two instances for negative mining")
    sims = (corpus.text_matrix() @ corpus.image_embeddings[j]).reshape(n, k)
    keep = np.array([i for i in range(n) if i != j])
    support = (keep[:, None] * k + np.arange(k)[None, :]).ravel()
    return _negative_dist(sims[keep].ravel(), support, HARD_NEGATIVE_TEXT, weighting)


def unflatten_text_index(flat: int, n_languages: int) -> tuple[int, int]:
    return int(flat) // n_languages, int(flat) % n_languages


def sample(dist: MiningDistribution, rng: Rng) -> int:
    """Draw one support index with the distribution's probabilities."""
    dist.validate()
    u = rng.gen.random()
    cum = np.cumsum(dist.weights)
    pos = int(np.searchsorted(cum, u, side="right"))
    pos = min(pos, dist.support.size - 1)
    return int(dist.support[pos])


def mine_batch(corpus: MultilingualCorpus, rng: Rng,
               weighting: str = "linear_shift") -> MinedSamples:
    """One hard positive / negative draw per instance, in instance order."""
    pos, neg_t, neg_i = [], [], []
    own_sims = np.einsum("nkd,nd->nk", corpus.text_embeddings, corpus.image_embeddings)
    for j in range(corpus.n_instances):
        pos.append(sample(hard_positive_dist(own_sims[j], weighting), rng))
        flat = sample(hard_negative_text_dist(corpus, j, weighting), rng)
        neg_t.append(unflatten_text_index(flat, corpus.n_languages))
        neg_i.append(sample(hard_negative_image_dist(corpus, j, weighting), rng))
    return MinedSamples(pos, neg_t, neg_i)
