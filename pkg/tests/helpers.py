"""Shared corpus builders for the test suite."""

import numpy as np

from ccrk.corpus import MultilingualCorpus
from ccrk.numerics import normalize_rows


def uniform_corpus(n, k, d):
    """Every embedding is the same unit vector (uniform logits everywhere)."""
    e = np.zeros((n, d))
    e[:, 0] = 1.0
    texts = np.tile(e[:, None, :], (1, k, 1))
    return MultilingualCorpus(
        image_embeddings=e,
        text_embeddings=texts,
        language_codes=[f"l{i}" for i in range(k)],
        instance_ids=[f"i{j}" for j in range(n)],
        normalized=True,
    )


def random_corpus(n, k, d, seed):
    gen = np.random.default_rng(seed)
    return MultilingualCorpus(
        image_embeddings=normalize_rows(gen.standard_normal((n, d))),
        text_embeddings=normalize_rows(gen.standard_normal((n, k, d))),
        language_codes=[f"l{i}" for i in range(k)],
        instance_ids=[f"i{j}" for j in range(n)],
        normalized=True,
    )


def corpus_from_arrays(images, texts):
    images = np.asarray(images, dtype=np.float64)
    texts = np.asarray(texts, dtype=np.float64)
    n, k = texts.shape[0], texts.shape[1]
    return MultilingualCorpus(
        image_embeddings=images,
        text_embeddings=texts,
        language_codes=[f"l{i}" for i in range(k)],
        instance_ids=[f"i{j}" for j in range(n)],
        normalized=True,
    )
